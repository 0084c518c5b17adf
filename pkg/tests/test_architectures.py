import numpy as np
import pytest

from timeconv.architectures import (
    PARAM_ORDER,
    REFERENCE_PARAMS,
    ArchId,
    adapt_stacks,
    build_network,
    count_params,
    forward,
    input_shape,
    param_breakdown,
)
from timeconv.tensor import DimensionError, make_rng


# Closed-form counts written out from the layer tables, independent of the builders.

def bn(c):
    return 2 * c


def xception_count(cin, running=False):
    b = (lambda c: 4 * c) if running else bn
    total = 9 * cin * 8 + b(8) + 9 * 8 * 8 + b(8)
    ch = 8
    for f in (16, 32, 64, 128):
        total += ch * f + b(f)  # 1x1 shortcut
        total += 9 * ch + ch * f + b(f)  # separable 1
        total += 9 * f + f * f + b(f)  # separable 2
        ch = f
    return total + 9 * 128 * 7 + 7


def resnet20_count(cin, kind):
    conv = {
        "2d": lambda a, b: 9 * a * b,
        "3d": lambda a, b: 27 * a * b,
        "2plus1d": lambda a, b: 9 * a * b + 3 * b * b,
    }[kind]
    total = conv(cin, 16) + bn(16)
    ch = 16
    for stage, f in enumerate((16, 32, 64)):
        for block in range(3):
            total += conv(ch, f) + bn(f) + conv(f, f) + bn(f)
            if ch != f:
                total += ch * f + f
            ch = f
    return total + 64 * 7 + 7


def mobilenetv2_count(cin):
    total = 9 * cin * 32 + bn(32)
    ch = 32
    for e, f, n, _ in ((1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2),
                       (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)):
        for _ in range(n):
            h = ch * e
            if e != 1:
                total += ch * h + bn(h)
            total += 9 * h + bn(h) + h * f + bn(f)
            ch = f
    return total + ch * 1280 + bn(1280) + 1280 * 7 + 7


EXPECTED = {
    ArchId.XCEPTION2D: xception_count(1),
    ArchId.TIMECONV_XCEPTION: xception_count(5),
    ArchId.TIMECONV_RESNET20: resnet20_count(5, "2d"),
    ArchId.RESNET20_3D: resnet20_count(1, "3d"),
    ArchId.RESNET20_2PLUS1D: resnet20_count(1, "2plus1d"),
    ArchId.TIMECONV_MOBILENETV2: mobilenetv2_count(5),
}

# frozen values of the formulas above
FROZEN = {
    ArchId.XCEPTION2D: 56_951,
    ArchId.TIMECONV_XCEPTION: 57_239,
    ArchId.TIMECONV_RESNET20: 272_471,
    ArchId.RESNET20_3D: 806_711,
    ArchId.RESNET20_2PLUS1D: 369_431,
    ArchId.TIMECONV_MOBILENETV2: 2_233_415,
}


@pytest.fixture(scope="module")
def nets():
    return {arch: build_network(arch, 0) for arch in ArchId}


def test_formulas_frozen():
    assert EXPECTED == FROZEN


@pytest.mark.parametrize("arch", list(ArchId))
def test_param_counts(nets, arch):
    assert count_params(nets[arch]) == EXPECTED[arch]


def test_xception_total_with_running_stats_matches_reference(nets):
    # counting BN moving statistics reproduces the published mini-Xception totals
    for arch in (ArchId.XCEPTION2D, ArchId.TIMECONV_XCEPTION):
        assert count_params(nets[arch], include_running_stats=True) == REFERENCE_PARAMS[arch]
    assert xception_count(1, running=True) == 58_423
    assert count_params(nets[ArchId.TIMECONV_MOBILENETV2], include_running_stats=True) == 2_267_527


def test_encoding_layer_delta(nets):
    assert count_params(nets[ArchId.TIMECONV_XCEPTION]) - count_params(nets[ArchId.XCEPTION2D]) == 288


def test_param_ordering(nets):
    counts = [count_params(nets[a]) for a in PARAM_ORDER]
    assert counts == sorted(counts) and len(set(counts)) == len(counts)
    ref = [REFERENCE_PARAMS[a] for a in PARAM_ORDER]
    assert ref == sorted(ref)


@pytest.mark.parametrize("arch", list(ArchId))
def test_forward_shapes(nets, arch):
    x = make_rng(1).random((2, *input_shape(arch)), dtype=np.float32)
    out = forward(nets[arch], x)
    assert out.shape == (2, 7) and out.dtype == np.float32 and np.all(np.isfinite(out))


def test_input_contracts():
    assert input_shape("xception2d") == (1, 48, 48)
    assert input_shape("timeconv_resnet20") == (5, 48, 48)
    assert input_shape("resnet20_3d") == (1, 5, 48, 48)


def test_wrong_input_shape_is_rejected(nets):
    with pytest.raises(DimensionError, match="expects input"):
        forward(nets[ArchId.TIMECONV_XCEPTION], np.zeros((1, 1, 48, 48), np.float32))
    with pytest.raises(DimensionError):
        forward(nets[ArchId.RESNET20_3D], np.zeros((1, 5, 48, 48), np.float32))


def test_adapt_stacks():
    stacks = np.arange(2 * 5 * 48 * 48, dtype=np.float32).reshape(2, 5, 48, 48)
    assert np.array_equal(adapt_stacks("xception2d", stacks), stacks[:, 4:5])
    assert adapt_stacks("resnet20_2plus1d", stacks).shape == (2, 1, 5, 48, 48)
    assert adapt_stacks("timeconv_mobilenetv2", stacks) is stacks
    with pytest.raises(DimensionError):
        adapt_stacks("xception2d", stacks[0])


def test_unknown_arch():
    with pytest.raises(ValueError):
        build_network("resnet50")


def test_build_is_seeded():
    a = build_network("timeconv_xception", 3).snapshot()
    b = build_network("timeconv_xception", 3).snapshot()
    c = build_network("timeconv_xception", 4).snapshot()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)


def test_time_mixing_in_first_layer(nets):
    # the encoding layer's filters span all five frames
    name, shape, _ = param_breakdown(nets[ArchId.TIMECONV_XCEPTION])[0]
    assert shape == (8, 5, 3, 3)
    net = nets[ArchId.TIMECONV_XCEPTION]
    x = make_rng(2).random((1, 5, 48, 48), dtype=np.float32)
    y = x.copy()
    y[0, 0] = make_rng(3).random((48, 48))
    assert not np.allclose(forward(net, x), forward(net, y))


def test_load_state_validation(nets):
    net = build_network("xception2d", 1)
    state = nets[ArchId.XCEPTION2D].snapshot()
    net.load_state(state)
    assert np.array_equal(net.state()["0.weight"], state["0.weight"])
    with pytest.raises(KeyError):
        net.load_state({k: v for k, v in state.items() if k != "0.weight"})
    bad = dict(state)
    bad["0.weight"] = np.zeros((1,))
    with pytest.raises(DimensionError):
        net.load_state(bad)


@pytest.mark.parametrize("arch", list(ArchId))
def test_forward_batch_properties(nets, arch):
    net = nets[arch]
    x = make_rng(4).random((3, *input_shape(arch)), dtype=np.float32)
    dup = np.repeat(x[:1], 4, axis=0)
    out = forward(net, dup)
    assert np.allclose(out, out[:1], atol=1e-6)
    perm = [2, 0, 1]
    assert np.allclose(forward(net, x[perm]), forward(net, x)[perm], atol=1e-6)
    assert forward(net, x).tobytes() == forward(net, x).tobytes()


@pytest.mark.parametrize("arch", list(ArchId))
def test_random_init_gives_finite_logits(arch):
    for seed in range(20):
        out = forward(build_network(arch, seed), np.zeros((1, *input_shape(arch)), np.float32))
        assert out.shape == (1, 7) and np.all(np.isfinite(out))
