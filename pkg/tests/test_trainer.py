import math

import numpy as np
import pytest

from oracles import adam_reference
from timeconv.architectures import build_network
from timeconv.data import DatasetArchive, generate_synthetic
from timeconv.tensor import NumericError, make_rng
from timeconv.trainer import (
    AdamHyper,
    AdamState,
    AugmentConfig,
    EvalResult,
    MetricsRecord,
    TrainConfig,
    TrainingDivergedError,
    adam_step,
    apply_transform,
    augment,
    confusion_matrix,
    evaluate,
    hflip,
    lr_at_epoch,
    overfit_batch,
    read_metrics,
    sample_transform,
    score_predictions,
    split_dataset,
    split_indices,
    train,
    write_metrics,
)


# -- schedule and split ------------------------------------------------------

@pytest.mark.parametrize("epoch,lr", [(0, 1e-3), (80, 1e-3), (81, 1e-4), (120, 1e-4), (121, 1e-5),
                                      (161, 1e-6), (180, 1e-6), (181, 0.5e-6), (199, 0.5e-6)])
def test_lr_schedule(epoch, lr):
    assert lr_at_epoch(TrainConfig(), epoch) == pytest.approx(lr, rel=1e-12)


def test_lr_schedule_range():
    with pytest.raises(ValueError):
        lr_at_epoch(TrainConfig(), 200)
    with pytest.raises(ValueError):
        lr_at_epoch(TrainConfig(), -1)


def test_split_sizes():
    assert [len(s) for s in split_dataset(68_363)] == [47_854, 6_836, 13_673]
    assert [len(s) for s in split_dataset(10)] == [7, 1, 2]
    a, b, c = split_dataset(1000, seed=4)
    assert len(set(a) | set(b) | set(c)) == 1000
    again = split_dataset(1000, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip((a, b, c), again))
    assert not np.array_equal(a, split_dataset(1000, seed=5)[0])


def test_split_errors():
    with pytest.raises(ValueError):
        split_dataset(0)
    with pytest.raises(ValueError):
        split_dataset(10, (0.5, 0.1, 0.1))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(ratios=(0.8, 0.1, 0.2))


# -- augmentation ------------------------------------------------------------

def test_augment_identity_and_flip():
    stack = make_rng(0).random((5, 48, 48), dtype=np.float32)
    assert augment(stack, make_rng(1), AugmentConfig.off()) is stack
    assert np.array_equal(hflip(hflip(stack)), stack)


def test_augment_is_shared_across_channels():
    # sentinel: every channel holds the same pattern scaled by a distinct factor
    base = make_rng(2).random((48, 48))
    scales = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    stack = (scales[:, None, None] * base).astype(np.float32)
    rng = make_rng(3)
    for _ in range(10):
        t = sample_transform(rng, AugmentConfig())
        out = apply_transform(stack, t)
        single = apply_transform(stack[2:3], t)[0]
        assert np.allclose(out[2], single, atol=1e-6)
        for i, s in enumerate(scales):
            assert np.allclose(out[i], s * single / 0.5, atol=1e-5)


def test_augment_channel_independence():
    stack = np.zeros((5, 48, 48), np.float32)
    stack[1, 20:28, 20:28] = 1.0
    t = sample_transform(make_rng(4), AugmentConfig())
    out = apply_transform(stack, t)
    assert np.all(out[[0, 2, 3, 4]] == 0) and out[1].max() > 0


def test_augment_ranges():
    cfg = AugmentConfig()
    rng = make_rng(5)
    ts = [sample_transform(rng, cfg) for _ in range(500)]
    assert max(abs(t["angle"]) for t in ts) <= 10
    assert max(abs(t["tx"]) for t in ts) <= 0.1
    assert all(0.9 <= t["zx"] <= 1.1 for t in ts)
    assert 0.4 < np.mean([t["flip"] for t in ts]) < 0.6
    out = augment(make_rng(6).random((5, 48, 48), dtype=np.float32) * 1.5, rng, cfg)
    assert out.min() >= 0 and out.max() <= 1 and out.dtype == np.float32


# -- Adam ----------------------------------------------------------------------

def test_adam_matches_reference():
    rng = make_rng(7)
    p0 = rng.normal(size=(3, 4))
    grads = [rng.normal(size=(3, 4)) for _ in range(25)]
    p = p0.copy()
    g = np.zeros_like(p)
    state = AdamState()
    for gi in grads:
        g[...] = gi
        adam_step([("w", p, g)], state, 1e-2)
    assert state.step == 25
    assert np.allclose(p, adam_reference(p0, grads, 1e-2), rtol=1e-12, atol=1e-14)


def test_adam_first_step_is_lr_sign():
    p = np.array([1.0, -2.0, 3.0])
    g = np.array([0.5, -3.0, 1e-3])
    adam_step([("w", p, g)], AdamState(), 0.1)
    assert np.allclose(p, [0.9, -1.9, 2.9], atol=1e-4)


def test_adam_zero_gradients_and_quadratic():
    p = np.array([1.0])
    state = adam_step([("w", p, np.zeros(1))], AdamState(), 0.1)
    assert p[0] == 1.0 and state.step == 1
    w = np.array([1.0])
    state = AdamState()
    history = []
    for _ in range(100):
        adam_step([("w", w, 2 * w)], state, 0.01)
        history.append(w[0])
    assert all(b < a for a, b in zip(history, history[1:]))
    assert 0 < history[-1] < 1.0
    # scalar reference driven by the same gradient sequence
    ref = np.array([1.0])
    grads = []
    for h in [1.0] + history[:-1]:
        grads.append(np.array([2 * h]))
    assert adam_reference(ref, grads, 0.01)[0] == pytest.approx(history[-1], rel=1e-12)


def test_adam_errors():
    with pytest.raises(NumericError, match="conv.weight"):
        adam_step([("conv.weight", np.ones(2), np.array([1.0, np.inf]))], AdamState(), 0.1)
    with pytest.raises(ValueError):
        adam_step([("w", np.ones(2), np.ones(3))], AdamState(), 0.1)


# -- metrics and evaluation --------------------------------------------------

def test_metrics_round_trip(tmp_path):
    recs = [MetricsRecord(0, 1e-3, 1.5, 0.25, 1.7, 0.2), MetricsRecord(1, 1e-4, 0.1, 1 / 3, float("nan"), 0.5)]
    write_metrics(tmp_path / "m.tsv", recs)
    back = read_metrics(tmp_path / "m.tsv")
    assert back[0] == recs[0]
    assert back[1].train_acc == 1 / 3 and math.isnan(back[1].val_loss)


def test_confusion_and_scores():
    labels = np.repeat(np.arange(7), 10)
    perfect = score_predictions(labels, labels, "abcdefg")
    assert perfect.accuracy == 1.0 and np.array_equal(perfect.confusion, np.diag([10] * 7))
    const = score_predictions(labels, np.zeros(70, int), "abcdefg")
    assert const.accuracy == pytest.approx(1 / 7)
    assert const.confusion.sum(axis=1).tolist() == [10] * 7
    assert confusion_matrix([0, 1], [1, 1], 2).tolist() == [[0, 1], [0, 1]]
    d = const.to_dict()
    assert d["support"] == [10] * 7 and d["labels"] == list("abcdefg")


def test_evaluate_class_mismatch():
    net = build_network("xception2d", 0)
    archive = DatasetArchive(np.zeros((2, 5, 48, 48)), np.array([0, 1]), ("a", "b"))
    with pytest.raises(ValueError, match="classes"):
        evaluate(net, archive)


def test_evaluate_confusion_rows():
    archive = generate_synthetic(2, seed=1)
    result = evaluate(build_network("xception2d", 0), archive)
    assert isinstance(result, EvalResult)
    assert result.confusion.sum(axis=1).tolist() == archive.class_counts()
    assert split_indices(archive, "all").tolist() == list(range(14))
    with pytest.raises(ValueError):
        split_indices(archive, "holdout")


# -- training ------------------------------------------------------------------

def test_overfit_single_batch():
    archive = generate_synthetic(2, seed=0)
    idx = np.array([0, 2, 4, 6, 8, 10, 12, 13])
    losses = overfit_batch("timeconv_xception", archive.stacks[idx], archive.labels[idx], steps=60)
    assert losses[0] > 1.0 and min(losses) < 0.01


def test_train_reproducible_and_best_epoch():
    archive = generate_synthetic(3, seed=2)
    cfg = TrainConfig(epochs=2, batch_size=8, seed=9)
    seen = []
    a = train("timeconv_xception", archive, cfg, on_epoch=seen.append)
    b = train("timeconv_xception", archive, cfg)
    assert seen == a.metrics and len(a.metrics) == 2
    assert [m.__dict__ for m in a.metrics] == [m.__dict__ for m in b.metrics]
    sa, sb = a.network.state(), b.network.state()
    assert all(sa[k].tobytes() == sb[k].tobytes() for k in sa)
    assert 0 <= a.best_epoch < 2
    assert sum(len(s) for s in a.split) == len(archive)


def test_train_rejects_wrong_class_count():
    archive = DatasetArchive(np.zeros((4, 5, 48, 48)), np.array([0, 1, 0, 1]), ("a", "b"))
    with pytest.raises(ValueError):
        train("xception2d", archive, TrainConfig(epochs=1))


def test_train_divergence_reported():
    archive = generate_synthetic(2, seed=0)
    archive.stacks[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDivergedError, match="epoch 0"):
        train("timeconv_xception", archive, TrainConfig(epochs=1, batch_size=14, ratios=(1.0, 0.0, 0.0),
                                                      augment=AugmentConfig.off()))


def test_tiny_timeconv_reaches_high_train_accuracy():
    archive = generate_synthetic(10, seed=21)
    cfg = TrainConfig(epochs=30, batch_size=16, augment=AugmentConfig.off(), seed=0)
    result = train("timeconv_xception", archive, cfg)
    assert result.metrics[-1].train_acc > 0.95
