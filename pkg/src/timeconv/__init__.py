"""TimeConvNets: sub-sequence stacks of face frames fed to compact 2D backbones."""

__version__ = "0.1.0"

from .architectures import ArchId, Network, build_network, count_params, forward, input_shape
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = ["ArchId", "Network", "build_network", "count_params", "forward", "input_shape",
           "load_checkpoint", "save_checkpoint", "__version__"]
