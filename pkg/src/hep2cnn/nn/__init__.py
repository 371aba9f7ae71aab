"""Minimal dense CNN engine: layers, network composition, SGD, checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    LayerSpec,
    NetworkConfig,
    default_network,
    load_network,
    parse_network,
    small_network,
)
from .kernels import BACKEND
from .layers import (
    avgpool_backward,
    avgpool_forward,
    conv_backward,
    conv_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    softmax_xent_backward,
    softmax_xent_forward,
)
from .network import (
    init_params,
    network_backward,
    network_forward,
    predict_proba,
    sgd_step,
)
