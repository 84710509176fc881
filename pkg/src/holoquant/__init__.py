"""Gain-shape-bias codebook compression for spline-edge networks, with a lookup runtime."""

from .demo import demo_config, demo_model
from .gsb import (
    Codebook,
    CompressedLayer,
    CompressedNetwork,
    VQConfig,
    compress_layer,
    compress_network,
    kmeans_codebook,
    network_r_squared,
    normalize_grids,
    r_squared,
    reconstruct_layer,
    reconstruct_network,
)
from .kan import KanLayer, KanNetwork, ShapeError, SplineGrid, eval_spline, layer_forward, network_forward
from .quant import quantize_network
from .tasks import SyntheticTask
from .trainer import TrainConfig, init_network, prune_by_norm, train

__version__ = "0.1.0"
