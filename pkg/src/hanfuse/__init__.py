"""Routed hierarchical attention fusion of paired RGB / thermal feature maps."""

from .engine import (
    HanConfig,
    HanParams,
    RoutingTrace,
    aggregate_inputs,
    flop_count,
    han_forward,
    han_forward_static,
    init_params,
    param_count,
    random_params,
    unit_dispatch,
)
from .errors import ConfigError, FormatError, HanError, ShapeError, UsageError
from .fusion import ModalityPair, ceu_forward, cmeu_forward, seu_forward
from .gradcheck import GradientSet, backward, fd_gradient
from .routing import route_layer, router_forward

__version__ = "0.1.0"
