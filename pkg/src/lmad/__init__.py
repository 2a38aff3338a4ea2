"""Levenberg-Marquardt training of small dense networks and residual anomaly detection."""

from .network import Batch, Network, NetworkSpec, build_network, forward, jacobian
from .optim import GradConfig, LMConfig, TrainReport, train_grad, train_lm
from .timeseries import EventSeries, GenConfig, gen_engine_like, gen_sinc

__version__ = "0.1.0"

__all__ = [
    "Batch", "Network", "NetworkSpec", "build_network", "forward", "jacobian",
    "GradConfig", "LMConfig", "TrainReport", "train_grad", "train_lm",
    "EventSeries", "GenConfig", "gen_engine_like", "gen_sinc",
]
