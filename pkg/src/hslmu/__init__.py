"""Hybrid-spiking memory networks with temporally-diffused activation quantization.

The package trains recurrent classifiers whose activities are integer event
counts at a tunable resolution: high resolutions recover ordinary real-valued
networks, resolution one recovers binary spiking networks, and training sweeps
between the two.
"""

from .estimator import HsLmuClassifier
from .lmu import LmuSystem, LowpassFilter, legendre_reconstruct
from .network import CellConfig, CellParams, HsLmuCell, count_states
from .quantizer import QuantizerState, init_residuals, make_activation, quantize_step
from .training import TrainPlan, schedule_omega

__all__ = [
    "HsLmuClassifier",
    "LmuSystem",
    "LowpassFilter",
    "legendre_reconstruct",
    "CellConfig",
    "CellParams",
    "HsLmuCell",
    "count_states",
    "QuantizerState",
    "init_residuals",
    "make_activation",
    "quantize_step",
    "TrainPlan",
    "schedule_omega",
]

__version__ = "0.1.0"
