"""Mirror-descent training of quantized networks.

Submodules: ``projections``, ``mirror``, ``optimizers``, ``convex_bench``,
``nn``, ``harness``, ``invariants`` and ``cli``.
"""

from .mirror import MirrorMap, bregman, mirror_grad, mirror_value
from .optimizers import (
    BetaSchedule,
    OptimizerState,
    StepSizeSchedule,
    epsilon_gamma,
    finalize_quantize,
    md_softmax_step,
    md_tanh_step,
    stable_md_step,
)
from .projections import OutOfDomain, Projection, QuantLevels

__version__ = "0.1.0"

__all__ = [
    "BetaSchedule", "MirrorMap", "OptimizerState", "OutOfDomain", "Projection", "QuantLevels",
    "StepSizeSchedule", "bregman", "epsilon_gamma", "finalize_quantize", "md_softmax_step",
    "md_tanh_step", "mirror_grad", "mirror_value", "stable_md_step",
]
