"""Mirror descent steps, baselines, schedules and final rounding.

Two routes compute the same mirror descent iterate:

* closed form in the primal (``md_tanh_step``, ``md_softmax_step``), which
  is what the KKT conditions of the proximal problem give directly, and
* the stable route (``stable_md_step``): plain gradient descent on the dual
  auxiliary variables followed by the projection. Its backward pass treats
  the projection Jacobian as the identity, i.e. the straight-through
  estimator.

Agreement between the two is tested to 1e-9.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .projections import (
    DELTA,
    OutOfDomain,
    Projection,
    QuantLevels,
    clamp_interior,
    sign_project,
)

DUAL_CLIP = 20.0  # |dual| bound for stable steps; tanh(20) == 1.0 in double


def _finite(g, name="g"):
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise OutOfDomain(f"{name} must be finite")
    return g


# -- schedules ----------------------------------------------------------------


@dataclass(frozen=True)
class BetaSchedule:
    """``beta_k = min(cap, beta0 * scale ** (k // interval))``."""

    beta0: float = 1.0
    scale: float = 1.02
    interval: int = 200
    cap: float = 1e4

    def __post_init__(self):
        if self.beta0 < 1:
            raise ValueError("beta0 must be >= 1")
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        if self.interval < 1:
            raise ValueError("interval must be a positive iteration count")
        if self.cap < self.beta0:
            raise ValueError("cap must be >= beta0")

    def __call__(self, k):
        return anneal_beta(self, k)


def anneal_beta(schedule: BetaSchedule, k: int) -> float:
    if k < 0:
        raise ValueError("iteration must be nonnegative")
    n = k // schedule.interval
    # log form avoids overflow of scale ** n for long runs
    log_beta = math.log(schedule.beta0) + n * math.log(schedule.scale)
    if log_beta >= math.log(schedule.cap):
        return float(schedule.cap)
    return float(schedule.beta0 * schedule.scale ** n)


@dataclass(frozen=True)
class StepSizeSchedule:
    eta0: float = 1e-3
    lr_scale: float = 0.3
    lr_interval: int = 30000

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if not 0 < self.lr_scale <= 1:
            raise ValueError("lr_scale must be in (0, 1]")
        if self.lr_interval < 1:
            raise ValueError("lr_interval must be positive")

    def __call__(self, k):
        return self.eta0 * self.lr_scale ** (k // self.lr_interval)


# -- state --------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, x):
        return cls(np.zeros_like(x, dtype=np.float64), np.zeros_like(x, dtype=np.float64), 0)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.t)


@dataclass
class OptimizerState:
    """Primal iterate plus, for dual-space methods, the auxiliary variables.

    For softmax the arrays have shape ``(m, d)``: one simplex row per
    parameter.
    """

    primal: np.ndarray
    dual: Optional[np.ndarray] = None
    beta: float = 1.0
    step: int = 0
    projection: Optional[Projection] = None
    adam: Optional[AdamState] = None

    @classmethod
    def from_dual(cls, dual, projection: Projection, beta=1.0, **kw):
        dual = np.asarray(dual, dtype=np.float64)
        return cls(projection.project(dual, beta), dual.copy(), beta, 0, projection, **kw)

    @classmethod
    def from_primal(cls, primal, projection: Projection, beta=1.0, **kw):
        primal = projection.clamp(primal)
        return cls(primal, projection.inverse(primal, beta), beta, 0, projection, **kw)

    def copy(self):
        return replace(
            self,
            primal=self.primal.copy(),
            dual=None if self.dual is None else self.dual.copy(),
            adam=None if self.adam is None else self.adam.copy(),
        )

    def with_beta(self, beta):
        """Re-project the dual at a new beta (no-op for closed-form states)."""
        if self.dual is None or self.projection is None or self.projection.kind == "sign":
            return replace(self, beta=beta)
        return replace(self, beta=beta, primal=self.projection.project(self.dual, beta))


# -- closed-form steps --------------------------------------------------------


def md_tanh_step(w, g, eta, beta):
    """Closed-form MD step for the tanh mirror map.

    ``A = (1+w)/(1-w)``, ``w' = (A e^{-2 beta eta g} - 1)/(A e^{-2 beta eta g} + 1)``.
    """
    w = clamp_interior(_finite(w, "w"))
    g = _finite(g)
    a = (1.0 + w) / (1.0 - w)
    with np.errstate(over="ignore"):
        e = a * np.exp(-2.0 * beta * eta * g)
    big = np.isinf(e)
    e = np.where(big, 0.0, e)
    out = np.where(big, 1.0, (e - 1.0) / (e + 1.0))
    return clamp_interior(out)


def md_softmax_step(u, g, eta, beta):
    """Exponentiated gradient step, row-wise on the simplex."""
    u = _finite(u, "u")
    if np.any(u <= 0.0):
        raise OutOfDomain("EGD step requires a strictly positive simplex point")
    g = _finite(g)
    expo = -beta * eta * g
    expo = expo - expo.max(axis=-1, keepdims=True)
    new = u * np.exp(expo)
    new = new / new.sum(axis=-1, keepdims=True)
    if np.any(new < DELTA):
        new = np.maximum(new, DELTA)
        new = new / new.sum(axis=-1, keepdims=True)
    return new


def pgd_step(x, g, eta, box=(-1.0, 1.0)):
    lo, hi = box
    if not lo < hi:
        raise ValueError("box needs lo < hi")
    return np.clip(np.asarray(x, dtype=np.float64) - eta * _finite(g), lo, hi)


# -- dual-space steps ---------------------------------------------------------


def stable_md_step(state: OptimizerState, g, eta, clip=DUAL_CLIP, _flip_sign=False):
    """Gradient step on the dual variables, then project.

    ``g`` is the loss gradient at the primal point; the projection Jacobian
    is deliberately skipped.
    """
    if state.dual is None:
        raise ValueError("stable step needs dual variables")
    g = _finite(g)
    sign = -1.0 if _flip_sign else 1.0
    dual = state.dual - sign * eta * g
    if clip is not None:
        dual = np.clip(dual, -clip, clip)
    primal = state.projection.project(dual, state.beta)
    return replace(state, dual=dual, primal=primal, step=state.step + 1)


def gd_proj_step(state: OptimizerState, g, eta, clip=DUAL_CLIP):
    """Gradient descent on the dual through the true projection Jacobian."""
    if state.projection is None or not state.projection.differentiable:
        raise ValueError("gd_proj needs a differentiable projection (not sign)")
    g = _finite(g)
    dual = state.dual - eta * state.projection.vjp(state.dual, g, state.beta)
    if clip is not None:
        dual = np.clip(dual, -clip, clip)
    primal = state.projection.project(dual, state.beta)
    return replace(state, dual=dual, primal=primal, step=state.step + 1)


def bc_ste_step(state: OptimizerState, g, eta):
    """BinaryConnect: clipped latent weights, signed forward weights."""
    dual = np.clip(state.dual - eta * _finite(g), -1.0, 1.0)
    return replace(state, dual=dual, primal=sign_project(dual), step=state.step + 1)


# -- Adam ---------------------------------------------------------------------


def adam_precondition(g, state: AdamState, b1=0.9, b2=0.999, eps_hat=1e-8):
    """Bias-corrected Adam direction ``m_hat / (sqrt(v_hat) + eps_hat)``.

    Returns the direction and a new moment state; ``state`` is not mutated.
    """
    if not (0 < b1 < 1 and 0 < b2 < 1):
        raise ValueError("Adam decay rates must lie in (0, 1)")
    g = _finite(g)
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    return m_hat / (np.sqrt(v_hat) + eps_hat), AdamState(m, v, t)


# -- epsilon-discreteness and rounding ----------------------------------------


def epsilon_gamma(B, eps):
    """Smallest dual magnitude ``gamma`` with ``1 - |tanh(B x)| < eps`` beyond it.

    The guarantee holds for any ``|x| > atanh(1 - eps) / B``; this returns
    that infimum.
    """
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if not B > 0:
        raise ValueError(f"B must be positive, got {B}")
    # atanh(1 - eps) = 0.5 * log((2 - eps) / eps), exact for tiny eps
    return 0.5 * math.log((2.0 - eps) / eps) / B


def nearest_level(w, levels: QuantLevels):
    """Round each entry to its nearest level; exact ties go to the upper level."""
    w = np.asarray(w, dtype=np.float64)
    q = levels.q
    mids = 0.5 * (q[1:] + q[:-1])
    idx = np.searchsorted(mids, w, side="right")
    return q[idx]


def finalize_quantize(state, levels: QuantLevels, space="w"):
    """Map the current iterate onto ``Q^m`` exactly.

    ``state`` may be an :class:`OptimizerState` or a bare array (primal
    weights for ``space="w"``, simplex rows for ``space="u"``).
    """
    x = state.primal if isinstance(state, OptimizerState) else np.asarray(state)
    if space == "w":
        return nearest_level(x, levels)
    if space == "u":
        if x.shape[-1] != len(levels):
            raise ValueError("simplex rows must have one entry per level")
        return levels.q[np.argmax(x, axis=-1)]
    raise ValueError(f"space must be 'w' or 'u', got {space!r}")
