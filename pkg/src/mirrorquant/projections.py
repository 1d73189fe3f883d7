"""Parametric projections from the unconstrained dual space onto a constraint set.

Every projection ``P_beta`` here maps auxiliary real variables to the interior
of a quantization constraint set and sharpens toward a step function as
``beta`` grows. Inverses map interior points back to a dual representative;
they raise :class:`OutOfDomain` on boundary points, so callers clamp first
(see :func:`clamp_interior`).

A sigmoid projection onto ``[0, 1]`` would follow the same pattern as
:func:`tanh_project` and is not provided.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

DELTA = 1e-12  # interior margin used by clamp_interior
SHIFT = 0.5  # inflection points of the ternary shifted tanh


class OutOfDomain(ValueError):
    """Raised when an argument lies on or outside a projection's image."""


def _as_finite(x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise OutOfDomain(f"{name} must be finite")
    return x


def _check_beta(beta):
    b = np.asarray(beta, dtype=np.float64)
    if not np.all(np.isfinite(b)) or np.any(b <= 0):
        raise OutOfDomain(f"beta must be positive and finite, got {beta}")


@dataclass(frozen=True)
class QuantLevels:
    """Ordered set of admissible weight values."""

    levels: tuple

    def __post_init__(self):
        levels = tuple(float(q) for q in self.levels)
        if len(levels) < 2:
            raise ValueError("need at least two quantization levels")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError(f"levels must be strictly increasing: {levels}")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def binary(cls):
        return cls((-1.0, 1.0))

    @classmethod
    def ternary(cls):
        return cls((-1.0, 0.0, 1.0))

    @property
    def q(self):
        return np.array(self.levels)

    @property
    def lo(self):
        return self.levels[0]

    @property
    def hi(self):
        return self.levels[-1]

    def __len__(self):
        return len(self.levels)


def clamp_interior(w, lo=-1.0, hi=1.0, delta=DELTA):
    """Clamp primal values into ``[lo + delta, hi - delta]``."""
    return np.clip(np.asarray(w, dtype=np.float64), lo + delta, hi - delta)


def clamp_simplex(u, delta=DELTA):
    """Clamp simplex rows to ``[delta, 1]`` and renormalize along the last axis."""
    u = np.clip(np.asarray(u, dtype=np.float64), delta, 1.0)
    return u / u.sum(axis=-1, keepdims=True)


# -- tanh ---------------------------------------------------------------------


def tanh_project(x_tilde, beta):
    _check_beta(beta)
    return np.tanh(beta * _as_finite(x_tilde, "x_tilde"))


def tanh_inverse(w, beta):
    _check_beta(beta)
    w = _as_finite(w, "w")
    if np.any(np.abs(w) >= 1.0):
        raise OutOfDomain("tanh inverse requires |w| < 1")
    # log1p keeps precision for small |w|
    return 0.5 * (np.log1p(w) - np.log1p(-w)) / beta


def _sech2(z):
    # sech^2 avoids the cancellation in 1 - tanh^2 once tanh saturates
    c = np.cosh(np.clip(z, -350.0, 350.0))
    return 1.0 / (c * c)


def tanh_jacobian(x_tilde, beta):
    _check_beta(beta)
    return beta * _sech2(beta * _as_finite(x_tilde, "x_tilde"))


# -- softmax ------------------------------------------------------------------


def softmax_project(u_tilde, beta):
    """Row-wise softmax of ``beta * u_tilde`` along the last axis."""
    _check_beta(beta)
    z = beta * _as_finite(u_tilde, "u_tilde")
    if z.shape[-1] < 2:
        raise ValueError("softmax needs at least two labels")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_inverse(u, beta):
    """Canonical dual representative ``log(u) / beta``.

    The softmax is invariant to adding a constant per row; this picks the
    representative with ``sum(exp(beta * v)) == sum(u) == 1``.
    """
    _check_beta(beta)
    u = _as_finite(u, "u")
    if np.any(u <= 0.0):
        raise OutOfDomain("softmax inverse requires strictly positive entries")
    return np.log(u) / beta


def softmax_vjp(u_tilde, g, beta):
    """Vector-Jacobian product ``J^T g`` of the row softmax at ``u_tilde``."""
    u = softmax_project(u_tilde, beta)
    g = np.asarray(g, dtype=np.float64)
    return beta * u * (g - np.sum(u * g, axis=-1, keepdims=True))


# -- shifted tanh (ternary) ---------------------------------------------------


def _log_cosh(z):
    z = np.abs(z)
    return z + np.log1p(np.exp(-2.0 * z)) - np.log(2.0)


def _log_abs_sinh(z):
    z = np.abs(z)
    with np.errstate(divide="ignore"):
        return z + np.log(-np.expm1(-2.0 * z)) - np.log(2.0)


def shifted_tanh_project(x_tilde, beta):
    """Average of two tanh steps centred at -0.5 and +0.5; image is (-1, 1).

    Evaluated as ``sinh(2bx) / (2 cosh(b(x+.5)) cosh(b(x-.5)))`` in log space.
    Summing the two tanh terms directly cancels to exactly 0 on the plateau
    around x = 0 once beta is large, which would break strict monotonicity.
    """
    _check_beta(beta)
    x = _as_finite(x_tilde, "x_tilde")
    log_mag = (_log_abs_sinh(2.0 * beta * x)
               - _log_cosh(beta * (x + SHIFT)) - _log_cosh(beta * (x - SHIFT)))
    # rounding in exp can overshoot the saturated value 1 by an ulp
    return np.clip(0.5 * np.sign(x) * np.exp(log_mag), -1.0, 1.0)


def shifted_tanh_jacobian(x_tilde, beta):
    _check_beta(beta)
    x = _as_finite(x_tilde, "x_tilde")
    return 0.5 * beta * (_sech2(beta * (x + SHIFT)) + _sech2(beta * (x - SHIFT)))


def shifted_tanh_inverse(w, beta, max_iter=400):
    """Invert :func:`shifted_tanh_project` by bisection.

    No closed form exists. The bracket starts at [-1, 1] and doubles until it
    contains the root, then bisects until the bracket can no longer shrink
    in double precision.
    """
    _check_beta(beta)
    w = _as_finite(w, "w")
    if np.any(np.abs(w) >= 1.0):
        raise OutOfDomain("shifted tanh inverse requires |w| < 1")
    scalar = w.ndim == 0
    w = np.atleast_1d(w)

    lo = np.full(w.shape, -1.0)
    hi = np.full(w.shape, 1.0)
    for _ in range(64):
        low_bad = shifted_tanh_project(lo, beta) > w
        high_bad = shifted_tanh_project(hi, beta) < w
        if not (low_bad.any() or high_bad.any()):
            break
        lo = np.where(low_bad, 2.0 * lo, lo)
        hi = np.where(high_bad, 2.0 * hi, hi)

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        stalled = (mid <= lo) | (mid >= hi)
        if stalled.all():
            break
        below = shifted_tanh_project(mid, beta) < w
        lo = np.where(below & ~stalled, mid, lo)
        hi = np.where(~below & ~stalled, mid, hi)

    # pick the bracket end with the smaller residual
    r_lo = np.abs(shifted_tanh_project(lo, beta) - w)
    r_hi = np.abs(shifted_tanh_project(hi, beta) - w)
    x = np.where(r_lo <= r_hi, lo, hi)
    return x[0] if scalar else x


# -- sign ---------------------------------------------------------------------


def sign_project(x_tilde):
    """Hard sign with the tie at exactly zero sent to +1."""
    x = np.asarray(x_tilde, dtype=np.float64)
    return np.where(x >= 0.0, 1.0, -1.0)


# -- dispatch -----------------------------------------------------------------

KINDS = ("tanh", "shifted_tanh", "softmax", "sign")


@dataclass(frozen=True)
class Projection:
    """A projection family. ``d`` is the label count for softmax."""

    kind: str
    d: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown projection kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "softmax" and (self.d is None or self.d < 2):
            raise ValueError("softmax projection needs d >= 2")

    @property
    def differentiable(self):
        return self.kind != "sign"

    @property
    def interval(self):
        """Closure of the image for w-space projections."""
        if self.kind == "softmax":
            raise ValueError("softmax maps onto the simplex, not an interval")
        return (-1.0, 1.0)

    def project(self, x_tilde, beta=1.0):
        if self.kind == "tanh":
            return tanh_project(x_tilde, beta)
        if self.kind == "shifted_tanh":
            return shifted_tanh_project(x_tilde, beta)
        if self.kind == "softmax":
            return softmax_project(x_tilde, beta)
        return sign_project(x_tilde)

    def inverse(self, x, beta=1.0):
        if self.kind == "tanh":
            return tanh_inverse(x, beta)
        if self.kind == "shifted_tanh":
            return shifted_tanh_inverse(x, beta)
        if self.kind == "softmax":
            return softmax_inverse(x, beta)
        raise OutOfDomain("sign projection is not invertible")

    def vjp(self, x_tilde, g, beta=1.0):
        """Gradient with respect to the dual given gradient ``g`` at the primal."""
        if self.kind == "tanh":
            return np.asarray(g) * tanh_jacobian(x_tilde, beta)
        if self.kind == "shifted_tanh":
            return np.asarray(g) * shifted_tanh_jacobian(x_tilde, beta)
        if self.kind == "softmax":
            return softmax_vjp(x_tilde, g, beta)
        raise ValueError("sign projection has no useful Jacobian")

    def clamp(self, x):
        if self.kind == "softmax":
            return clamp_simplex(x)
        return clamp_interior(x)


def levels_for(projection: Projection, levels: Optional[Sequence[float]] = None) -> QuantLevels:
    """Default quantization levels matching a projection."""
    if levels is not None:
        return QuantLevels(tuple(levels))
    if projection.kind == "shifted_tanh":
        return QuantLevels.ternary()
    if projection.kind == "softmax" and projection.d == 3:
        return QuantLevels.ternary()
    return QuantLevels.binary()
