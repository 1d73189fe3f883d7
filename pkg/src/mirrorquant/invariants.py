"""Randomized invariant suites shared by ``mirrorquant check`` and the tests.

Each suite returns a :class:`SuiteResult` holding the worst observed error
next to the tolerance it was held to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np

from . import nn
from .convex_bench import DEFAULT_B, DEFAULT_SUITE, DEFAULT_T, numeric_prox_oracle, run_case
from .harness import u_space_grad
from .mirror import MirrorMap, bregman, mirror_grad, mirror_terms
from .optimizers import (
    OptimizerState,
    epsilon_gamma,
    md_softmax_step,
    md_tanh_step,
    stable_md_step,
)
from .projections import (
    Projection,
    QuantLevels,
    shifted_tanh_inverse,
    shifted_tanh_jacobian,
    shifted_tanh_project,
    softmax_inverse,
    softmax_project,
    tanh_inverse,
    tanh_jacobian,
    tanh_project,
)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst: float
    tol: float
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: worst={self.worst:.3e} tol={self.tol:.1e} {self.detail}".rstrip()


def rel_err(a, b, floor=1e-2):
    """``|a - b| / max(|b|, floor)``; the floor keeps values near zero meaningful."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.abs(b), floor)


def random_simplex(rng, n, d, low=1e-3):
    u = rng.dirichlet(np.ones(d), size=n)
    u = np.maximum(u, low)
    return u / u.sum(axis=1, keepdims=True)


# -- closed form vs stable ----------------------------------------------------


def equivalence_tanh(rng, n=100_000, flip_sign=False):
    w = rng.uniform(-0.999, 0.999, n)
    g = rng.uniform(-5.0, 5.0, n)
    eta = 10.0 ** rng.uniform(-4.0, 0.0, n)
    beta = rng.uniform(1.0, 100.0, n)
    closed = md_tanh_step(w, g, eta, beta)
    # per-entry beta, so the stable route is spelled out with the vectorized
    # projection functions; equivalence_tanh_statewise goes through the state
    dual = tanh_inverse(w, beta)
    step = -eta * g if flip_sign else eta * g
    stable = tanh_project(np.clip(dual - step, -20.0, 20.0), beta)
    return float(np.max(np.abs(closed - stable)))


def equivalence_softmax(rng, n=10_000, dims=(2, 3, 5), flip_sign=False):
    worst = 0.0
    for d in dims:
        proj = Projection("softmax", d)
        for _ in range(n // len(dims)):
            u = random_simplex(rng, 1, d)[0]
            g = rng.uniform(-5.0, 5.0, d)
            eta = 10.0 ** rng.uniform(-4.0, 0.0)
            beta = rng.uniform(1.0, 100.0)
            closed = md_softmax_step(u, g, eta, beta)
            state = OptimizerState.from_primal(u, proj, beta)
            stable = stable_md_step(state, g, eta, clip=None, _flip_sign=flip_sign).primal
            worst = max(worst, float(np.max(np.abs(closed - stable))))
    return worst


def equivalence_tanh_statewise(rng, n=1000, flip_sign=False):
    """Same check through ``stable_md_step`` itself (fixed beta per call)."""
    proj = Projection("tanh")
    worst = 0.0
    for _ in range(n):
        w = rng.uniform(-0.999, 0.999, 8)
        g = rng.uniform(-5.0, 5.0, 8)
        eta = 10.0 ** rng.uniform(-4.0, 0.0)
        beta = rng.uniform(1.0, 100.0)
        state = OptimizerState.from_primal(w, proj, beta)
        stable = stable_md_step(state, g, eta, _flip_sign=flip_sign).primal
        worst = max(worst, float(np.max(np.abs(md_tanh_step(w, g, eta, beta) - stable))))
    return worst


# -- proximal optimality ------------------------------------------------------


def prox_tanh(rng, n=100):
    m = MirrorMap.tanh()
    worst = 0.0
    for _ in range(n):
        w = rng.uniform(-0.95, 0.95)
        g = rng.uniform(-2.0, 2.0)
        eta = rng.uniform(0.01, 1.0)
        beta = rng.uniform(1.0, 5.0)
        oracle = numeric_prox_oracle(m, w, g, eta, beta)
        worst = max(worst, abs(float(md_tanh_step(w, g, eta, beta)) - oracle))
    return worst


def prox_softmax(rng, n=100):
    m = MirrorMap.entropy(2)
    worst = 0.0
    for _ in range(n):
        s = rng.uniform(0.05, 0.95)
        u = np.array([s, 1.0 - s])
        g = rng.uniform(-2.0, 2.0, 2)
        eta = rng.uniform(0.01, 1.0)
        beta = rng.uniform(1.0, 5.0)
        oracle = numeric_prox_oracle(m, u, g, eta, beta)
        worst = max(worst, float(np.max(np.abs(md_softmax_step(u, g, eta, beta) - oracle))))
    return worst


# -- mirror maps --------------------------------------------------------------


def _scalar_samples(m: MirrorMap, rng, n):
    if m.kind == "negative_entropy":
        return random_simplex(rng, n, m.projection.d, low=1e-2)
    lim = 0.95 if m.kind == "numeric" else 0.99
    return rng.uniform(-lim, lim, n)


def _beta_range(m: MirrorMap):
    # the shifted-tanh inverse gets very steep near 0 for large beta, which
    # ruins finite differences; keep beta moderate there
    return (1.0, 3.0) if m.kind == "numeric" else (1.0, 10.0)


def mirror_grad_fd(m: MirrorMap, rng, n=1000):
    """Worst relative error between central differences of Phi and P^{-1}."""
    beta = rng.uniform(*_beta_range(m))
    x = _scalar_samples(m, rng, n)
    h = 1e-5 if m.kind == "numeric" else 1e-6
    # Phi is a sum of per-coordinate terms, so every partial is a term derivative
    fd = (mirror_terms(m, x + h, beta) - mirror_terms(m, x - h, beta)) / (2 * h)
    return float(np.max(rel_err(fd, mirror_grad(m, x, beta))))


def mirror_convexity(m: MirrorMap, rng, n=1000):
    """Smallest gap ``t Phi(p) + (1-t) Phi(q) - Phi(tp + (1-t) q)``; must exceed 1e-15."""
    beta = rng.uniform(*_beta_range(m))
    p = _scalar_samples(m, rng, n)
    q = _scalar_samples(m, rng, n)
    t = rng.uniform(0.05, 0.95, n)
    if p.ndim == 2:
        tt = t[:, None]
        mix = tt * p + (1 - tt) * q
        phi = lambda x: np.sum(mirror_terms(m, x, beta), axis=1)
    else:
        # keep pairs far enough apart that the gap is above rounding noise
        q = np.where(np.abs(p - q) < 0.05, -p, q)
        q = np.where(np.abs(p - q) < 0.05, q + 0.1 * np.sign(-q), q)
        tt = t
        mix = t * p + (1 - t) * q
        phi = lambda x: mirror_terms(m, x, beta)
    gap = tt.ravel() * phi(p) + (1 - tt.ravel()) * phi(q) - phi(mix)
    return float(np.min(gap))


def mirror_boundary(m: MirrorMap, beta=1.0):
    """``|grad Phi|`` at boundary distances 1e-2 .. 1e-8."""
    norms = []
    for k in range(2, 9):
        dist = 10.0 ** -k
        if m.kind == "negative_entropy":
            d = m.projection.d
            x = np.full(d, (1.0 - dist) / (d - 1))
            x[0] = dist
        else:
            x = np.array([1.0 - dist])
        norms.append(float(np.linalg.norm(mirror_grad(m, x, beta))))
    return norms


def bregman_nonneg(m: MirrorMap, rng, n=10_000):
    """Smallest Bregman value over random pairs, and the largest |D(p, p)|."""
    beta = rng.uniform(*_beta_range(m))
    p = _scalar_samples(m, rng, n)
    q = _scalar_samples(m, rng, n)
    if m.kind == "negative_entropy":
        vals = [bregman(m, a, b, beta) for a, b in zip(p, q)]
        self_vals = [bregman(m, a, a, beta) for a in p[:100]]
    elif m.kind == "numeric":
        vals = [bregman(m, p[:200], q[:200], beta)]
        vals += [bregman(m, np.array([a]), np.array([b]), beta) for a, b in zip(p[:200], q[:200])]
        self_vals = [bregman(m, np.array([a]), np.array([a]), beta) for a in p[:50]]
    else:
        vals = [bregman(m, np.array([a]), np.array([b]), beta) for a, b in zip(p, q)]
        self_vals = [bregman(m, np.array([a]), np.array([a]), beta) for a in p[:100]]
    return float(min(vals)), float(max(abs(v) for v in self_vals))


# -- projections --------------------------------------------------------------


def projection_inverse_roundtrip(rng, n=1000):
    worst = 0.0
    beta = rng.uniform(1.0, 10.0, n)
    x = rng.uniform(-1.5, 1.5, n) / beta
    worst = max(worst, float(np.max(np.abs(tanh_inverse(tanh_project(x, beta), beta) - x))))
    xs = rng.uniform(-0.5 - 2.0, 0.5 + 2.0, n)
    for b in (1.0, 3.0, 10.0):
        xb = np.clip(xs / b, -0.5 - 2.0 / b, 0.5 + 2.0 / b)
        back = shifted_tanh_inverse(shifted_tanh_project(xb, b), b)
        worst = max(worst, float(np.max(np.abs(back - xb))))
    for d in (2, 3, 5):
        u = random_simplex(rng, n // 3, d, low=1e-6)
        b = rng.uniform(1.0, 10.0)
        back = softmax_project(softmax_inverse(u, b), b)
        worst = max(worst, float(np.max(np.abs(back - u))))
    return worst


def projection_monotone(rng, n=10_000):
    """Count of monotonicity violations for tanh and shifted tanh."""
    bad = 0
    for beta in (1.0, 10.0, 100.0):
        a = rng.uniform(-3.0, 3.0, n) / beta
        b = a + rng.uniform(1e-6, 1.0, n) / beta
        for f in (tanh_project, shifted_tanh_project):
            fa, fb = f(a, beta), f(b, beta)
            # only where both sides are below saturation in double precision
            live = (np.abs(fa) < 1.0) & (np.abs(fb) < 1.0)
            bad += int(np.sum(~(fa[live] < fb[live])))
    return bad


def projection_jacobian_fd(rng, n=1000):
    worst = 0.0
    h = 1e-6
    for f, jac in ((tanh_project, tanh_jacobian), (shifted_tanh_project, shifted_tanh_jacobian)):
        beta = rng.uniform(1.0, 10.0, n)
        x = rng.uniform(-2.0, 2.0, n) / beta
        fd = (f(x + h, beta) - f(x - h, beta)) / (2 * h)
        worst = max(worst, float(np.max(rel_err(fd, jac(x, beta), floor=1e-3))))
    return worst


# -- epsilon-discreteness -----------------------------------------------------


def epsilon_violations(rng, n_pairs=1000, n_samples=1000):
    violations = 0
    for _ in range(n_pairs):
        B = rng.uniform(1.0, 100.0)
        eps = math.exp(rng.uniform(math.log(1e-4), math.log(0.5)))
        gamma = 1.001 * epsilon_gamma(B, eps)
        x = gamma * (1.0 + rng.exponential(1.0, n_samples)) * rng.choice([-1.0, 1.0], n_samples)
        x[0] = gamma  # include the threshold itself
        violations += int(np.sum(1.0 - np.abs(np.tanh(B * x)) >= eps))
    return violations


# -- gradients ----------------------------------------------------------------


def mlp_grad_check(seed, dims=(2, 4, 2), n=8, h=1e-5):
    """Worst relative error of backprop against central differences."""
    rng = np.random.default_rng(seed)
    model = nn.init_mlp(dims, rng)
    # biases away from zero keep ReLU kinks out of the stencil
    model = model.with_vector(model.to_vector() + rng.normal(0, 0.3, model.n_params))
    X = rng.normal(size=(n, dims[0]))
    y = rng.integers(0, dims[-1], n)
    _, grads, _ = nn.loss_and_grad(model, X, y)
    analytic = grads.to_vector()
    theta = model.to_vector()
    fd = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        lp, _ = nn.cross_entropy(nn.forward(model.with_vector(theta + e), X)[0], y)
        lm, _ = nn.cross_entropy(nn.forward(model.with_vector(theta - e), X)[0], y)
        fd[i] = (lp - lm) / (2 * h)
    return float(np.max(np.abs(fd - analytic) / np.maximum(np.abs(fd) + np.abs(analytic), 1e-6)))


def u_space_grad_check(seed, dims=(2, 4, 2), n=8, h=1e-5, levels=QuantLevels.binary()):
    rng = np.random.default_rng(seed)
    template = nn.init_mlp(dims, rng)
    m = template.n_params
    u = random_simplex(rng, m, len(levels), low=0.05)
    X = rng.normal(size=(n, dims[0]))
    y = rng.integers(0, dims[-1], n)
    q = levels.q

    def loss(u_rows):
        return nn.cross_entropy(nn.forward(template.with_vector(u_rows @ q), X)[0], y)[0]

    _, grads, _ = nn.loss_and_grad(template.with_vector(u @ q), X, y)
    analytic = u_space_grad(grads.to_vector(), levels)
    fd = np.empty_like(u)
    for j in range(m):
        for l in range(len(q)):
            e = np.zeros_like(u)
            e[j, l] = h
            fd[j, l] = (loss(u + e) - loss(u - e)) / (2 * h)
    return float(np.max(np.abs(fd - analytic) / np.maximum(np.abs(fd) + np.abs(analytic), 1e-6)))


# -- convex bound -------------------------------------------------------------


def convex_bound_ratio(ts=DEFAULT_T, Bs=DEFAULT_B, suite=DEFAULT_SUITE):
    """Largest gap / bound over the default convex suite (must stay <= 1)."""
    worst = 0.0
    for problem_id, map_id in suite:
        for B in Bs:
            for r in run_case(problem_id, map_id, B, ts):
                worst = max(worst, r.gap / r.bound)
    return worst


# -- driver -------------------------------------------------------------------


def run_all(seed=0, inject_ste_bug=False, quick=True) -> List[SuiteResult]:
    rng = np.random.default_rng(seed)
    scale = 10 if quick else 1
    out = []

    worst = max(projection_inverse_roundtrip(rng), 0.0)
    out.append(SuiteResult("projection inverse roundtrip", worst < 1e-9, worst, 1e-9))
    bad = projection_monotone(rng, 10_000 // scale)
    out.append(SuiteResult("projection monotonicity", bad == 0, float(bad), 0.0, "violations"))
    worst = projection_jacobian_fd(rng, 1000 // scale)
    out.append(SuiteResult("projection jacobian vs finite differences", worst < 1e-6, worst, 1e-6))

    worst = max(equivalence_tanh(rng, 100_000, flip_sign=inject_ste_bug),
                equivalence_tanh_statewise(rng, 1000 // scale, flip_sign=inject_ste_bug))
    out.append(SuiteResult("closed-form vs stable MD (tanh)", worst < 1e-9, worst, 1e-9,
                           f"max closed-vs-stable deviation {worst:.3e}"))
    worst = equivalence_softmax(rng, 10_000 // scale, flip_sign=inject_ste_bug)
    out.append(SuiteResult("closed-form vs stable MD (softmax)", worst < 1e-9, worst, 1e-9,
                           f"max closed-vs-stable deviation {worst:.3e}"))

    worst = max(prox_tanh(rng, 100 // scale), prox_softmax(rng, 100 // scale))
    out.append(SuiteResult("proximal optimality vs golden-section oracle", worst < 1e-6, worst, 1e-6))

    for m in (MirrorMap.tanh(), MirrorMap.entropy(3), MirrorMap.shifted_tanh()):
        worst = mirror_grad_fd(m, rng, 1000 // scale)
        out.append(SuiteResult(f"grad Phi = P^-1 ({m.kind})", worst < 1e-6, worst, 1e-6))
        gap = mirror_convexity(m, rng, 1000 // scale)
        out.append(SuiteResult(f"strict convexity ({m.kind})", gap > 1e-15, gap, 1e-15, "min Jensen gap"))
        norms = mirror_boundary(m)
        grows = all(b > a for a, b in zip(norms, norms[1:])) and norms[-1] > 8.0
        out.append(SuiteResult(f"boundary divergence ({m.kind})", grows, norms[-1], 8.0,
                               "|grad Phi| at distance 1e-8"))

    violations = epsilon_violations(rng, 1000 // scale, 1000)
    out.append(SuiteResult("epsilon-discreteness", violations == 0, float(violations), 0.0, "violations"))

    worst = max(max(mlp_grad_check(s) for s in range(10)), max(u_space_grad_check(s) for s in range(10)))
    out.append(SuiteResult("backprop and u-space chain rule vs finite differences", worst < 1e-5, worst, 1e-5))

    ratio = convex_bound_ratio()
    out.append(SuiteResult("averaged-iterate gap within convergence bound", ratio <= 1.0, ratio, 1.0,
                           "max gap/bound"))
    return out
