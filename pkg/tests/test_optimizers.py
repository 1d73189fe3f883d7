import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirrorquant.optimizers import (
    AdamState,
    BetaSchedule,
    OptimizerState,
    StepSizeSchedule,
    adam_precondition,
    anneal_beta,
    bc_ste_step,
    epsilon_gamma,
    finalize_quantize,
    gd_proj_step,
    md_softmax_step,
    md_tanh_step,
    pgd_step,
    stable_md_step,
)
from mirrorquant.projections import Projection, QuantLevels, tanh_inverse

TANH = Projection("tanh")


def test_md_tanh_examples():
    assert md_tanh_step(0.0, 0.0, 0.1, 2.0) == 0.0
    assert md_tanh_step(0.0, 1.0, 1.0, 1.0) == pytest.approx(-float(mp.tanh(1)), abs=1e-15)


def test_md_tanh_rejects_non_finite_gradient():
    with pytest.raises(ValueError):
        md_tanh_step(0.0, np.nan, 0.1, 1.0)


def test_md_tanh_extreme_step_stays_interior():
    w = md_tanh_step(np.array([0.5, -0.5]), np.array([-1e6, 1e6]), 1.0, 100.0)
    assert np.all(np.isfinite(w)) and np.all(np.abs(w) < 1)


def test_md_softmax_examples():
    u = np.array([0.5, 0.5])
    np.testing.assert_allclose(md_softmax_step(u, np.zeros(2), 1.0, 1.0), u)
    e = math.exp(-1)
    np.testing.assert_allclose(md_softmax_step(u, np.array([1.0, 0.0]), 1.0, 1.0),
                               [e / (1 + e), 1 / (1 + e)], rtol=1e-14)


def test_stable_step_examples():
    s = OptimizerState.from_dual(np.zeros(3), TANH, 1.0)
    s2 = stable_md_step(s, np.zeros(3), 0.1)
    np.testing.assert_array_equal(s2.dual, s.dual)
    np.testing.assert_array_equal(s2.primal, s.primal)

    s = OptimizerState.from_primal(np.array([0.3]), TANH, 2.0)
    closed = md_tanh_step(np.array([0.3]), np.array([0.7]), 0.05, 2.0)
    assert np.max(np.abs(stable_md_step(s, np.array([0.7]), 0.05).primal - closed)) < 1e-9


def test_stable_step_shifted_tanh_stays_interior():
    rng = np.random.default_rng(0)
    s = OptimizerState.from_dual(np.zeros(16), Projection("shifted_tanh"), 3.0)
    for _ in range(10_000 // 16):
        s = stable_md_step(s, rng.normal(size=16) * 5, 1.0)
        assert np.all(np.abs(s.primal) <= 1.0)
        assert np.all(np.isfinite(s.primal))


def test_stable_step_matches_closed_form_softmax():
    rng = np.random.default_rng(1)
    u = rng.dirichlet(np.ones(3), size=5)
    g = rng.normal(size=(5, 3))
    s = OptimizerState.from_primal(u, Projection("softmax", 3), 2.0)
    np.testing.assert_allclose(stable_md_step(s, g, 0.3).primal, md_softmax_step(u, g, 0.3, 2.0), atol=1e-12)


@settings(max_examples=200)
@given(w=st.floats(-0.999, 0.999), g=st.floats(-10, 10), eta=st.floats(1e-4, 1.0), beta=st.floats(1.0, 20.0))
def test_closed_form_equals_stable_tanh(w, g, eta, beta):
    s = OptimizerState.from_primal(np.array([w]), TANH, beta)
    stable = stable_md_step(s, np.array([g]), eta, clip=None).primal
    assert abs(stable[0] - md_tanh_step(w, g, eta, beta)) < 1e-9


def test_gd_proj_example_and_sign_rejected():
    s = OptimizerState.from_dual(np.zeros(1), TANH, 1.0)
    np.testing.assert_allclose(gd_proj_step(s, np.ones(1), 1.0).dual, [-1.0])
    sign_state = OptimizerState(primal=np.ones(1), dual=np.ones(1), projection=Projection("sign"))
    with pytest.raises(ValueError):
        gd_proj_step(sign_state, np.ones(1), 1.0)


def test_gd_proj_gradient_vanishes_where_stable_md_does_not():
    # at a saturated dual the projection Jacobian is ~0, so gd_proj is stuck
    s = OptimizerState.from_dual(np.array([0.5]), TANH, 50.0)
    g = np.array([1.0])
    moved_gd = abs(gd_proj_step(s, g, 0.1).dual[0] - 0.5)
    moved_md = abs(stable_md_step(s, g, 0.1).dual[0] - 0.5)
    assert moved_gd < 1e-15
    assert moved_md == pytest.approx(0.1)


def test_bc_ste_examples():
    s = OptimizerState(primal=np.ones(1), dual=np.array([0.2]), projection=Projection("sign"))
    out = bc_ste_step(s, np.zeros(1), 0.1)
    assert out.primal[0] == 1.0 and out.dual[0] == 0.2
    out = bc_ste_step(OptimizerState(np.ones(1), np.array([0.9])), np.array([-10.0]), 1.0)
    assert out.dual[0] == 1.0 and out.primal[0] == 1.0
    out = bc_ste_step(OptimizerState(np.ones(1), np.array([0.1])), np.array([0.5]), 1.0)
    assert out.dual[0] == pytest.approx(-0.4) and out.primal[0] == -1.0


def test_pgd_examples():
    assert pgd_step(0.0, 0.1, 1.0) == pytest.approx(-0.1)
    assert pgd_step(0.95, -1.0, 1.0) == 1.0


def test_adam_first_step_is_unit_sign():
    g = np.array([3.0, -0.2, 1e-3])
    ghat, st_ = adam_precondition(g, AdamState.zeros_like(g))
    np.testing.assert_allclose(ghat, np.sign(g), rtol=1e-4)
    assert st_.t == 1


def test_adam_zero_stream():
    st_ = AdamState.zeros_like(np.zeros(4))
    for _ in range(20):
        ghat, st_ = adam_precondition(np.zeros(4), st_)
        assert np.all(ghat == 0.0)


def test_adam_moments_decay():
    st_ = AdamState.zeros_like(np.zeros(1))
    _, st_ = adam_precondition(np.ones(1), st_)
    for _ in range(1000):
        ghat, st_ = adam_precondition(np.zeros(1), st_)
    # oracle: m_hat / sqrt(v_hat) after k zero steps
    t = 1001
    m_hat = 0.1 * 0.9 ** 1000 / (1 - 0.9 ** t)
    v_hat = 0.001 * 0.999 ** 1000 / (1 - 0.999 ** t)
    assert np.linalg.norm(ghat) < 1e-3
    assert ghat[0] == pytest.approx(m_hat / (math.sqrt(v_hat) + 1e-8), rel=1e-9)


def test_anneal_beta_examples():
    assert anneal_beta(BetaSchedule(1.0, 1.02, 200), 0) == 1.0
    assert anneal_beta(BetaSchedule(1.0, 2.0, 1, cap=8.0), 10) == 8.0
    assert anneal_beta(BetaSchedule(1.0, 1.02, 200), 400) == pytest.approx(1.02 ** 2)
    assert BetaSchedule(1.0, 1.1, 1, cap=1e4)(10**9) == 1e4


@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_anneal_beta_nondecreasing(a, b):
    sch = BetaSchedule(1.0, 1.05, 7, cap=500.0)
    lo, hi = sorted((a, b))
    assert 1.0 <= sch(lo) <= sch(hi) <= 500.0


def test_step_size_schedule():
    sch = StepSizeSchedule(0.01, 0.1, 100)
    assert sch(99) == 0.01 and sch(100) == pytest.approx(0.001)


@pytest.mark.parametrize("kw", [dict(beta0=0.5), dict(scale=0.9), dict(interval=0), dict(beta0=10.0, cap=5.0)])
def test_bad_schedules_rejected(kw):
    with pytest.raises(ValueError):
        BetaSchedule(**kw)


def test_epsilon_gamma_examples():
    assert epsilon_gamma(10, 0.01) == pytest.approx(float(mp.log(mp.mpf("1.99") / mp.mpf("0.01")) / 20), abs=1e-15)
    assert epsilon_gamma(10, 0.01) == pytest.approx(0.264665, abs=1e-6)
    assert epsilon_gamma(1, 1 - math.tanh(1)) == pytest.approx(1.0, abs=1e-12)
    assert epsilon_gamma(1, 0.5) == pytest.approx(float(mp.atanh(0.5)), abs=1e-15)


@pytest.mark.parametrize("eps", [0.0, 1.0, 1.5, -0.1])
def test_epsilon_gamma_domain(eps):
    with pytest.raises(ValueError):
        epsilon_gamma(1.0, eps)


@settings(max_examples=100)
@given(B=st.floats(1.0, 100.0), eps=st.floats(1e-4, 0.5), scale=st.floats(1.001, 50.0))
def test_epsilon_gamma_guarantee(B, eps, scale):
    x = scale * epsilon_gamma(B, eps)
    assert 1 - abs(math.tanh(B * x)) < eps


def test_finalize_quantize_examples():
    assert finalize_quantize(np.array([0.7]), QuantLevels.binary())[0] == 1.0
    assert finalize_quantize(np.array([0.4]), QuantLevels.ternary())[0] == 0.0
    u = np.array([[0.2, 0.5, 0.3]])
    assert finalize_quantize(u, QuantLevels.ternary(), space="u")[0] == 0.0


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=50))
def test_finalize_lands_in_levels(ws):
    for lv in (QuantLevels.binary(), QuantLevels.ternary()):
        out = finalize_quantize(np.array(ws), lv)
        assert set(out.tolist()) <= set(lv.levels)


def test_with_beta_reprojects():
    s = OptimizerState.from_dual(np.array([0.2]), TANH, 1.0)
    s2 = s.with_beta(5.0)
    assert s2.primal[0] == pytest.approx(math.tanh(1.0))
    assert s.primal[0] == pytest.approx(math.tanh(0.2))


def test_from_primal_clamps_boundary():
    s = OptimizerState.from_primal(np.array([1.0, -1.0]), TANH, 1.0)
    assert np.all(np.isfinite(s.dual))
    np.testing.assert_allclose(s.dual, tanh_inverse(s.primal, 1.0))
