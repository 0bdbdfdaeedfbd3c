import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from bnmtf import HyperParams, MaskedMatrix, NmfState, NmtfState, StopRule, predict
from bnmtf.distributions import seeded_rng
from bnmtf.gibbs import cond_factor_entry
from bnmtf.initialise import init_state
from bnmtf.state import GammaFactor, TnFactor, VbNmfState, VbNmtfState
from bnmtf.vb import (
    elbo,
    expected_residual_sq,
    vb_run,
    vb_sweep,
    vb_update_ard,
    vb_update_factor_entry,
    vb_update_tau,
)

from conftest import random_instance


def _tn(rng, shape):
    return TnFactor(rng.normal(0.8, 0.7, shape), rng.uniform(0.8, 4.0, shape))


def _vb_nmf(rng, I=3, J=2, K=2, ard=False):
    return VbNmfState(_tn(rng, (I, K)), _tn(rng, (J, K)), GammaFactor(np.array(6.0), np.array(3.0)),
                      GammaFactor(np.full(K, 3.0), np.full(K, 2.0)) if ard else None)


def _vb_nmtf(rng, I=3, J=2, K=2, L=2):
    return VbNmtfState(_tn(rng, (I, K)), _tn(rng, (K, L)), _tn(rng, (J, L)),
                       GammaFactor(np.array(6.0), np.array(3.0)))


def _draw(factor, n, rng):
    a = -factor.mu * np.sqrt(factor.tau)
    return stats.truncnorm.rvs(a, np.inf, loc=factor.mu, scale=1 / np.sqrt(factor.tau),
                               size=(n,) + factor.mu.shape, random_state=rng)


def _masked(rng, I=3, J=2):
    mask = rng.random((I, J)) > 0.3
    mask[0, 0] = True
    return MaskedMatrix(rng.exponential(2.0, (I, J)), mask)


# --------------------------------------------------------------------------- #
# Expected squared residuals
# --------------------------------------------------------------------------- #

def test_expected_residual_hand_value():
    U = TnFactor(np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1)), np.full((1, 1), 2.0))
    state = VbNmfState(U, TnFactor.point([[1.0]]), GammaFactor(np.array(1.0), np.array(1.0)))
    data = MaskedMatrix.fully_observed([[2.0]])
    assert expected_residual_sq(state, data)[0, 0] == pytest.approx(3.0, abs=1e-14)


def test_expected_residual_nmf_monte_carlo():
    rng = np.random.default_rng(1)
    state = _vb_nmf(rng)
    data = _masked(rng)
    U, V = _draw(state.U, 200_000, rng), _draw(state.V, 200_000, rng)
    sq = (data.values - np.einsum("nik,njk->nij", U, V)) ** 2
    se = sq.std(axis=0) / math.sqrt(len(sq))
    assert np.all(np.abs(sq.mean(axis=0) - expected_residual_sq(state, data)) < 5 * se)


def test_expected_residual_nmtf_monte_carlo():
    rng = np.random.default_rng(2)
    state = _vb_nmtf(rng)
    data = _masked(rng)
    n = 200_000
    F, S, G = (_draw(f, n, rng) for f in (state.F, state.S, state.G))
    sq = (data.values - np.einsum("nik,nkl,njl->nij", F, S, G)) ** 2
    se = sq.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(sq.mean(axis=0) - expected_residual_sq(state, data)) < 5 * se)


def test_expected_residual_single_inner_factor_reduces():
    # With a point-mass identity S, tri-factorisation is plain factorisation.
    rng = np.random.default_rng(3)
    a = _vb_nmf(rng, K=2)
    b = VbNmtfState(a.U.copy(), TnFactor.point(np.eye(2)), a.V.copy(), a.tau.copy())
    data = _masked(rng)
    np.testing.assert_allclose(expected_residual_sq(b, data), expected_residual_sq(a, data), rtol=1e-12)
    c = _vb_nmf(rng, K=1)
    d = VbNmtfState(c.U.copy(), TnFactor.point([[1.0]]), c.V.copy(), c.tau.copy())
    np.testing.assert_allclose(expected_residual_sq(d, data), expected_residual_sq(c, data), rtol=1e-12)


def test_expected_residual_point_state_is_squared_error():
    rng = np.random.default_rng(4)
    U, V = rng.random((3, 2)), rng.random((2, 2))
    state = VbNmfState(TnFactor.point(U), TnFactor.point(V), GammaFactor(np.array(1.0), np.array(1.0)))
    data = _masked(rng)
    np.testing.assert_allclose(expected_residual_sq(state, data), (data.values - U @ V.T) ** 2, atol=1e-14)


# --------------------------------------------------------------------------- #
# Coordinate updates
# --------------------------------------------------------------------------- #

def test_vb_update_tau_example():
    data = MaskedMatrix.fully_observed(np.ones((2, 4)))
    state = VbNmfState(TnFactor.point(np.ones((2, 1))), TnFactor.point(np.ones((4, 1))),
                       GammaFactor(np.array(1.0), np.array(1.0)))
    p = vb_update_tau(state, data, HyperParams(K=1))
    assert (p.alpha, p.beta) == (5.0, 1.0)
    assert float(state.tau.mean) == 5.0


def _entry_oracle(state, data, hyper, which, row, col):
    """Optimal q for one entry: log q(x) = -E[rate] x - E[tau]/2 sum E[residual^2 | x],
    a quadratic in x, recovered from three points."""
    def log_q(x):
        s = state.copy()
        f = getattr(s, which)
        f.mean[row, col], f.var[row, col] = x, 0.0
        ers = expected_residual_sq(s, data)[data.mask].sum()
        if isinstance(s, VbNmfState) and s.ard is not None:
            rate = s.ard.mean[col]
        else:
            rate = hyper.lambda_
        return -rate * x - 0.5 * float(s.tau.mean) * ers

    f0, f1, f2 = log_q(0.0), log_q(1.0), log_q(2.0)
    tau = -(f0 - 2 * f1 + f2)
    return (f1 - f0 + 0.5 * tau) / tau, tau


@pytest.mark.parametrize("ard", [False, True])
@pytest.mark.parametrize("which,row,col", [("U", 0, 0), ("U", 2, 1), ("V", 1, 0)])
def test_nmf_entry_update_matches_oracle(which, row, col, ard):
    rng = np.random.default_rng(5)
    state, data = _vb_nmf(rng, ard=ard), _masked(rng)
    h = HyperParams(K=2, lambda_=0.3, ard=ard)
    mu, tau = _entry_oracle(state, data, h, which, row, col)
    p = vb_update_factor_entry(which, row, col, state, data, h)
    assert p.mu == pytest.approx(mu, rel=1e-9)
    assert p.tau == pytest.approx(tau, rel=1e-9)
    f = getattr(state, which)
    assert (f.mu[row, col], f.tau[row, col]) == (p.mu, p.tau)


@pytest.mark.parametrize("which,row,col", [("F", 0, 1), ("F", 2, 0), ("S", 0, 1), ("S", 1, 1), ("G", 1, 0)])
def test_nmtf_entry_update_matches_oracle(which, row, col):
    rng = np.random.default_rng(6)
    state, data = _vb_nmtf(rng), _masked(rng)
    h = HyperParams(K=2, L=2, lambda_=0.3)
    mu, tau = _entry_oracle(state, data, h, which, row, col)
    p = vb_update_factor_entry(which, row, col, state, data, h)
    assert p.mu == pytest.approx(mu, rel=1e-9)
    assert p.tau == pytest.approx(tau, rel=1e-9)


def test_update_refreshes_cached_moments():
    rng = np.random.default_rng(7)
    state, data = _vb_nmf(rng), _masked(rng)
    vb_update_factor_entry("U", 1, 0, state, data, HyperParams(K=2))
    ref = TnFactor(state.U.mu.copy(), state.U.tau.copy())
    np.testing.assert_array_equal(state.U.mean, ref.mean)
    np.testing.assert_array_equal(state.U.var, ref.var)


def test_zero_variance_update_matches_point_conditional():
    rng = np.random.default_rng(8)
    data = _masked(rng, 4, 3)
    F, S, G = rng.random((4, 2)), rng.random((2, 2)), rng.random((3, 2))
    tau = GammaFactor(np.array(4.0), np.array(2.0))
    h = HyperParams(K=2, L=2)
    point = NmtfState(F, S, G, 2.0)
    for which, idx in (("F", (1, 0)), ("S", (0, 1)), ("G", (2, 1))):
        vb = VbNmtfState(TnFactor.point(F), TnFactor.point(S), TnFactor.point(G), tau.copy())
        p = vb_update_factor_entry(which, *idx, vb, data, h)
        c = cond_factor_entry(which, *idx, point, data, h)
        assert p.mu == pytest.approx(c.mu, rel=1e-12)
        assert p.tau == pytest.approx(c.tau, rel=1e-12)


def test_ard_update_examples():
    U = TnFactor.point([[1.0], [2.0]])
    V = TnFactor.point([[2.0], [3.0]])
    s = VbNmfState(U, V, GammaFactor(np.array(1.0), np.array(1.0)), GammaFactor(np.ones(1), np.ones(1)))
    p = vb_update_ard("lambda", s, HyperParams(K=1, ard=True))
    assert (p.alpha[0], p.beta[0]) == (5.0, 9.0)
    rng = np.random.default_rng(9)
    t = _vb_nmtf(rng, I=3, J=4)
    t.ard_F = GammaFactor(np.ones(2), np.ones(2))
    t.ard_G = GammaFactor(np.ones(2), np.ones(2))
    h = HyperParams(K=2, L=2, ard=True)
    assert np.all(vb_update_ard("F", t, h).alpha == 1 + 3)
    assert np.all(vb_update_ard("G", t, h).alpha == 1 + 4)
    np.testing.assert_allclose(t.ard_G.beta, 1 + t.G.mean.sum(axis=0))
    with pytest.raises(ValueError):
        vb_update_ard("lambda", _vb_nmf(rng), h)


def test_identity_inner_factor_sweep_matches_nmf():
    data = random_instance(1)
    h = HyperParams(K=3, L=3)
    a = init_state("nmf", data, HyperParams(K=3), "random_draw", seeded_rng(4), flavour="vb")
    b = VbNmtfState(a.U.copy(), TnFactor.point(np.eye(3)), a.V.copy(), a.tau.copy())
    vb_sweep(a, data, HyperParams(K=3))
    vb_sweep(b, data, h, fixed=("S",))
    np.testing.assert_allclose(b.F.mu, a.U.mu, rtol=1e-10)
    np.testing.assert_allclose(b.G.tau, a.V.tau, rtol=1e-10)
    assert float(b.tau.beta) == pytest.approx(float(a.tau.beta), rel=1e-10)


# --------------------------------------------------------------------------- #
# Runs and the bound
# --------------------------------------------------------------------------- #

@pytest.mark.parametrize("model", ["nmf", "nmtf"])
@pytest.mark.parametrize("ard", [False, True])
def test_elbo_never_decreases(model, ard):
    for seed in range(4):
        data = random_instance(seed)
        h = HyperParams(K=3, L=2 if model == "nmtf" else None, ard=ard)
        _, trace = vb_run(data, h, model=model, stop=StopRule(60), seed=seed)
        diffs = np.diff(trace.elbo)
        assert np.all(diffs >= -1e-8 * np.abs(trace.elbo[1:])), diffs.min()


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_elbo_below_log_evidence():
    R, h = 1.5, HyperParams(K=1, lambda_=1.0, alpha_tau=2.0, beta_tau=1.0)
    a, b = h.alpha_tau, h.beta_tau

    def integrand(v, u):
        # tau integrated out analytically: a Student-t likelihood in u v
        m = u * v
        log_lik = (special.gammaln(a + 0.5) - special.gammaln(a) + a * math.log(b)
                   - 0.5 * math.log(2 * math.pi) - (a + 0.5) * math.log(b + 0.5 * (R - m) ** 2))
        return math.exp(-u - v + log_lik)

    evidence = integrate.dblquad(integrand, 0, 40, 0, 40, epsabs=1e-10, epsrel=1e-8)[0]
    data = MaskedMatrix.fully_observed([[R]])
    state, trace = vb_run(data, h, stop=StopRule(300), seed=0)
    bound = trace.elbo[-1]
    assert bound <= math.log(evidence)
    assert bound == pytest.approx(elbo(state, data, h))
    assert math.log(evidence) - bound < 1.0


def test_zero_sweeps_and_determinism():
    data = random_instance(2)
    h = HyperParams(K=3)
    s0, t0 = vb_run(data, h, stop=StopRule(0), seed=1)
    init = init_state("nmf", data, h, "random_draw", seeded_rng(1), flavour="vb")
    assert len(t0) == 1
    np.testing.assert_array_equal(s0.U.mu, init.U.mu)
    a, ta = vb_run(data, h, stop=StopRule(30), seed=1)
    b, tb = vb_run(data, h, stop=StopRule(30), seed=1)
    assert ta.train_mse == tb.train_mse
    np.testing.assert_array_equal(predict(a), predict(b))


def test_cached_second_moment_dominates_mean_squared():
    data = random_instance(3)
    state, _ = vb_run(data, HyperParams(K=3, L=2), model="nmtf", stop=StopRule(40), seed=2)
    for f in (state.F, state.S, state.G):
        assert np.all(f.var >= 0)
        assert np.all(f.second >= f.mean ** 2)
        assert np.all(f.mean >= 0)


def test_mask_invariance():
    data = random_instance(4)
    other = MaskedMatrix(np.where(data.mask, data.values, -7e5), data.mask)
    h = HyperParams(K=3)
    a, ta = vb_run(data, h, stop=StopRule(20), seed=3)
    b, tb = vb_run(other, h, stop=StopRule(20), seed=3)
    np.testing.assert_array_equal(a.U.mu, b.U.mu)
    assert ta.elbo == tb.elbo


def test_point_of_vb_state_uses_expectations():
    rng = np.random.default_rng(10)
    s = _vb_nmf(rng)
    p = s.point()
    assert isinstance(p, NmfState)
    np.testing.assert_array_equal(predict(p), predict(s))
    assert p.tau == pytest.approx(2.0)
