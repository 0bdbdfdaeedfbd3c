import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnmtf import HyperParams, MaskedMatrix, NmfState, NmtfState, VbNmfState, VbNmtfState, predict
from bnmtf.distributions import seeded_rng
from bnmtf.initialise import KMEANS_SMOOTHING, init_state, kmeans
from bnmtf.state import GammaFactor, TnFactor


def test_hyper_defaults_and_validation():
    h = HyperParams()
    assert (h.lambda_, h.alpha_tau, h.beta_tau, h.alpha0, h.beta0) == (0.1, 1.0, 1.0, 1.0, 1.0)
    for bad in (dict(K=0), dict(L=0), dict(lambda_=0.0), dict(beta0=-1.0)):
        with pytest.raises(ValueError):
            HyperParams(**bad)


def test_predict_examples():
    ones = NmfState(np.ones((3, 10)), np.ones((4, 10)))
    assert np.all(predict(ones) == 10.0)
    s = NmfState(np.array([[2.0], [3.0]]), np.array([[1.0], [4.0]]))
    assert np.array_equal(predict(s), [[2.0, 8.0], [3.0, 12.0]])


def test_predict_nmtf_identity_reduces_to_nmf():
    rng = np.random.default_rng(0)
    F, G = rng.random((5, 3)), rng.random((4, 3))
    assert np.array_equal(predict(NmtfState(F, np.eye(3), G)), predict(NmfState(F, G)))


def test_predict_point_and_zero_variance_vb_agree():
    rng = np.random.default_rng(1)
    U, V = rng.random((5, 2)), rng.random((4, 2))
    vb = VbNmfState(TnFactor.point(U), TnFactor.point(V), GammaFactor(np.array(2.0), np.array(1.0)))
    assert np.array_equal(predict(vb), predict(NmfState(U, V)))
    F, S, G = rng.random((5, 2)), rng.random((2, 3)), rng.random((4, 3))
    vbt = VbNmtfState(TnFactor.point(F), TnFactor.point(S), TnFactor.point(G),
                      GammaFactor(np.array(2.0), np.array(1.0)))
    assert np.array_equal(predict(vbt), predict(NmtfState(F, S, G)))
    with pytest.raises(TypeError):
        predict("not a state")


def test_tn_factor_cached_moments():
    f = TnFactor(np.array([[-1.0, 2.0]]), np.array([[1.0, 4.0]]))
    assert np.all(f.second >= f.mean ** 2)
    f.mu[0, 0] = 3.0
    f.refresh((0, 0))
    assert f.mean[0, 0] == pytest.approx(3.0, abs=0.01)


def test_prior_mean_init():
    data = MaskedMatrix.fully_observed(np.ones((4, 3)))
    s = init_state("nmf", data, HyperParams(K=2), "prior_mean", seeded_rng(0))
    assert np.all(s.U == 10.0) and np.all(s.V == 10.0) and s.tau == 1.0
    t = init_state("nmtf", data, HyperParams(K=2, L=3), "prior_mean", seeded_rng(0))
    assert t.S.shape == (2, 3) and np.all(t.S == 10.0)


def test_random_draw_init_mean():
    data = MaskedMatrix.fully_observed(np.ones((100, 80)))
    s = init_state("nmf", data, HyperParams(K=10, lambda_=1.0), "random_draw", seeded_rng(1))
    assert s.U.mean() == pytest.approx(1.0, abs=0.05)
    assert s.V.mean() == pytest.approx(1.0, abs=0.05)


def test_init_is_deterministic():
    data = MaskedMatrix.fully_observed(np.ones((6, 5)))
    for model in ("nmf", "nmtf"):
        a = init_state(model, data, HyperParams(K=2), "random_draw", seeded_rng(3))
        b = init_state(model, data, HyperParams(K=2), "random_draw", seeded_rng(3))
        for name in ("U", "V") if model == "nmf" else ("F", "S", "G"):
            assert np.array_equal(getattr(a, name), getattr(b, name))


def test_ard_and_vb_init():
    data = MaskedMatrix.fully_observed(np.ones((6, 5)))
    h = HyperParams(K=3, ard=True, alpha0=2.0, beta0=4.0)
    s = init_state("nmf", data, h, "random_draw", seeded_rng(0))
    assert np.array_equal(s.ard_lambda, np.full(3, 0.5))
    vb = init_state("nmf", data, h, "random_draw", seeded_rng(0), flavour="vb")
    assert np.all(vb.U.tau == 1.0)
    assert np.array_equal(vb.ard.mean, np.full(3, 0.5))
    assert float(vb.tau.mean) == 1.0


def _two_cluster_data():
    rows = np.array([[10.0, 0.0, 10.0], [0.0, 10.0, 0.0]])
    return np.repeat(rows, [4, 3], axis=0)


def test_kmeans_recovers_planted_clusters():
    X = _two_cluster_data()
    ind = kmeans(X, 2, seeded_rng(0))
    assert np.all(ind.sum(axis=1) == 1)
    labels = ind.argmax(axis=1)
    assert len(set(labels[:4])) == 1 and len(set(labels[4:])) == 1 and labels[0] != labels[4]


def test_kmeans_one_point_per_cluster():
    X = np.arange(12.0).reshape(4, 3)
    ind = kmeans(X, 4, seeded_rng(1))
    assert np.array_equal(np.sort(ind.argmax(axis=1)), np.arange(4))
    assert np.all(ind.sum(axis=0) == 1)


def test_kmeans_errors():
    with pytest.raises(ValueError):
        kmeans(np.ones((3, 2)), 0, seeded_rng(0))
    with pytest.raises(ValueError):
        kmeans(np.ones((3, 2)), 4, seeded_rng(0))


def test_kmeans_imputes_missing_entries():
    X = _two_cluster_data()
    mask = np.ones(X.shape, dtype=bool)
    mask[0, 1] = False
    ind = kmeans(np.where(mask, X, 1e6), 2, seeded_rng(0), mask=mask)
    assert ind[0].argmax() == ind[1].argmax()


def test_kmeans_init_indicator_values():
    data = MaskedMatrix.fully_observed(_two_cluster_data())
    h = HyperParams(K=2, L=2)
    s = init_state("nmtf", data, h, "kmeans", seeded_rng(0))
    assert set(np.unique(s.F)) == {KMEANS_SMOOTHING, 1.0 + KMEANS_SMOOTHING}
    np_state = init_state("nmtf", data, h, "kmeans", seeded_rng(0), flavour="np")
    assert set(np.unique(np_state.G)) == {0.0, 1.0}
    vb = init_state("nmtf", data, h, "kmeans", seeded_rng(0), flavour="vb")
    assert set(np.unique(vb.F.mu)) == {0.0, 1.0}
    assert np.all(vb.F.tau == 1.0)
    with pytest.raises(ValueError):
        init_state("nmf", data, HyperParams(K=2), "kmeans", seeded_rng(0))
    with pytest.raises(ValueError):
        init_state("nmtf", data, HyperParams(K=8, L=2), "kmeans", seeded_rng(0))
    with pytest.raises(ValueError):
        init_state("nmf", data, h, "bogus", seeded_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["nmf", "nmtf"]), st.sampled_from(["prior_mean", "random_draw"]),
       st.sampled_from(["point", "np", "vb"]), st.booleans(), st.integers(0, 1000))
def test_init_satisfies_invariants(model, strategy, flavour, ard, seed):
    data = MaskedMatrix.fully_observed(np.ones((5, 4)))
    s = init_state(model, data, HyperParams(K=2, ard=ard), strategy, seeded_rng(seed), flavour)
    names = ("U", "V") if model == "nmf" else ("F", "S", "G")
    for name in names:
        X = getattr(s, name)
        if flavour == "vb":
            assert np.all(X.tau > 0) and np.all(X.second >= X.mean ** 2) and np.all(X.mean >= 0)
        else:
            assert np.all(X >= 0)
    if flavour != "vb":
        assert s.tau > 0
