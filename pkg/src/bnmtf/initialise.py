"""Initialisation strategies: prior mean, random prior draws, and K-means
cluster indicators for the outer factors of tri-factorisation."""
from __future__ import annotations

import numpy as np

from .distributions import sample_exponential, sample_gamma
from .masked import MaskedMatrix
from .state import (
    GammaFactor,
    HyperParams,
    NmfState,
    NmtfState,
    TnFactor,
    VbNmfState,
    VbNmtfState,
)

STRATEGIES = ("prior_mean", "random_draw", "kmeans")
FLAVOURS = ("point", "np", "vb")

KMEANS_SMOOTHING = 0.2
VB_INIT_PRECISION = 1.0


def impute_column_means(points, mask=None) -> np.ndarray:
    """Replace unobserved entries by the mean of the observed entries in their column."""
    points = np.asarray(points, dtype=np.float64)
    if mask is None:
        mask = ~np.isnan(points)
    mask = np.asarray(mask, dtype=bool)
    filled = np.where(mask, points, 0.0)
    counts = mask.sum(axis=0)
    means = np.divide(filled.sum(axis=0), counts, out=np.zeros(points.shape[1]), where=counts > 0)
    return np.where(mask, filled, means[None, :])


def _sq_dists(points, centres):
    d = (points * points).sum(1)[:, None] - 2.0 * points @ centres.T + (centres * centres).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(points, k: int, rng: np.random.Generator, mask=None, max_iter: int = 100) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; returns N x k 0/1 indicators.

    Missing entries (given by ``mask`` or NaN) are imputed by column means.
    Every cluster ends up non-empty.
    """
    points = impute_column_means(points, mask)
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise ValueError(f"cannot form {k} clusters from {n} points")

    centres = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centres[0] = points[first]
    chosen = [first]
    closest = _sq_dists(points, centres[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(remaining))
        chosen.append(idx)
        centres[c] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centres[c:c + 1])[:, 0])

    labels = np.full(n, -1)
    for _ in range(max_iter):
        new_labels = np.argmin(_sq_dists(points, centres), axis=1)
        counts = np.bincount(new_labels, minlength=k)
        for c in np.flatnonzero(counts == 0):
            # Re-seed at the point farthest from its current centre.
            d = _sq_dists(points, centres)[np.arange(n), new_labels]
            d[counts[new_labels] <= 1] = -1.0
            far = int(np.argmax(d))
            counts[new_labels[far]] -= 1
            new_labels[far] = c
            counts[c] = 1
            centres[c] = points[far]
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            centres[c] = points[labels == c].mean(axis=0)

    indicators = np.zeros((n, k))
    indicators[np.arange(n), labels] = 1.0
    return indicators


def _entry_rates(hyper: HyperParams):
    return hyper.ard_mean if hyper.ard else hyper.lambda_


def _factor(strategy, shape, rate, rng):
    if strategy == "prior_mean":
        return np.full(shape, 1.0 / rate)
    return sample_exponential(rate, rng, size=shape)


def _tau(strategy, hyper, rng):
    if strategy == "prior_mean":
        return hyper.alpha_tau / hyper.beta_tau
    return float(sample_gamma(hyper.alpha_tau, hyper.beta_tau, rng))


def _check(strategy, flavour):
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown initialisation strategy {strategy!r}")
    if flavour not in FLAVOURS:
        raise ValueError(f"unknown state flavour {flavour!r}")


def _to_vb_factor(values):
    return TnFactor(np.array(values, dtype=float), np.full(np.shape(values), VB_INIT_PRECISION))


def init_nmf(data: MaskedMatrix, hyper: HyperParams, strategy: str, rng: np.random.Generator,
             flavour: str = "point"):
    """Initial NMF state. ``flavour`` selects point (Gibbs/ICM), np, or vb."""
    _check(strategy, flavour)
    if strategy == "kmeans":
        raise ValueError("K-means initialisation is only defined for tri-factorisation")
    I, J = data.shape
    K = hyper.K
    rate = _entry_rates(hyper)
    U = _factor(strategy, (I, K), rate, rng)
    V = _factor(strategy, (J, K), rate, rng)
    tau = _tau(strategy, hyper, rng)
    if flavour == "vb":
        ard = None
        if hyper.ard:
            ard = GammaFactor(np.full(K, hyper.alpha0), np.full(K, hyper.beta0))
        return VbNmfState(_to_vb_factor(U), _to_vb_factor(V),
                          GammaFactor(np.array(hyper.alpha_tau), np.array(hyper.beta_tau)), ard)
    ard = np.full(K, hyper.ard_mean) if hyper.ard else None
    return NmfState(U, V, tau, ard)


def init_nmtf(data: MaskedMatrix, hyper: HyperParams, strategy: str, rng: np.random.Generator,
              flavour: str = "point"):
    """Initial NMTF state.

    With ``kmeans``, F (G) are cluster indicators of the rows (columns) of the
    data, smoothed by +0.2 for point (Gibbs/ICM) states; S is a prior draw.
    """
    _check(strategy, flavour)
    I, J = data.shape
    K = hyper.K
    L = hyper.L if hyper.L is not None else hyper.K
    rate = _entry_rates(hyper)
    if strategy == "kmeans":
        if K > I or L > J:
            raise ValueError(f"K-means needs K <= I and L <= J, got K={K}, L={L} for {I}x{J}")
        F = kmeans(data.values, K, rng, mask=data.mask)
        G = kmeans(data.values.T, L, rng, mask=data.mask.T)
        if flavour == "point":
            F = F + KMEANS_SMOOTHING
            G = G + KMEANS_SMOOTHING
        S = _factor("random_draw", (K, L), hyper.lambda_, rng)
        tau = _tau("random_draw", hyper, rng)
    else:
        F = _factor(strategy, (I, K), rate, rng)
        S = _factor(strategy, (K, L), hyper.lambda_, rng)
        G = _factor(strategy, (J, L), rate, rng)
        tau = _tau(strategy, hyper, rng)
    if flavour == "vb":
        ard_F = ard_G = None
        if hyper.ard:
            ard_F = GammaFactor(np.full(K, hyper.alpha0), np.full(K, hyper.beta0))
            ard_G = GammaFactor(np.full(L, hyper.alpha0), np.full(L, hyper.beta0))
        return VbNmtfState(_to_vb_factor(F), _to_vb_factor(S), _to_vb_factor(G),
                           GammaFactor(np.array(hyper.alpha_tau), np.array(hyper.beta_tau)),
                           ard_F, ard_G)
    ard_F = np.full(K, hyper.ard_mean) if hyper.ard else None
    ard_G = np.full(L, hyper.ard_mean) if hyper.ard else None
    return NmtfState(F, S, G, tau, ard_F, ard_G)


def init_state(model: str, data: MaskedMatrix, hyper: HyperParams, strategy: str,
               rng: np.random.Generator, flavour: str = "point"):
    if model == "nmf":
        return init_nmf(data, hyper, strategy, rng, flavour)
    if model == "nmtf":
        return init_nmtf(data, hyper, strategy, rng, flavour)
    raise ValueError(f"unknown model {model!r}")
