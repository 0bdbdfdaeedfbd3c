"""Mean-field variational Bayes for nonnegative (tri-)factorisation.

q factorises fully: a truncated normal per factor entry, Gamma for the noise
precision and for each ARD rate. Coordinate updates follow the same order as
the Gibbs sampler (U, V, tau, lambda / F, S, G, tau, lambda_F, lambda_G), and
each updated entry's cached mean and variance are refreshed immediately.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy import special

from . import _updates
from .distributions import (
    GammaParams,
    TruncatedNormalParams,
    gamma_entropy,
    gamma_expected_log,
    seeded_rng,
    tn_entropy,
)
from .initialise import init_state
from .masked import MaskedMatrix, mse
from .state import GammaFactor, HyperParams, VbNmfState, VbNmtfState, predict
from .trace import Clock, StopRule, TraceRecord

_LOG_2PI = math.log(2.0 * math.pi)

DEFAULT_STOP = StopRule(max_iterations=500)


# --------------------------------------------------------------------------- #
# Expected squared residuals
# --------------------------------------------------------------------------- #

def expected_residual_sq_nmf(state: VbNmfState, data: MaskedMatrix) -> np.ndarray:
    """E_q[(R_ij - U_i V_j)^2] for every cell (meaningful on observed cells)."""
    U, V = state.U, state.V
    point = data.values - U.mean @ V.mean.T
    return point * point + U.second @ V.second.T - (U.mean ** 2) @ (V.mean ** 2).T


def expected_residual_sq_nmtf(state: VbNmtfState, data: MaskedMatrix) -> np.ndarray:
    """E_q[(R_ij - F_i S G_j)^2]: squared point residual, the summed variances of
    the F_ik S_kl G_jl terms, and the covariances between terms sharing F_ik
    or G_jl."""
    F, S, G = state.F, state.S, state.G
    Fm, Sm, Gm = F.mean, S.mean, G.mean
    point = data.values - Fm @ Sm @ Gm.T
    variances = F.second @ S.second @ G.second.T - (Fm ** 2) @ (Sm ** 2) @ (Gm ** 2).T
    SG = Sm @ Gm.T                       # K x J
    cov_shared_f = F.var @ (SG ** 2 - (Sm ** 2) @ (Gm ** 2).T)
    FS = Fm @ Sm                         # I x L
    cov_shared_g = (FS ** 2 - (Fm ** 2) @ (Sm ** 2)) @ G.var.T
    return point * point + variances + cov_shared_f + cov_shared_g


def expected_residual_sq(state, data: MaskedMatrix) -> np.ndarray:
    if isinstance(state, VbNmfState):
        return expected_residual_sq_nmf(state, data)
    return expected_residual_sq_nmtf(state, data)


# --------------------------------------------------------------------------- #
# Coordinate updates
# --------------------------------------------------------------------------- #

def _rate(state, hyper: HyperParams, which: str):
    if isinstance(state, VbNmfState):
        ard = state.ard if which in ("U", "V") else None
    else:
        ard = {"F": state.ard_F, "G": state.ard_G}.get(which)
    return ard.mean if ard is not None else hyper.lambda_


def _column_params(which, cols, state, data, hyper):
    R, M = data.values, data.weights
    tau = float(state.tau.mean)
    rate = _rate(state, hyper, which)
    if which == "U":
        U, V = state.U, state.V
        return _updates.outer_params(R, M, U.mean, V.mean, V.second, tau, rate, cols)
    if which == "V":
        U, V = state.U, state.V
        return _updates.outer_params(R.T, M.T, V.mean, U.mean, U.second, tau, rate, cols)
    F, S, G = state.F, state.S, state.G
    if which == "F":
        H, H2 = _updates.nmtf_partner(S.mean, G.mean, S.second, G.second)
        corr = _updates.nmtf_outer_correction(M, F.mean, S.mean, G.var, cols)
        return _updates.outer_params(R, M, F.mean, H, H2, tau, rate, cols, corr)
    if which == "G":
        H, H2 = _updates.nmtf_partner(S.mean.T, F.mean, S.second.T, F.second)
        corr = _updates.nmtf_outer_correction(M.T, G.mean, S.mean.T, F.var, cols)
        return _updates.outer_params(R.T, M.T, G.mean, H, H2, tau, rate, cols, corr)
    raise ValueError(f"unknown factor {which!r}")


def _s_params(k, l, state, data, hyper):
    F, S, G = state.F, state.S, state.G
    return _updates.s_entry_params(data.values, data.weights, F.mean, S.mean, G.mean,
                                   F.second, G.second, float(state.tau.mean), hyper.lambda_,
                                   k, l, F.var, G.var)


def vb_update_factor_entry(which: str, row: int, col: int, state, data: MaskedMatrix,
                           hyper: HyperParams) -> TruncatedNormalParams:
    """Update q of one entry in place and return its new TN parameters.

    ``(row, col)`` index the entry as in :func:`bnmtf.gibbs.cond_factor_entry`.
    """
    factor = getattr(state, which)
    if which == "S":
        mu, t = _s_params(row, col, state, data, hyper)
    else:
        mu_c, t_c = _column_params(which, [col], state, data, hyper)
        mu, t = float(mu_c[row, 0]), float(t_c[row, 0])
    factor.mu[row, col] = mu
    factor.tau[row, col] = t
    factor.refresh((row, col))
    return TruncatedNormalParams(mu, t)


def vb_update_factor(which: str, state, data: MaskedMatrix, hyper: HyperParams,
                     scheme: str = "sequential"):
    """Update every entry of one factor matrix in place."""
    factor = getattr(state, which)
    if which == "S":
        for k in range(factor.mu.shape[0]):
            for l in range(factor.mu.shape[1]):
                vb_update_factor_entry("S", k, l, state, data, hyper)
        return
    if scheme == "sequential":
        blocks = [slice(c, c + 1) for c in range(factor.mu.shape[1])]
    elif scheme == "synchronous":
        blocks = [slice(None)]
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    for cols in blocks:
        mu, t = _column_params(which, cols, state, data, hyper)
        factor.mu[:, cols] = mu
        factor.tau[:, cols] = t
        factor.refresh((slice(None), cols))


def vb_update_tau(state, data: MaskedMatrix, hyper: HyperParams) -> GammaParams:
    ers = expected_residual_sq(state, data)
    alpha = hyper.alpha_tau + data.n_observed / 2.0
    beta = hyper.beta_tau + 0.5 * float(np.sum(ers[data.mask]))
    state.tau = GammaFactor(np.array(alpha), np.array(beta))
    return GammaParams(alpha, beta)


def vb_update_ard(which: str, state, hyper: HyperParams) -> GammaParams:
    """Update q of the ARD rates: ``which`` is "lambda" (NMF), "F" or "G" (NMTF)."""
    if isinstance(state, VbNmfState):
        if state.ard is None:
            raise ValueError("state has no ARD rates")
        I, J = state.U.mu.shape[0], state.V.mu.shape[0]
        alpha = np.full(state.K, hyper.alpha0 + I + J)
        beta = hyper.beta0 + state.U.mean.sum(axis=0) + state.V.mean.sum(axis=0)
        state.ard = GammaFactor(alpha, beta)
        return GammaParams(alpha, beta)
    if state.ard_F is None:
        raise ValueError("state has no ARD rates")
    factor = {"F": state.F, "G": state.G}[which]
    alpha = np.full(factor.mu.shape[1], hyper.alpha0 + factor.mu.shape[0])
    beta = hyper.beta0 + factor.mean.sum(axis=0)
    setattr(state, "ard_" + which, GammaFactor(alpha, beta))
    return GammaParams(alpha, beta)


def vb_sweep(state, data: MaskedMatrix, hyper: HyperParams, fixed=(), scheme="sequential"):
    """One full coordinate-ascent sweep, in place."""
    names = ("U", "V") if isinstance(state, VbNmfState) else ("F", "S", "G")
    for name in names:
        if name not in fixed:
            vb_update_factor(name, state, data, hyper, scheme)
    if "tau" not in fixed:
        vb_update_tau(state, data, hyper)
    if "lambda" not in fixed:
        if isinstance(state, VbNmfState):
            if state.ard is not None:
                vb_update_ard("lambda", state, hyper)
        elif state.ard_F is not None:
            vb_update_ard("F", state, hyper)
            vb_update_ard("G", state, hyper)
    return state


# --------------------------------------------------------------------------- #
# Evidence lower bound
# --------------------------------------------------------------------------- #

def _exp_prior_terms(factor, rate: Optional[GammaFactor], scalar_rate: float) -> float:
    """E_q[log Exp(X | lambda)] summed over a factor (column-shared ARD rates)."""
    if rate is None:
        return factor.mean.size * math.log(scalar_rate) - scalar_rate * float(factor.mean.sum())
    n_rows = factor.mean.shape[0]
    e_log = gamma_expected_log(rate.alpha, rate.beta)
    return float(n_rows * np.sum(e_log) - np.sum(rate.mean * factor.mean.sum(axis=0)))


def _gamma_prior_term(q: GammaFactor, alpha: float, beta: float) -> float:
    e_log = gamma_expected_log(q.alpha, q.beta)
    terms = alpha * math.log(beta) - special.gammaln(alpha) + (alpha - 1.0) * e_log - beta * q.mean
    return float(np.sum(terms))


def elbo(state, data: MaskedMatrix, hyper: HyperParams) -> float:
    """E_q[log p(D, theta)] - E_q[log q(theta)]."""
    n = data.n_observed
    e_tau = float(state.tau.mean)
    e_log_tau = float(gamma_expected_log(state.tau.alpha, state.tau.beta))
    ers = float(np.sum(expected_residual_sq(state, data)[data.mask]))
    total = 0.5 * n * (e_log_tau - _LOG_2PI) - 0.5 * e_tau * ers
    total += _gamma_prior_term(state.tau, hyper.alpha_tau, hyper.beta_tau)
    total += float(gamma_entropy(state.tau.alpha, state.tau.beta))

    if isinstance(state, VbNmfState):
        factors = [(state.U, state.ard), (state.V, state.ard)]
        ards = [state.ard]
    else:
        factors = [(state.F, state.ard_F), (state.S, None), (state.G, state.ard_G)]
        ards = [state.ard_F, state.ard_G]
    for factor, rate in factors:
        total += _exp_prior_terms(factor, rate, hyper.lambda_)
        total += float(np.sum(tn_entropy(factor.mu, factor.tau)))
    for q in ards:
        if q is not None:
            total += _gamma_prior_term(q, hyper.alpha0, hyper.beta0)
            total += float(np.sum(gamma_entropy(q.alpha, q.beta)))
    return total


# --------------------------------------------------------------------------- #
# Run
# --------------------------------------------------------------------------- #

def vb_run(data: MaskedMatrix, hyper: HyperParams, model: str = "nmf",
           stop: StopRule = DEFAULT_STOP, init: str = "random_draw", rng=None, seed: int = 0,
           state=None, fixed=(), scheme: str = "sequential", elbo_every: int = 1,
           callback=None):
    """Coordinate ascent until ``stop``. Returns (VB state, TraceRecord).

    The run is deterministic given the initial state; ``rng``/``seed`` are
    used for initialisation only. ELBO is recorded every ``elbo_every``
    sweeps (NaN in between; 0 disables it).
    """
    if state is None:
        rng = rng if rng is not None else seeded_rng(seed)
        state = init_state(model, data, hyper, init, rng, flavour="vb")
    else:
        state = state.copy()
    clock = Clock()
    trace = TraceRecord()
    trace.record(0, 0.0, mse(data, predict(state)), elbo(state, data, hyper) if elbo_every else None)
    for it in range(1, stop.max_iterations + 1):
        vb_sweep(state, data, hyper, fixed, scheme)
        value = None
        if elbo_every:
            value = elbo(state, data, hyper) if it % elbo_every == 0 else float("nan")
        trace.record(it, clock(), mse(data, predict(state)), value)
        if callback is not None:
            callback(it, state)
        if stop.converged(trace.train_mse):
            break
    return state, trace
