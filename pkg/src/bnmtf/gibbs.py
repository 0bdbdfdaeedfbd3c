"""Gibbs sampling and iterated conditional modes (ICM).

Both engines cycle through the same conditional posteriors: truncated
normals for factor entries, Gammas for the noise precision and the ARD
rates. Gibbs draws from them, ICM jumps to their modes.

Within one iteration the update order is fixed: U then V (NMF) or F, S, G
(NMTF), then tau, then the ARD rates. Entries in one column of U, V, F or G
are conditionally independent and are updated together; columns are taken
one at a time (``scheme="sequential"``, exact Gibbs) or all at once from the
values at the start of the matrix update (``scheme="synchronous"``). Entries
of S are coupled and always updated one by one in row-major order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _updates
from .distributions import (
    GammaParams,
    TruncatedNormalParams,
    gamma_mode,
    sample_gamma,
    sample_truncated_normal,
    seeded_rng,
    tn_mode,
)
from .initialise import init_state
from .masked import MaskedMatrix, mse
from .state import HyperParams, NmfState, NmtfState, predict
from .trace import Clock, StopRule, TraceRecord

ICM_RESET = 0.1
SCHEMES = ("sequential", "synchronous")


@dataclass
class PosteriorEstimate:
    """Retained draws (after burn-in and thinning) and their means.

    Predictions average U V^T (F S G^T) over the retained draws. The product
    of the factor means is a poorer estimate when the chain drifts between
    rescaled or permuted factorisations.
    """

    model: str
    burn_in: int
    thin: int
    total: int
    n_retained: int = 0
    sums: dict = field(default_factory=dict)
    draws: Optional[dict] = None
    prediction_sum: Optional[np.ndarray] = None

    def add(self, state):
        p = predict(state)
        self.prediction_sum = p.copy() if self.prediction_sum is None else self.prediction_sum + p
        values = _state_arrays(state)
        for name, value in values.items():
            if name in self.sums:
                self.sums[name] = self.sums[name] + value
            else:
                self.sums[name] = np.array(value, dtype=float)
            if self.draws is not None:
                self.draws.setdefault(name, []).append(np.array(value, dtype=float))
        self.n_retained += 1

    @property
    def means(self) -> dict:
        return {name: s / self.n_retained for name, s in self.sums.items()}

    def draws_of(self, name: str) -> np.ndarray:
        if self.draws is None:
            raise ValueError("draws were not kept for this run")
        return np.stack(self.draws[name])

    def mean_state(self):
        m = self.means
        if self.model == "nmf":
            return NmfState(m["U"], m["V"], float(m["tau"]), m.get("lambda"))
        return NmtfState(m["F"], m["S"], m["G"], float(m["tau"]), m.get("lambda_F"), m.get("lambda_G"))

    def predict(self) -> np.ndarray:
        """Posterior mean of the reconstruction."""
        return self.prediction_sum / self.n_retained


def _state_arrays(state) -> dict:
    if isinstance(state, NmfState):
        out = {"U": state.U, "V": state.V, "tau": np.array(state.tau)}
        if state.ard_lambda is not None:
            out["lambda"] = state.ard_lambda
        return out
    out = {"F": state.F, "S": state.S, "G": state.G, "tau": np.array(state.tau)}
    if state.ard_lambda_F is not None:
        out["lambda_F"] = state.ard_lambda_F
        out["lambda_G"] = state.ard_lambda_G
    return out


def retained_count(total: int, burn_in: int, thin: int) -> int:
    return max(0, (total - burn_in) // thin)


# --------------------------------------------------------------------------- #
# Conditional posteriors
# --------------------------------------------------------------------------- #

def _rate(state, hyper: HyperParams, which: str):
    if which in ("U", "V"):
        return state.ard_lambda if state.ard_lambda is not None else hyper.lambda_
    if which == "F":
        return state.ard_lambda_F if state.ard_lambda_F is not None else hyper.lambda_
    if which == "G":
        return state.ard_lambda_G if state.ard_lambda_G is not None else hyper.lambda_
    return hyper.lambda_


def _column_params(which, cols, state, data: MaskedMatrix, hyper: HyperParams):
    R, M = data.values, data.weights
    rate = _rate(state, hyper, which)
    tau = state.tau
    if which == "U":
        return _updates.outer_params(R, M, state.U, state.V, state.V ** 2, tau, rate, cols)
    if which == "V":
        return _updates.outer_params(R.T, M.T, state.V, state.U, state.U ** 2, tau, rate, cols)
    if which == "F":
        H, H2 = _updates.nmtf_partner(state.S, state.G)
        return _updates.outer_params(R, M, state.F, H, H2, tau, rate, cols)
    if which == "G":
        H, H2 = _updates.nmtf_partner(state.S.T, state.F)
        return _updates.outer_params(R.T, M.T, state.G, H, H2, tau, rate, cols)
    raise ValueError(f"unknown factor {which!r}")


def _s_params(k, l, state, data, hyper):
    return _updates.s_entry_params(data.values, data.weights, state.F, state.S, state.G,
                                   state.F ** 2, state.G ** 2, state.tau, hyper.lambda_, k, l)


def cond_factor_entry(which: str, row: int, col: int, state, data: MaskedMatrix,
                      hyper: HyperParams) -> TruncatedNormalParams:
    """Conditional posterior of one factor entry given everything else.

    ``(row, col)`` index the entry: (i, k) for U/F, (j, k) for V, (j, l) for
    G and (k, l) for S. Entries touched by no observed cell get their prior.
    """
    if which == "S":
        mu, tau = _s_params(row, col, state, data, hyper)
        return TruncatedNormalParams(mu, tau)
    mu, tau = _column_params(which, [col], state, data, hyper)
    return TruncatedNormalParams(float(mu[row, 0]), float(tau[row, 0]))


def cond_tau(state, data: MaskedMatrix, hyper: HyperParams) -> GammaParams:
    sq = _updates.squared_residual_sum(data.values, data.weights, predict(state))
    return GammaParams(hyper.alpha_tau + data.n_observed / 2.0, hyper.beta_tau + 0.5 * sq)


def cond_ard_lambda(which: str, state, hyper: HyperParams) -> GammaParams:
    """Gamma conditional of the ARD rates: ``which`` is "lambda" (NMF),
    "F" or "G" (NMTF). Returns vector-valued parameters, one per factor."""
    if isinstance(state, NmfState):
        if state.ard_lambda is None:
            raise ValueError("state has no ARD rates")
        I, J = state.U.shape[0], state.V.shape[0]
        alpha = np.full(state.K, hyper.alpha0 + I + J)
        beta = hyper.beta0 + state.U.sum(axis=0) + state.V.sum(axis=0)
        return GammaParams(alpha, beta)
    if state.ard_lambda_F is None:
        raise ValueError("state has no ARD rates")
    if which == "F":
        return GammaParams(np.full(state.K, hyper.alpha0 + state.F.shape[0]),
                           hyper.beta0 + state.F.sum(axis=0))
    if which == "G":
        return GammaParams(np.full(state.L, hyper.alpha0 + state.G.shape[0]),
                           hyper.beta0 + state.G.sum(axis=0))
    raise ValueError(f"unknown ARD side {which!r}")


# --------------------------------------------------------------------------- #
# Sweeps
# --------------------------------------------------------------------------- #

def _blocks(n, scheme):
    if scheme == "sequential":
        return [slice(c, c + 1) for c in range(n)]
    if scheme == "synchronous":
        return [slice(None)]
    raise ValueError(f"unknown scheme {scheme!r}")


def _sweep(state, data, hyper, draw_tn, draw_gamma, fixed=(), scheme="sequential"):
    names = ("U", "V") if isinstance(state, NmfState) else ("F", "S", "G")
    for name in names:
        if name in fixed:
            continue
        X = getattr(state, name)
        if name == "S":
            for k in range(X.shape[0]):
                for l in range(X.shape[1]):
                    mu, t = _s_params(k, l, state, data, hyper)
                    X[k, l] = float(draw_tn(np.array([mu]), np.array([t]))[0])
            continue
        for cols in _blocks(X.shape[1], scheme):
            mu, t = _column_params(name, cols, state, data, hyper)
            X[:, cols] = draw_tn(mu, t)
    if "tau" not in fixed:
        p = cond_tau(state, data, hyper)
        state.tau = float(draw_gamma(p.alpha, p.beta))
    if "lambda" not in fixed:
        if isinstance(state, NmfState) and state.ard_lambda is not None:
            p = cond_ard_lambda("lambda", state, hyper)
            state.ard_lambda = np.asarray(draw_gamma(p.alpha, p.beta), dtype=float)
        elif isinstance(state, NmtfState) and state.ard_lambda_F is not None:
            p = cond_ard_lambda("F", state, hyper)
            state.ard_lambda_F = np.asarray(draw_gamma(p.alpha, p.beta), dtype=float)
            p = cond_ard_lambda("G", state, hyper)
            state.ard_lambda_G = np.asarray(draw_gamma(p.alpha, p.beta), dtype=float)
    return state


def gibbs_sweep(state, data, hyper, rng, fixed=(), scheme="sequential"):
    """One Gibbs iteration (in place on a copy); returns the new state."""
    return _sweep(
        state.copy(), data, hyper,
        lambda mu, t: sample_truncated_normal(mu, t, rng),
        lambda a, b: sample_gamma(a, b, rng),
        fixed, scheme,
    )


def _reset_mode(mu, t):
    mode = tn_mode(mu)
    return np.where(mode == 0.0, ICM_RESET, mode)


def icm_sweep(state, data, hyper, fixed=(), scheme="sequential"):
    """One ICM iteration of conditional modes.

    A factor entry whose mode is 0 is reset to 0.1 as soon as it is updated,
    so the remaining updates of the iteration condition on the reset value.
    """
    return _sweep(state.copy(), data, hyper, _reset_mode, gamma_mode, fixed, scheme)


# --------------------------------------------------------------------------- #
# Runs
# --------------------------------------------------------------------------- #

def _prepare(data, hyper, model, stop, burn_in, thin, init, rng, seed, state):
    if burn_in is None:
        burn_in = stop.max_iterations // 2
    if thin < 1:
        raise ValueError("thin must be at least 1")
    if not 0 <= burn_in < stop.max_iterations:
        raise ValueError("burn_in must be nonnegative and smaller than max_iterations")
    if state is None:
        rng_init = rng if rng is not None else seeded_rng(seed)
        state = init_state(model, data, hyper, init, rng_init, flavour="point")
    else:
        state = state.copy()
        model = state.kind
    return state, model, burn_in


def _chain(step, state, data, stop, burn_in, thin, estimate, callback):
    clock = Clock()
    trace = TraceRecord()
    trace.record(0, 0.0, mse(data, predict(state)))
    for it in range(1, stop.max_iterations + 1):
        state = step(state)
        trace.record(it, clock(), mse(data, predict(state)))
        if it > burn_in and (it - burn_in) % thin == 0:
            estimate.add(state)
        if callback is not None:
            callback(it, state)
        if stop.converged(trace.train_mse):
            break
    estimate.total = trace.n_iterations
    return state, trace


def gibbs_run(data: MaskedMatrix, hyper: HyperParams, model: str = "nmf",
              stop: StopRule = StopRule(1000), burn_in: Optional[int] = None, thin: int = 2,
              init: str = "random_draw", rng=None, seed: int = 0, state=None, fixed=(),
              scheme: str = "sequential", keep_draws: bool = True, callback=None):
    """Run a Gibbs chain. Returns (PosteriorEstimate, TraceRecord).

    ``rng`` (default: a stream from ``seed``) drives both initialisation and
    sampling. The trace records the training MSE of the current draw.
    """
    rng = rng if rng is not None else seeded_rng(seed)
    state, model, burn_in = _prepare(data, hyper, model, stop, burn_in, thin, init, rng, seed, state)
    estimate = PosteriorEstimate(model, burn_in, thin, 0, draws={} if keep_draws else None)
    _, trace = _chain(lambda s: gibbs_sweep(s, data, hyper, rng, fixed, scheme),
                      state, data, stop, burn_in, thin, estimate, callback)
    return estimate, trace


def icm_run(data: MaskedMatrix, hyper: HyperParams, model: str = "nmf",
            stop: StopRule = StopRule(1000), burn_in: Optional[int] = None, thin: int = 2,
            init: str = "random_draw", rng=None, seed: int = 0, state=None, fixed=(),
            scheme: str = "sequential", callback=None):
    """Run ICM. Returns (state, TraceRecord); the state is the mean of the
    retained post-burn-in iterates (the last iterate if none were retained)."""
    state, model, burn_in = _prepare(data, hyper, model, stop, burn_in, thin, init, rng, seed, state)
    estimate = PosteriorEstimate(model, burn_in, thin, 0, draws=None)
    last, trace = _chain(lambda s: icm_sweep(s, data, hyper, fixed, scheme),
                         state, data, stop, burn_in, thin, estimate, callback)
    return (estimate.mean_state() if estimate.n_retained else last), trace
