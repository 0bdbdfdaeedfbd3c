"""Multiplicative updates minimising the I-divergence over observed cells.

NMF uses the Lee & Seung updates, NMTF the Yoo & Choi extension. Sums run
over the observed cells only; an entry whose denominator is zero (no
observed data touches it) is left unchanged.
"""
from __future__ import annotations

import numpy as np

from .distributions import seeded_rng
from .initialise import init_state
from .masked import MaskedMatrix, mse
from .state import HyperParams, NmfState, NmtfState, predict
from .trace import Clock, StopRule, TraceRecord

FLOOR = 1e-15

DEFAULT_STOP = StopRule(max_iterations=1000, tolerance=1e-8, window=10)


def _ratio(data: MaskedMatrix, prediction: np.ndarray) -> np.ndarray:
    # R / P on observed cells, 0 elsewhere.
    safe = np.where(data.mask, prediction, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(data.mask, data.values / safe, 0.0)
    return out


def _multiply(X, numer, denom):
    ok = denom > 0
    factor = np.divide(numer, denom, out=np.ones_like(numer), where=ok)
    return np.maximum(X * factor, FLOOR), ~ok


def _update_left(data, H, X):
    """Update X in R ~ X H^T given the effective right factor H (J x K).

    Also returns the mask of entries left unchanged for lack of data.
    """
    numer = _ratio(data, X @ H.T) @ H
    denom = data.weights @ H
    return _multiply(X, numer, denom)


def np_sweep_nmf(state: NmfState, data: MaskedMatrix, fixed=()) -> NmfState:
    """One sweep: all of U, then all of V."""
    state = state.copy()
    if "U" not in fixed:
        state.U, _ = _update_left(data, state.V, state.U)
    if "V" not in fixed:
        state.V, _ = _update_left(_Transposed(data), state.U, state.V)
    return state


def np_sweep_nmtf(state: NmtfState, data: MaskedMatrix, fixed=()) -> NmtfState:
    """One sweep in the order F, S, G."""
    state = state.copy()
    if "F" not in fixed:
        state.F, _ = _update_left(data, state.G @ state.S.T, state.F)
    if "S" not in fixed:
        ratio = _ratio(data, predict(state))
        numer = state.F.T @ ratio @ state.G
        denom = state.F.T @ data.weights @ state.G
        state.S, _ = _multiply(state.S, numer, denom)
    if "G" not in fixed:
        state.G, _ = _update_left(_Transposed(data), state.F @ state.S, state.G)
    return state


class _Transposed:
    """Minimal transposed view of a MaskedMatrix for the column-side updates."""

    def __init__(self, data: MaskedMatrix):
        self.values = data.values.T
        self.mask = data.mask.T
        self.weights = data.weights.T


def np_sweep(state, data, fixed=()):
    if isinstance(state, NmfState):
        return np_sweep_nmf(state, data, fixed)
    return np_sweep_nmtf(state, data, fixed)


def _floor(state):
    state = state.copy()
    for name in ("U", "V") if isinstance(state, NmfState) else ("F", "S", "G"):
        setattr(state, name, np.maximum(getattr(state, name), FLOOR))
    return state


def run_np(data: MaskedMatrix, hyper: HyperParams, model: str = "nmf", init: str = "random_draw",
           stop: StopRule = DEFAULT_STOP, rng=None, seed: int = 0, state=None, fixed=(),
           callback=None):
    """Run multiplicative updates from an initial state until ``stop``.

    Returns the final state and its trace. ``rng`` (or ``seed``) is only used
    for initialisation; pass ``state`` to start from a given point.
    """
    if state is None:
        rng = rng if rng is not None else seeded_rng(seed)
        state = init_state(model, data, hyper, init, rng, flavour="np")
    state = _floor(state)
    clock = Clock()
    trace = TraceRecord()
    trace.record(0, 0.0, mse(data, predict(state)))
    for it in range(1, stop.max_iterations + 1):
        state = np_sweep(state, data, fixed)
        trace.record(it, clock(), mse(data, predict(state)))
        if callback is not None:
            callback(it, state)
        if stop.converged(trace.train_mse):
            break
    return state, trace
