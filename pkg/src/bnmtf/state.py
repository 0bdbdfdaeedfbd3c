"""Hyperparameters, factor-state containers and prediction."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .distributions import tn_moments, tn_moments_unchecked


@dataclass(frozen=True)
class HyperParams:
    """Prior settings. Defaults are the weak priors used in all experiments."""

    K: int = 10
    L: Optional[int] = None
    lambda_: float = 0.1
    alpha_tau: float = 1.0
    beta_tau: float = 1.0
    alpha0: float = 1.0
    beta0: float = 1.0
    ard: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be a positive integer")
        if self.L is not None and self.L < 1:
            raise ValueError("L must be a positive integer")
        for name in ("lambda_", "alpha_tau", "beta_tau", "alpha0", "beta0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def ard_mean(self) -> float:
        return self.alpha0 / self.beta0


# --------------------------------------------------------------------------- #
# Point states (NP, Gibbs, ICM)
# --------------------------------------------------------------------------- #

@dataclass
class NmfState:
    U: np.ndarray
    V: np.ndarray
    tau: float = 1.0
    ard_lambda: Optional[np.ndarray] = None

    kind = "nmf"

    @property
    def K(self) -> int:
        return self.U.shape[1]

    def copy(self) -> "NmfState":
        return NmfState(self.U.copy(), self.V.copy(), self.tau,
                        None if self.ard_lambda is None else self.ard_lambda.copy())


@dataclass
class NmtfState:
    F: np.ndarray
    S: np.ndarray
    G: np.ndarray
    tau: float = 1.0
    ard_lambda_F: Optional[np.ndarray] = None
    ard_lambda_G: Optional[np.ndarray] = None

    kind = "nmtf"

    @property
    def K(self) -> int:
        return self.F.shape[1]

    @property
    def L(self) -> int:
        return self.G.shape[1]

    def copy(self) -> "NmtfState":
        def c(x):
            return None if x is None else x.copy()
        return NmtfState(self.F.copy(), self.S.copy(), self.G.copy(), self.tau,
                         c(self.ard_lambda_F), c(self.ard_lambda_G))


# --------------------------------------------------------------------------- #
# Variational states
# --------------------------------------------------------------------------- #

@dataclass
class TnFactor:
    """Elementwise TN variational factor with cached mean and variance."""

    mu: np.ndarray
    tau: np.ndarray
    mean: np.ndarray = field(default=None)
    var: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mean is None or self.var is None:
            self.refresh()

    def refresh(self, index=None):
        if index is None:
            self.mean, self.var = (np.asarray(a) for a in tn_moments(self.mu, self.tau))
        else:
            m, v = tn_moments_unchecked(self.mu[index], self.tau[index])
            self.mean[index] = m
            self.var[index] = v

    @property
    def second(self) -> np.ndarray:
        return self.mean * self.mean + self.var

    @classmethod
    def point(cls, values) -> "TnFactor":
        """A zero-variance factor located at ``values`` (for tests and comparisons)."""
        values = np.asarray(values, dtype=np.float64)
        return cls(values.copy(), np.full(values.shape, np.inf), values.copy(), np.zeros(values.shape))

    def copy(self) -> "TnFactor":
        return TnFactor(self.mu.copy(), self.tau.copy(), self.mean.copy(), self.var.copy())


@dataclass
class GammaFactor:
    """Gamma variational factor (vector or scalar shape/rate)."""

    alpha: np.ndarray
    beta: np.ndarray

    @property
    def mean(self):
        return self.alpha / self.beta

    def copy(self) -> "GammaFactor":
        return GammaFactor(np.array(self.alpha, dtype=float), np.array(self.beta, dtype=float))


@dataclass
class VbNmfState:
    U: TnFactor
    V: TnFactor
    tau: GammaFactor
    ard: Optional[GammaFactor] = None

    kind = "nmf"

    @property
    def K(self) -> int:
        return self.U.mu.shape[1]

    def copy(self) -> "VbNmfState":
        return VbNmfState(self.U.copy(), self.V.copy(), self.tau.copy(),
                          None if self.ard is None else self.ard.copy())

    def point(self) -> NmfState:
        """Point state at the variational expectations."""
        return NmfState(self.U.mean.copy(), self.V.mean.copy(), float(self.tau.mean),
                        None if self.ard is None else np.asarray(self.ard.mean, dtype=float).copy())


@dataclass
class VbNmtfState:
    F: TnFactor
    S: TnFactor
    G: TnFactor
    tau: GammaFactor
    ard_F: Optional[GammaFactor] = None
    ard_G: Optional[GammaFactor] = None

    kind = "nmtf"

    @property
    def K(self) -> int:
        return self.F.mu.shape[1]

    @property
    def L(self) -> int:
        return self.G.mu.shape[1]

    def copy(self) -> "VbNmtfState":
        def c(x):
            return None if x is None else x.copy()
        return VbNmtfState(self.F.copy(), self.S.copy(), self.G.copy(), self.tau.copy(),
                           c(self.ard_F), c(self.ard_G))

    def point(self) -> NmtfState:
        def m(x):
            return None if x is None else np.asarray(x.mean, dtype=float).copy()
        return NmtfState(self.F.mean.copy(), self.S.mean.copy(), self.G.mean.copy(),
                         float(self.tau.mean), m(self.ard_F), m(self.ard_G))


def predict(state) -> np.ndarray:
    """Reconstruction U V^T (or F S G^T); VB states use the expectations."""
    if isinstance(state, NmfState):
        return state.U @ state.V.T
    if isinstance(state, NmtfState):
        return state.F @ state.S @ state.G.T
    if isinstance(state, VbNmfState):
        return state.U.mean @ state.V.mean.T
    if isinstance(state, VbNmtfState):
        return state.F.mean @ state.S.mean @ state.G.mean.T
    raise TypeError(f"cannot predict from {type(state).__name__}")


def factor_names(state) -> tuple[str, ...]:
    return ("U", "V") if state.kind == "nmf" else ("F", "S", "G")


def state_fields(state) -> list[str]:
    return [f.name for f in fields(state)]
