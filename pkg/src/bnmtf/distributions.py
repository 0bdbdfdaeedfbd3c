"""Seeded samplers and closed-form moments for the exponential, Gamma and
zero-truncated normal distributions.

All functions are vectorised over numpy arrays. The truncated normal is
always truncated to ``[0, inf)`` and parameterised by the mean ``mu`` and
precision ``tau`` of the untruncated normal.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np
from scipy import special

# Above this standardised lower bound (-mu * sqrt(tau)) the truncated normal
# is treated as an exponential with rate |mu * tau|.
TAIL_SWITCH = 30.0

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_LOG_2PI_E = math.log(2.0 * math.pi * math.e)
_LOG_HALF = math.log(0.5)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class TruncatedNormalParams:
    mu: float
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"truncated normal precision must be positive, got {self.tau}")


@dataclass(frozen=True)
class GammaParams:
    """Gamma distribution with shape ``alpha`` and rate ``beta`` (scalars or
    equal-length arrays for a vector of independent Gammas)."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (np.all(np.asarray(self.alpha) > 0) and np.all(np.asarray(self.beta) > 0)):
            raise ValueError(f"Gamma parameters must be positive, got ({self.alpha}, {self.beta})")

    @property
    def mean(self):
        return self.alpha / self.beta


# --------------------------------------------------------------------------- #
# Random number streams
# --------------------------------------------------------------------------- #

def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be nonnegative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def seeded_rng(seed: int, *stream) -> np.random.Generator:
    """PCG64 generator for ``(seed, stream...)``.

    Stream keys may be nonnegative ints or strings; the same keys always give
    the same sequence, and distinct keys give statistically independent ones.
    """
    spawn_key = tuple(_key_to_int(k) for k in stream)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=spawn_key)))


def derive_seed(seed: int, *stream) -> int:
    """A 63-bit integer seed derived from ``(seed, stream...)``."""
    return int(seeded_rng(seed, "derive", *stream).integers(0, 2**63 - 1))


# --------------------------------------------------------------------------- #
# Samplers
# --------------------------------------------------------------------------- #

def _positive(name, value):
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(arr > 0):
        raise ValueError(f"{name} must be strictly positive")
    return arr


def sample_exponential(rate, rng: np.random.Generator, size=None):
    rate = _positive("rate", rate)
    return rng.exponential(1.0 / rate, size=size)


def sample_gamma(alpha, beta, rng: np.random.Generator, size=None):
    """Gamma(shape=alpha, rate=beta) draws."""
    alpha = _positive("alpha", alpha)
    beta = _positive("beta", beta)
    return rng.gamma(alpha, 1.0 / beta, size=size)


def _exponential_tail_offsets(a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Robert (1995) translated-exponential rejection for a standard normal
    # truncated to [a, inf), a > 0. Returns z - a.
    rate = 0.5 * (a + np.sqrt(a * a + 4.0))
    out = np.empty_like(a)
    pending = np.arange(a.size)
    while pending.size:
        e = rng.exponential(1.0, size=pending.size) / rate[pending]
        u = rng.random(pending.size)
        shift = a[pending] + e - rate[pending]
        accept = u <= np.exp(-0.5 * shift * shift)
        out[pending[accept]] = e[accept]
        pending = pending[~accept]
    return out


def sample_truncated_normal(mu, tau, rng: np.random.Generator):
    """Draws from TN(mu, tau), elementwise over broadcast ``mu`` and ``tau``.

    Inverse-CDF sampling (in log space for the upper tail) while the
    standardised bound is below ``TAIL_SWITCH``, exponential rejection above it.
    """
    mu, tau = np.broadcast_arrays(np.asarray(mu, dtype=np.float64), np.asarray(tau, dtype=np.float64))
    if not np.all(tau > 0):
        raise ValueError("truncated normal precision must be positive")
    shape = mu.shape
    mu = mu.ravel()
    tau = tau.ravel()
    sd = 1.0 / np.sqrt(tau)
    a = -mu * np.sqrt(tau)
    out = np.empty_like(mu)

    body = a <= TAIL_SWITCH
    if body.any():
        ab = a[body]
        u = rng.random(ab.size)
        log_q = np.log1p(-u) + special.log_ndtr(-ab)
        upper = log_q < _LOG_HALF
        z = np.empty_like(ab)
        z[upper] = -special.ndtri_exp(log_q[upper])
        lower = ~upper
        z[lower] = special.ndtri(special.ndtr(ab[lower]) + u[lower] * special.ndtr(-ab[lower]))
        out[body] = np.maximum(sd[body] * (z - ab), 0.0)
    tail = ~body
    if tail.any():
        out[tail] = sd[tail] * _exponential_tail_offsets(a[tail], rng)
    out = out.reshape(shape)
    return out if shape else float(out)


# --------------------------------------------------------------------------- #
# Moments, modes, entropies
# --------------------------------------------------------------------------- #

def inverse_mills(x):
    """phi(x) / (1 - Phi(x)), stable for large positive x."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):
        return _SQRT_2_OVER_PI / special.erfcx(x / math.sqrt(2.0))


def tn_moments(mu, tau):
    """Mean and variance of TN(mu, tau).

    For -mu*sqrt(tau) > TAIL_SWITCH the exponential approximation with rate
    |mu*tau| is returned (mean 1/|mu tau|, variance 1/|mu tau|^2).
    """
    mu, tau = np.broadcast_arrays(np.asarray(mu, dtype=np.float64), np.asarray(tau, dtype=np.float64))
    if not np.all(tau > 0):
        raise ValueError("truncated normal precision must be positive")
    mean, var = tn_moments_unchecked(mu, tau)
    if mean.ndim == 0:
        return float(mean), float(var)
    return mean, var


def tn_moments_unchecked(mu: np.ndarray, tau: np.ndarray):
    """``tn_moments`` for float arrays of equal shape with tau > 0 (no checks)."""
    root = np.sqrt(tau)
    x = -mu * root
    tail = x > TAIL_SWITCH
    has_tail = tail.any()
    xs = np.where(tail, 0.0, x) if has_tail else x
    lam = _SQRT_2_OVER_PI / special.erfcx(xs * _INV_SQRT2)
    mean = (lam - xs) / root
    # Clamp round-off; the true variance is positive.
    var = np.maximum((1.0 - lam * (lam - xs)) / tau, _TINY)
    if has_tail:
        rate = np.abs(mu * tau)
        mean = np.where(tail, 1.0 / np.where(tail, rate, 1.0), mean)
        var = np.where(tail, mean * mean, var)
    return mean, var


def tn_entropy(mu, tau):
    """Differential entropy of TN(mu, tau), consistent with ``tn_moments``."""
    mu, tau = np.broadcast_arrays(np.asarray(mu, dtype=np.float64), np.asarray(tau, dtype=np.float64))
    x = -mu * np.sqrt(tau)
    tail = x > TAIL_SWITCH
    xs = np.where(tail, 0.0, x)
    h = 0.5 * (_LOG_2PI_E - np.log(tau)) + special.log_ndtr(-xs) + 0.5 * xs * inverse_mills(xs)
    if tail.any():
        rate = np.abs(mu * tau)
        h = np.where(tail, 1.0 - np.log(np.where(tail, rate, 1.0)), h)
    return float(h) if h.ndim == 0 else h


def tn_mode(mu):
    mu = np.asarray(mu, dtype=np.float64)
    out = np.maximum(mu, 0.0)
    return float(out) if out.ndim == 0 else out


def gamma_mean(alpha, beta):
    alpha = _positive("alpha", alpha)
    beta = _positive("beta", beta)
    out = alpha / beta
    return float(out) if out.ndim == 0 else out


def gamma_mode(alpha, beta):
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = _positive("beta", beta)
    if not np.all(alpha >= 1):
        raise ValueError("Gamma mode requires shape >= 1")
    out = (alpha - 1.0) / beta
    return float(out) if out.ndim == 0 else out


def gamma_entropy(alpha, beta):
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    out = alpha - np.log(beta) + special.gammaln(alpha) + (1.0 - alpha) * special.digamma(alpha)
    return float(out) if out.ndim == 0 else out


def gamma_expected_log(alpha, beta):
    """E[log X] for X ~ Gamma(alpha, beta)."""
    out = special.digamma(np.asarray(alpha, dtype=np.float64)) - np.log(beta)
    return float(out) if np.ndim(out) == 0 else out


def digamma(x):
    x = _positive("digamma argument", x)
    out = special.digamma(x)
    return float(out) if out.ndim == 0 else out
