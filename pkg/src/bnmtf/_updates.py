"""Truncated-normal parameter algebra shared by Gibbs, ICM and VB.

Every factor update has the form TN(mu, prec) with prec = tau * A and
mu = (-rate + tau * B) / prec. For point states (Gibbs/ICM) the moments are
the current values (second moment = value**2, variance = 0); for VB they are
the cached variational expectations. Passing ``var=None`` skips the NMTF
covariance corrections, which vanish for point states.
"""
from __future__ import annotations

import numpy as np

# Precision used to encode the prior Exp(rate) as TN(-rate/t, t); the
# standardised bound rate/sqrt(t) = 1000 puts it in the exponential regime.
FALLBACK_PRECISION_SCALE = 1e-6


def to_tn(num, prec, rate):
    """Convert (numerator, precision) to TN (mu, tau), with the prior fallback
    for entries whose precision is zero (no observed data involves them)."""
    rate = np.broadcast_to(np.asarray(rate, dtype=np.float64), np.shape(num))
    empty = ~(prec > 0)
    if np.any(empty):
        t = rate * rate * FALLBACK_PRECISION_SCALE
        prec = np.where(empty, t, prec)
        num = np.where(empty, -rate, num)
    return num / prec, prec


def outer_params(R, M, X, H, H2, tau, rate, cols, correction=None):
    """Parameters for columns ``cols`` of X in the model R ~ X H^T.

    ``X`` and ``H`` are current values / means, ``H2`` the second moments of
    the effective partner H. ``correction`` (|rows| x |cols|) is subtracted
    inside the tau-weighted sum.
    """
    Hc = H[:, cols]
    residual = M * (R - X @ H.T)
    prec = tau * (M @ H2[:, cols])
    inner = residual @ Hc + X[:, cols] * (M @ (Hc * Hc))
    if correction is not None:
        inner = inner - correction
    rate = np.asarray(rate, dtype=np.float64)
    rate = rate[cols] if rate.ndim else rate
    return to_tn(-rate + tau * inner, prec, rate)


def nmtf_partner(S, Y, S2=None, Y2=None):
    """Effective partner H = Y S^T of an outer NMTF factor and its second moment.

    For X in R ~ X S Y^T: H[j, k] = sum_l S[k, l] Y[j, l], and
    E[H_jk^2]_mean-field = H_jk^2 + sum_l (S2 Y2 - S^2 Y^2)[k, l, j].
    """
    H = Y @ S.T
    if S2 is None:
        return H, H * H
    return H, H * H + Y2 @ S2.T - (Y * Y) @ (S * S).T


def nmtf_outer_correction(M, X, S, Yvar, cols):
    """Covariance correction for columns ``cols`` of X in R ~ X S Y^T:
    sum_j M_ij sum_l S_kl Var[Y_jl] sum_{k' != k} X_ik' S_k'l."""
    XS = X @ S
    MY = M @ Yvar
    Sc = S[cols, :]
    return (XS * MY) @ Sc.T - X[:, cols] * (M @ (Yvar @ (Sc * Sc).T))


def s_entry_params(R, M, F, S, G, F2, G2, tau, rate, k, l, Fvar=None, Gvar=None):
    """TN parameters for the middle-factor entry S[k, l]."""
    P = F @ S @ G.T
    residual = M * (R - P)
    Fk, Gl = F[:, k], G[:, l]
    prec = tau * (F2[:, k] @ M @ G2[:, l])
    inner = Fk @ residual @ Gl + S[k, l] * ((Fk * Fk) @ M @ (Gl * Gl))
    if Gvar is not None:
        MGv = M @ Gvar[:, l]
        C = F @ S[:, l]
        inner -= (Fk * C) @ MGv - S[k, l] * ((Fk * Fk) @ MGv)
    if Fvar is not None:
        MFv = M.T @ Fvar[:, k]
        H = G @ S[k, :]
        inner -= (Gl * H) @ MFv - S[k, l] * ((Gl * Gl) @ MFv)
    num = np.array([-rate + tau * inner])
    mu, t = to_tn(num, np.array([prec]), rate)
    return float(mu[0]), float(t[0])


def squared_residual_sum(R, M, P) -> float:
    d = M * (R - P)
    return float(np.sum(d * d))
