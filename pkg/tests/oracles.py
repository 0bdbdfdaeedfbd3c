"""Independent numerical references shared by the unit and acceptance tests."""
import math

from scipy import integrate, stats


def _standard_tn_integrals(a, fn):
    """Integral of fn(z) * w(z) over z >= a, with w proportional to the
    standard normal density, normalised by the integral of w."""
    if a >= 0:
        # z = a + t, w = exp(-a t - t^2 / 2): no underflow for large a
        w = lambda t: math.exp(-a * t - 0.5 * t * t)
        lo, hi, shift = 0.0, min(12.0, 60.0 / a) if a > 0 else 12.0, a
    else:
        w = lambda z: math.exp(-0.5 * z * z)
        lo, hi, shift = a, 12.0, 0.0
    kw = dict(epsabs=1e-14, epsrel=1e-11, limit=400)
    z0 = integrate.quad(w, lo, hi, **kw)[0]
    return integrate.quad(lambda t: fn(t + shift) * w(t), lo, hi, **kw)[0] / z0


def quad_tn_moments(mu, tau):
    """Mean and variance of TN(mu, tau) by adaptive quadrature of the density."""
    a = -mu * math.sqrt(tau)
    ez = _standard_tn_integrals(a, lambda z: z)
    vz = _standard_tn_integrals(a, lambda z: (z - ez) ** 2)
    return mu + ez / math.sqrt(tau), vz / tau


def quad_tn_entropy(mu, tau):
    a = -mu * math.sqrt(tau)
    log_norm = math.log(stats.norm.sf(a)) + 0.5 * math.log(2 * math.pi)
    # -E[log p(z)] = log_norm + E[z^2] / 2, plus the Jacobian of x = mu + z / sqrt(tau)
    ez2 = _standard_tn_integrals(a, lambda z: z * z)
    return log_norm + 0.5 * ez2 - 0.5 * math.log(tau)


def digamma_oracle(x):
    # Shift up with psi(x) = psi(x + 1) - 1/x, then the asymptotic series.
    acc = 0.0
    while x < 20:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = inv2 * (1 / 12 - inv2 * (1 / 120 - inv2 * (1 / 252 - inv2 * (1 / 240 - inv2 / 132))))
    return acc + math.log(x) - 0.5 / x - series
