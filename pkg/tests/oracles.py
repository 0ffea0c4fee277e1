"""Quadrature oracles shared by the unit tests and the acceptance suite."""

import math

import numpy as np
from scipy import integrate, stats

from qsbs.distribution import qsbs_logpdf
from qsbs.smn import FamilyKind


def mixing_density(family):
    """Density of U on its support, for the continuous families."""
    nu = family.nu
    if family.kind is FamilyKind.SLASH:
        return (lambda u: nu * u ** (nu - 1.0)), (0.0, 1.0)
    return (lambda u: stats.gamma.pdf(u, 0.5 * nu, scale=2.0 / nu)), (0.0, np.inf)


def log_scale_integral(fn, d):
    """int f(t) fn(t) dt computed as an integral over s = log t."""
    g = lambda s: math.exp(qsbs_logpdf(math.exp(s), d) + s) * fn(s)  # noqa: E731
    edges = (-200.0, -5.0, 0.0, 5.0, 200.0)
    return sum(integrate.quad(g, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=500)[0] for lo, hi in zip(edges, edges[1:]))


def omega_oracle(family, r):
    """E[U^-r] by quadrature over the mixing law (exact sum for the CN atoms)."""
    if family.kind is FamilyKind.NORMAL:
        return 1.0
    if family.kind is FamilyKind.CONTAMINATED_NORMAL:
        return sum(p * u ** (-r) for p, u in ((family.nu, family.delta), (1 - family.nu, 1.0)))
    h, (lo, hi) = mixing_density(family)
    val, _ = integrate.quad(lambda u: u ** (-r) * h(u), lo, hi, epsabs=0, epsrel=1e-12, limit=500)
    return val


def posterior_mean_u(a, family):
    """E[U | a] = int u sqrt(u) phi(sqrt(u) a) h(u) du / int sqrt(u) phi(sqrt(u) a) h(u) du."""
    if family.kind is FamilyKind.NORMAL:
        return 1.0
    kern = lambda u: math.sqrt(u) * math.exp(-0.5 * u * a * a)  # noqa: E731
    if family.kind is FamilyKind.CONTAMINATED_NORMAL:
        atoms = ((family.delta, family.nu), (1.0, 1.0 - family.nu))
        return sum(u * kern(u) * p for u, p in atoms) / sum(kern(u) * p for u, p in atoms)
    h, (lo, hi) = mixing_density(family)
    opts = dict(epsabs=0, epsrel=1e-12, limit=500)
    num = integrate.quad(lambda u: u * kern(u) * h(u), lo, hi, **opts)[0]
    den = integrate.quad(lambda u: kern(u) * h(u), lo, hi, **opts)[0]
    return num / den
