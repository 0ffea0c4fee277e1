"""Quantile-parameterized scale-mixture Birnbaum-Saunders (QSBS) law.

A QSBS(alpha, Q; H) variable at quantile level ``q`` is

    T = (Q / gamma^2) * [w + sqrt(w^2 + 4)]^2,   w = alpha * sqrt(g(U)) * Z,

with ``gamma = alpha * y_q + sqrt((alpha * y_q)^2 + 4)`` and ``y_q`` the
q-quantile of the SMN kernel, so that ``P(T <= Q) = q``.  The mixing
convention is ``g(u) = 1/u`` throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy import special

from .errors import MomentError, ParameterError
from .smn import (
    ArrayLike,
    FamilyKind,
    MixtureFamily,
    smn_cdf,
    smn_logpdf,
    smn_quantile,
    smn_sf,
)


def gamma_alpha(alpha: ArrayLike, y_q: float) -> ArrayLike:
    """``alpha * y_q + sqrt((alpha * y_q)^2 + 4)``, always positive.

    Evaluated without cancellation when ``alpha * y_q`` is very negative.
    """
    w = np.asarray(alpha, dtype=float) * y_q
    root = np.sqrt(w * w + 4.0)
    out = np.where(w >= 0, w + root, 4.0 / (root - w))
    return out if out.ndim else float(out)


def gamma_alpha_prime(alpha: ArrayLike, y_q: float) -> ArrayLike:
    """Derivative of :func:`gamma_alpha` with respect to ``alpha``."""
    alpha = np.asarray(alpha, dtype=float)
    out = y_q + alpha * y_q**2 / np.sqrt((alpha * y_q) ** 2 + 4.0)
    return out if out.ndim else float(out)


def bs_bracket(w: ArrayLike) -> ArrayLike:
    """``w + sqrt(w^2 + 4)`` evaluated stably for any real ``w``."""
    return gamma_alpha(w, 1.0)


@dataclass(frozen=True)
class QsbsDistribution:
    """One QSBS law.

    ``Q`` may be an array (one quantile per observation) as long as it
    broadcasts against the evaluation points.
    """

    alpha: float
    Q: ArrayLike
    q: float
    family: MixtureFamily
    y_q: float = field(init=False, repr=False)
    gamma: float = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 < self.q < 1.0:
            raise ParameterError(f"q must lie in (0, 1), got {self.q}")
        Q = np.asarray(self.Q, dtype=float)
        if not np.all(np.isfinite(Q) & (Q > 0)):
            raise ParameterError("Q must be positive and finite")
        object.__setattr__(self, "Q", Q if Q.ndim else float(Q))
        y_q = float(smn_quantile(self.q, self.family))
        object.__setattr__(self, "y_q", y_q)
        object.__setattr__(self, "gamma", float(gamma_alpha(self.alpha, y_q)))

    @property
    def gamma_alpha(self) -> float:
        return self.gamma

    @property
    def bs_scale(self) -> ArrayLike:
        """Classical BS scale parameter ``beta = 4Q / gamma^2``."""
        return 4.0 * np.asarray(self.Q) / self.gamma**2

    def replace(self, **changes) -> "QsbsDistribution":
        kw = dict(alpha=self.alpha, Q=self.Q, q=self.q, family=self.family)
        kw.update(changes)
        return QsbsDistribution(**kw)


def _positive(t: ArrayLike) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t) & (t > 0)):
        raise ParameterError("t must be positive and finite")
    return t


def _ret(x):
    x = np.asarray(x, dtype=float)
    return x if x.ndim else float(x)


def a_of_t(t: ArrayLike, dist: QsbsDistribution) -> ArrayLike:
    """``a(t) = sqrt(4Q/t) (gamma^2 t / 4Q - 1) / (alpha gamma)``."""
    t = _positive(t)
    ratio = np.sqrt(t / dist.bs_scale)
    return _ret((ratio - 1.0 / ratio) / dist.alpha)


def A_of_t(t: ArrayLike, dist: QsbsDistribution) -> ArrayLike:
    """``A(t) = da/dt = (gamma^2/2 + 2Q/t) / (alpha gamma sqrt(4 Q t))``."""
    t = _positive(t)
    Q, g, a = dist.Q, dist.gamma, dist.alpha
    return _ret((0.5 * g * g + 2.0 * Q / t) / (a * g * np.sqrt(4.0 * Q * t)))


def qsbs_logpdf(t: ArrayLike, dist: QsbsDistribution) -> ArrayLike:
    t = _positive(t)
    Q, g, al = dist.Q, dist.gamma, dist.alpha
    log_A = (
        np.log(0.5 * g * g + 2.0 * Q / t)
        - math.log(al * g)
        - 0.5 * np.log(4.0 * Q * t)
    )
    return _ret(smn_logpdf(a_of_t(t, dist), dist.family) + log_A)


def qsbs_pdf(t: ArrayLike, dist: QsbsDistribution) -> ArrayLike:
    """Density ``phi_SMN(a(t)) A(t)``."""
    return _ret(np.exp(qsbs_logpdf(t, dist)))


def qsbs_cdf(t: ArrayLike, dist: QsbsDistribution) -> ArrayLike:
    """CDF ``Phi_SMN(a(t))``."""
    return _ret(smn_cdf(a_of_t(t, dist), dist.family))


def qsbs_sf(t: ArrayLike, dist: QsbsDistribution) -> ArrayLike:
    return _ret(smn_sf(a_of_t(t, dist), dist.family))


def qsbs_quantile(p: ArrayLike, dist: QsbsDistribution) -> ArrayLike:
    """Closed-form quantile ``(Q/gamma^2) [alpha y_p + sqrt((alpha y_p)^2 + 4)]^2``."""
    y_p = np.asarray(smn_quantile(p, dist.family), dtype=float)
    b = bs_bracket(dist.alpha * y_p)
    return _ret(np.asarray(dist.Q) / dist.gamma**2 * np.asarray(b) ** 2)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def draw_mixing(family: MixtureFamily, size, rng: np.random.Generator) -> np.ndarray:
    """Draw the mixing precision ``U`` (so that ``g(U) = 1/U``)."""
    kind = family.kind
    if kind is FamilyKind.NORMAL:
        return np.ones(size)
    if kind is FamilyKind.CONTAMINATED_NORMAL:
        contaminated = rng.random(size) < family.nu
        return np.where(contaminated, family.delta, 1.0)
    if kind is FamilyKind.SLASH:
        return rng.beta(family.nu, 1.0, size)
    return rng.gamma(0.5 * family.nu, 2.0 / family.nu, size)


def sample_responses(
    alpha: float, Q: ArrayLike, q: float, family: MixtureFamily, rng: np.random.Generator
) -> np.ndarray:
    """One draw per entry of ``Q`` from the stochastic representation."""
    Q = np.atleast_1d(np.asarray(Q, dtype=float))
    n = Q.shape[0]
    y_q = float(smn_quantile(q, family))
    g = gamma_alpha(alpha, y_q)
    z = rng.standard_normal(n)
    u = draw_mixing(family, n, rng)
    w = alpha * z / np.sqrt(u)
    return Q / g**2 * np.asarray(bs_bracket(w)) ** 2


def qsbs_sample(n: int, dist: QsbsDistribution, seed) -> np.ndarray:
    """``n`` independent draws from ``dist``; deterministic given ``seed``.

    ``seed`` may be an int, a :class:`numpy.random.SeedSequence` or a
    :class:`numpy.random.Generator` (which is then advanced).
    """
    if int(n) < 1:
        raise ParameterError("n must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    Q = np.broadcast_to(np.asarray(dist.Q, dtype=float), (int(n),))
    return sample_responses(dist.alpha, Q, dist.q, dist.family, rng)


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


def mixing_moment(family: MixtureFamily, r: int) -> float:
    """``omega_r = E[g(U)^r] = E[U^-r]``.

    Raises
    ------
    MomentError
        If the moment is infinite (Student-t needs ``nu > 2r``, slash
        needs ``nu > r``).
    """
    if r < 0:
        raise ParameterError("moment order must be nonnegative")
    if r == 0:
        return 1.0
    kind = family.kind
    if kind is FamilyKind.NORMAL:
        return 1.0
    nu = family.nu
    if kind is FamilyKind.CONTAMINATED_NORMAL:
        return nu * family.delta ** (-r) + (1.0 - nu)
    if kind is FamilyKind.SLASH:
        if nu <= r:
            raise MomentError(f"omega_{r} is infinite for the slash kernel with nu={nu} (needs nu > {r})", r)
        return nu / (nu - r)
    if nu <= 2 * r:
        raise MomentError(f"omega_{r} is infinite for the Student-t kernel with nu={nu} (needs nu > {2 * r})", r)
    half = 0.5 * nu
    return float(np.exp(r * math.log(half) + special.gammaln(half - r) - special.gammaln(half)))


def _double_factorial_odd(m: int) -> int:
    """``(2m - 1)!! = E[Z^(2m)]`` for a standard normal ``Z``."""
    out = 1
    for j in range(1, 2 * m, 2):
        out *= j
    return out


def raw_moment(dist: QsbsDistribution, k: int) -> ArrayLike:
    """``E[T^k]`` from the binomial expansion of the stochastic representation.

    With ``v = alpha sqrt(g(U)) Z / 2`` one has ``T = (4Q/gamma^2)(v + sqrt(v^2+1))^2``;
    expanding ``(v + sqrt(v^2 + 1))^(2k)`` leaves only even powers of ``v``,
    each of which contributes ``(alpha/2)^(2m) omega_m E[Z^(2m)]``.
    """
    if k < 0:
        raise ParameterError("k must be nonnegative")
    c = (dist.alpha / 2.0) ** 2
    total = 0.0
    for i in range(k + 1):
        inner = 0.0
        for j in range(i + 1):
            m = k + j - i
            inner += comb(i, j) * mixing_moment(dist.family, m) * _double_factorial_odd(m) * c**m
        total += comb(2 * k, 2 * i) * inner
    return _ret((4.0 * np.asarray(dist.Q) / dist.gamma**2) ** k * total)


@dataclass(frozen=True)
class QsbsMoments:
    mean: float
    variance: float | None
    cv: float | None
    skewness: float | None
    kurtosis: float | None  # excess
    raw: tuple[float, ...]


def qsbs_moments(dist: QsbsDistribution, k_max: int = 4) -> QsbsMoments:
    """Mean, variance, CV, skewness, excess kurtosis and raw moments.

    Statistics needing moments above ``k_max`` are returned as ``None``.
    """
    if np.ndim(dist.Q) != 0:
        raise ParameterError("moments are defined for a scalar Q")
    if k_max < 1:
        raise ParameterError("k_max must be at least 1")
    raw = tuple(float(raw_moment(dist, k)) for k in range(1, k_max + 1))
    m1 = raw[0]
    var = cv = skew = kurt = None
    if k_max >= 2:
        var = raw[1] - m1**2
        cv = math.sqrt(var) / m1
    if k_max >= 3:
        mu3 = raw[2] - 3 * m1 * raw[1] + 2 * m1**3
        skew = mu3 / var**1.5
    if k_max >= 4:
        mu4 = raw[3] - 4 * m1 * raw[2] + 6 * m1**2 * raw[1] - 3 * m1**4
        kurt = mu4 / var**2 - 3.0
    return QsbsMoments(m1, var, cv, skew, kurt, raw)
