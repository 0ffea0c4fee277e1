"""Standard scale-mixture-of-normal (SMN) kernels.

Four symmetric kernels are supported, all with location 0 and scale 1 and
all built by mixing the normal precision, ``Y | U = u ~ N(0, 1/u)``:

* ``normal``  -- ``U = 1``;
* ``cn``      -- contaminated normal, ``U`` in ``{delta, 1}`` with
  probabilities ``{nu, 1 - nu}``;
* ``slash``   -- ``U ~ Beta(nu, 1)``;
* ``t``       -- Student-t, ``U ~ Gamma(nu/2, rate=nu/2)``.

The slash kernel is evaluated in closed form through the lower incomplete
gamma function.  With ``J(a, s) = int_0^1 u^(a-1) exp(-s u) du``::

    pdf(y) = nu / sqrt(2 pi) * J(nu + 1/2, y^2 / 2)
    cdf(y) = Phi(y) - y * pdf(y) / (2 nu)

the second identity following from one integration by parts of
``nu * int_0^1 u^(nu-1) Phi(sqrt(u) y) du``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import optimize, special

from .errors import EvaluationError, ParameterError

ArrayLike = Union[float, np.ndarray]

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Below this value of s the power series for J(a, s) is used.
_SERIES_CUTOFF = 1.0
_SERIES_TERMS = 30


class FamilyKind(str, enum.Enum):
    NORMAL = "normal"
    CONTAMINATED_NORMAL = "cn"
    SLASH = "slash"
    STUDENT_T = "t"


_ALIASES = {
    "normal": FamilyKind.NORMAL,
    "n": FamilyKind.NORMAL,
    "bs": FamilyKind.NORMAL,
    "cn": FamilyKind.CONTAMINATED_NORMAL,
    "cn-bs": FamilyKind.CONTAMINATED_NORMAL,
    "contaminated_normal": FamilyKind.CONTAMINATED_NORMAL,
    "contaminated-normal": FamilyKind.CONTAMINATED_NORMAL,
    "slash": FamilyKind.SLASH,
    "sl": FamilyKind.SLASH,
    "sl-bs": FamilyKind.SLASH,
    "t": FamilyKind.STUDENT_T,
    "student_t": FamilyKind.STUDENT_T,
    "student-t": FamilyKind.STUDENT_T,
    "t-bs": FamilyKind.STUDENT_T,
}


_REFERENCE_EXTRA = {
    FamilyKind.NORMAL: (),
    FamilyKind.CONTAMINATED_NORMAL: (0.1, 0.3),
    FamilyKind.SLASH: (4.0,),
    FamilyKind.STUDENT_T: (11.0,),
}


def parse_kind(name: str | FamilyKind) -> FamilyKind:
    if isinstance(name, FamilyKind):
        return name
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise ParameterError(
            f"unknown mixture family {name!r}; expected one of normal, cn, slash, t"
        ) from None


@dataclass(frozen=True)
class MixtureFamily:
    """Mixing law of the SMN kernel together with its extra parameter(s).

    Parameters
    ----------
    kind : FamilyKind
        Which mixing distribution is in force.
    nu : float, optional
        Contamination probability for ``cn`` (in (0, 1)), shape for
        ``slash`` and degrees of freedom for ``t`` (both > 0).  Unused for
        ``normal``.
    delta : float, optional
        Precision of the contaminating component, ``cn`` only, in (0, 1).
    """

    kind: FamilyKind
    nu: float | None = None
    delta: float | None = None

    def __post_init__(self):
        kind = parse_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is FamilyKind.NORMAL:
            if self.nu is not None or self.delta is not None:
                raise ParameterError("the normal family carries no extra parameters")
            return
        if self.nu is None or not math.isfinite(self.nu):
            raise ParameterError(f"family {kind.value!r} requires a finite nu")
        object.__setattr__(self, "nu", float(self.nu))
        if kind is FamilyKind.CONTAMINATED_NORMAL:
            if self.delta is None or not math.isfinite(self.delta):
                raise ParameterError("the contaminated normal requires delta")
            object.__setattr__(self, "delta", float(self.delta))
            if not 0.0 < self.nu < 1.0:
                raise ParameterError(f"contaminated normal needs 0 < nu < 1, got {self.nu}")
            if not 0.0 < self.delta < 1.0:
                raise ParameterError(f"contaminated normal needs 0 < delta < 1, got {self.delta}")
        else:
            if self.delta is not None:
                raise ParameterError("delta is only defined for the contaminated normal")
            if self.nu <= 0.0:
                raise ParameterError(f"family {kind.value!r} needs nu > 0, got {self.nu}")

    # constructors -----------------------------------------------------
    @classmethod
    def normal(cls) -> "MixtureFamily":
        return cls(FamilyKind.NORMAL)

    @classmethod
    def contaminated_normal(cls, nu: float, delta: float) -> "MixtureFamily":
        return cls(FamilyKind.CONTAMINATED_NORMAL, nu, delta)

    @classmethod
    def slash(cls, nu: float) -> "MixtureFamily":
        return cls(FamilyKind.SLASH, nu)

    @classmethod
    def student_t(cls, nu: float) -> "MixtureFamily":
        return cls(FamilyKind.STUDENT_T, nu)

    @classmethod
    def from_params(cls, kind: str | FamilyKind, extra=()) -> "MixtureFamily":
        """Build a family from its kind and a tuple of extra parameters."""
        kind = parse_kind(kind)
        extra = tuple(float(v) for v in np.atleast_1d(extra)) if extra is not None else ()
        if kind is FamilyKind.NORMAL:
            return cls(kind)
        if kind is FamilyKind.CONTAMINATED_NORMAL:
            if len(extra) != 2:
                raise ParameterError("the contaminated normal needs (nu, delta)")
            return cls(kind, extra[0], extra[1])
        if len(extra) != 1:
            raise ParameterError(f"family {kind.value!r} needs exactly one extra parameter")
        return cls(kind, extra[0])

    @classmethod
    def reference(cls, kind: str | FamilyKind) -> "MixtureFamily":
        """A representative member of ``kind`` (used before profiling)."""
        kind = parse_kind(kind)
        return cls.from_params(kind, _REFERENCE_EXTRA[kind])

    # helpers ----------------------------------------------------------
    @property
    def extra(self) -> tuple[float, ...]:
        """Extra parameters as a tuple: () / (nu,) / (nu, delta)."""
        if self.kind is FamilyKind.NORMAL:
            return ()
        if self.kind is FamilyKind.CONTAMINATED_NORMAL:
            return (self.nu, self.delta)
        return (self.nu,)

    def with_extra(self, extra) -> "MixtureFamily":
        return MixtureFamily.from_params(self.kind, extra)

    @property
    def label(self) -> str:
        if self.kind is FamilyKind.NORMAL:
            return "BS"
        if self.kind is FamilyKind.CONTAMINATED_NORMAL:
            return f"CN-BS({self.nu:g},{self.delta:g})"
        if self.kind is FamilyKind.SLASH:
            return f"SL-BS({self.nu:g})"
        return f"t-BS({self.nu:g})"

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "nu": self.nu, "delta": self.delta}

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureFamily":
        return cls(parse_kind(d["kind"]), d.get("nu"), d.get("delta"))


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------


def regularized_gamma_cdf(x: ArrayLike, shape: float, rate: float) -> ArrayLike:
    """CDF of a Gamma(shape, rate) variable, ``P(shape, rate * x)``.

    ``x = inf`` is accepted and maps to 1.
    """
    if not (shape > 0 and math.isfinite(shape)):
        raise ParameterError(f"shape must be positive and finite, got {shape}")
    if not (rate > 0 and math.isfinite(rate)):
        raise ParameterError(f"rate must be positive and finite, got {rate}")
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise ParameterError("x must be nonnegative")
    out = special.gammainc(shape, rate * x)
    return out if out.ndim else float(out)


def _log_lower_gamma_integral(a: float, s: np.ndarray) -> np.ndarray:
    """``log int_0^1 u^(a-1) exp(-s u) du`` for ``s >= 0``, elementwise."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    small = s < _SERIES_CUTOFF
    if np.any(small):
        ss = s[small]
        term = np.ones_like(ss)
        total = np.full_like(ss, 1.0 / a)
        for k in range(1, _SERIES_TERMS):
            term = term * (-ss) / k
            total = total + term / (a + k)
        out[small] = np.log(total)
    big = ~small
    if np.any(big):
        sb = s[big]
        out[big] = special.gammaln(a) - a * np.log(sb) + np.log(special.gammainc(a, sb))
    return out


# ---------------------------------------------------------------------------
# densities and distribution functions
# ---------------------------------------------------------------------------


def _as_finite(y: ArrayLike) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ParameterError("argument must be finite")
    return y


def _ret(out: np.ndarray):
    return out if out.ndim else float(out)


def smn_logpdf(y: ArrayLike, family: MixtureFamily) -> ArrayLike:
    """Log-density of the standard SMN kernel, evaluated in log space."""
    y = _as_finite(y)
    kind = family.kind
    y2 = y * y
    if kind is FamilyKind.NORMAL:
        out = -0.5 * y2 - LOG_SQRT_2PI
    elif kind is FamilyKind.CONTAMINATED_NORMAL:
        nu, delta = family.nu, family.delta
        out = np.logaddexp(
            math.log(nu) + 0.5 * math.log(delta) - 0.5 * delta * y2,
            math.log1p(-nu) - 0.5 * y2,
        ) - LOG_SQRT_2PI
    elif kind is FamilyKind.SLASH:
        nu = family.nu
        out = math.log(nu) - LOG_SQRT_2PI + _log_lower_gamma_integral(nu + 0.5, 0.5 * y2)
    else:
        nu = family.nu
        const = (
            special.gammaln(0.5 * (nu + 1.0))
            - special.gammaln(0.5 * nu)
            - 0.5 * math.log(nu * math.pi)
        )
        out = const - 0.5 * (nu + 1.0) * np.log1p(y2 / nu)
    return _ret(np.asarray(out, dtype=float))


def smn_pdf(y: ArrayLike, family: MixtureFamily) -> ArrayLike:
    """Density of the standard SMN kernel."""
    return _ret(np.exp(np.asarray(smn_logpdf(y, family))))


def _lower_cdf(y: np.ndarray, family: MixtureFamily) -> np.ndarray:
    """CDF for ``y <= 0``, where no cancellation occurs."""
    kind = family.kind
    if kind is FamilyKind.NORMAL:
        return special.ndtr(y)
    if kind is FamilyKind.CONTAMINATED_NORMAL:
        nu, delta = family.nu, family.delta
        return nu * special.ndtr(math.sqrt(delta) * y) + (1.0 - nu) * special.ndtr(y)
    if kind is FamilyKind.SLASH:
        nu = family.nu
        pdf = np.exp(smn_logpdf(y, family))
        return special.ndtr(y) - y * pdf / (2.0 * nu)
    return special.stdtr(family.nu, y)


def smn_cdf(y: ArrayLike, family: MixtureFamily) -> ArrayLike:
    """CDF of the standard SMN kernel."""
    y = _as_finite(y)
    neg = -np.abs(y)
    low = _lower_cdf(neg, family)
    out = np.where(y <= 0, low, 1.0 - low)
    return _ret(np.asarray(out, dtype=float))


def smn_sf(y: ArrayLike, family: MixtureFamily) -> ArrayLike:
    """Survival function ``1 - cdf(y)``, accurate in the upper tail."""
    y = _as_finite(y)
    return smn_cdf(-y, family)


def smn_quantile(p: ArrayLike, family: MixtureFamily) -> ArrayLike:
    """Quantile function of the standard SMN kernel.

    Normal and Student-t use standard inverses; the contaminated normal and
    slash kernels are inverted with Brent's method on an expanding bracket.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(~(p_arr > 0) | ~(p_arr < 1)):
        raise ParameterError("p must lie in the open interval (0, 1)")
    kind = family.kind
    if kind is FamilyKind.NORMAL:
        return _ret(special.ndtri(p_arr))
    if kind is FamilyKind.STUDENT_T:
        return _ret(special.stdtrit(family.nu, p_arr))
    flat = np.array([_bracketed_quantile(float(pi), family) for pi in p_arr.ravel()])
    return _ret(flat.reshape(p_arr.shape))


def _bracketed_quantile(p: float, family: MixtureFamily) -> float:
    if p == 0.5:
        return 0.0
    f = lambda y: float(smn_cdf(y, family)) - p  # noqa: E731
    lo, hi = -1.0, 1.0
    while f(lo) > 0:
        lo *= 2.0
        if lo < -1e300:
            raise EvaluationError(f"could not bracket the {p} quantile")
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e300:
            raise EvaluationError(f"could not bracket the {p} quantile")
    return optimize.brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
