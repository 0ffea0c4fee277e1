"""Hypothesis tests, residual diagnostics and model-selection criteria."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats

from .distribution import gamma_alpha, sample_responses
from .em import (
    EmSettings,
    FitResult,
    empirical_info,
    em_fit,
    score_contributions,
    _check_invertible,
)
from .errors import ConvergenceError, DataError, ParameterError
from .model import Dataset, ModelSpec, Theta, fitted_quantiles
from .smn import smn_cdf, smn_sf

log = logging.getLogger(__name__)

STATISTICS = ("wald", "score", "lr", "gradient")
CDF_CLIP = 1e-12


# ---------------------------------------------------------------------------
# hypothesis tests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HypothesisSpec:
    """``H0: beta_j = value_j`` for every ``j`` in ``restricted_indices``."""

    restricted_indices: tuple
    restricted_values: tuple = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.restricted_indices)
        vals = tuple(float(v) for v in self.restricted_values) or (0.0,) * len(idx)
        if len(idx) == 0:
            raise ParameterError("a hypothesis needs at least one restriction")
        if len(set(idx)) != len(idx):
            raise ParameterError("restricted indices must be distinct")
        if len(vals) != len(idx):
            raise ParameterError("restricted_values must match restricted_indices")
        object.__setattr__(self, "restricted_indices", idx)
        object.__setattr__(self, "restricted_values", vals)

    @property
    def r(self) -> int:
        return len(self.restricted_indices)

    def as_fixed(self) -> dict:
        return dict(zip(self.restricted_indices, self.restricted_values))

    def check(self, n_coef: int) -> None:
        for j in self.restricted_indices:
            if not 0 <= j < n_coef:
                raise ParameterError(f"restricted index {j} outside 0..{n_coef - 1}")

    @classmethod
    def from_names(cls, dataset: Dataset, names: Sequence[str], values: Sequence[float] = ()):
        """Build from design column names; unknown names raise :class:`DataError`."""
        return cls(tuple(dataset.index_of(nm) for nm in names), tuple(values))


@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    statistics: dict
    df: int
    p_values: dict
    clamped: dict
    observed_lr: float
    unrestricted: FitResult | None = field(default=None, repr=False)
    restricted: FitResult | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "df": self.df,
            "statistics": dict(self.statistics),
            "p_values": dict(self.p_values),
            "clamped": dict(self.clamped),
            "observed_lr": self.observed_lr,
        }

    def rejects(self, level: float) -> dict:
        return {k: self.p_values[k] < level for k in STATISTICS}


def compute_statistics(unrestricted: FitResult, restricted: FitResult, dataset: Dataset, r: int) -> TestReport:
    """Wald, score, likelihood-ratio and gradient statistics from two fits.

    Scores and information are the empirical versions; the score-test
    information at the restricted fit is centered by ``S S'/n``.
    """
    spec = unrestricted.spec
    d = unrestricted.theta.as_vector() - restricted.theta.as_vector()
    J_hat = unrestricted.info_matrix
    s = score_contributions(restricted.theta, restricted.weights, spec, dataset)
    S = s.sum(axis=0)
    J_tilde = empirical_info(restricted.theta, restricted.weights, spec, dataset, centered=True)
    _check_invertible(J_hat, unrestricted.param_names)
    _check_invertible(J_tilde, restricted.param_names)

    raw = {
        "wald": float(d @ J_hat @ d),
        "score": float(S @ np.linalg.solve(J_tilde, S)),
        "lr": float(-2.0 * (restricted.q_value - unrestricted.q_value)),
        "gradient": float(S @ d),
    }
    clamped = {}
    values = {}
    for k, v in raw.items():
        clamped[k] = v < 0
        values[k] = max(v, 0.0)
        if v < 0:
            log.debug("%s statistic was negative (%.3g); clamped at 0", k, v)
    p = {k: float(stats.chi2.sf(v, r)) for k, v in values.items()}
    observed_lr = float(-2.0 * (restricted.loglik - unrestricted.loglik))
    return TestReport(values, r, p, clamped, observed_lr, unrestricted, restricted)


def run_tests(
    spec: ModelSpec,
    dataset: Dataset,
    settings: EmSettings | None,
    hyp: HypothesisSpec,
    unrestricted: FitResult | None = None,
) -> TestReport:
    """Fit with and without the restriction and compute all four statistics."""
    settings = settings or EmSettings()
    hyp.check(dataset.n_coef)
    if hyp.r >= dataset.n_coef:
        raise ParameterError("cannot restrict every coefficient including the intercept")
    if unrestricted is None:
        unrestricted = em_fit(spec, dataset, settings)
    if not unrestricted.converged:
        raise ConvergenceError(f"unrestricted fit did not converge: {unrestricted.message}")
    init_beta = np.array(unrestricted.theta.beta)
    for j, v in hyp.as_fixed().items():
        init_beta[j] = v
    restricted = em_fit(
        spec, dataset, settings, init=Theta(unrestricted.theta.alpha, init_beta), fixed=hyp.as_fixed()
    )
    if not restricted.converged:
        raise ConvergenceError(f"restricted fit did not converge: {restricted.message}")
    return compute_statistics(unrestricted, restricted, dataset, hyp.r)


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------


def _fitted_tails(fit: FitResult, spec: ModelSpec, dataset: Dataset, responses=None):
    t = dataset.responses if responses is None else np.asarray(responses, dtype=float)
    Q = fitted_quantiles(spec, dataset, fit.theta.beta)
    g = float(gamma_alpha(fit.theta.alpha, spec.y_q))
    ratio = np.sqrt(g * g * t / (4.0 * Q))
    a = (ratio - 1.0 / ratio) / fit.theta.alpha
    cdf = np.clip(smn_cdf(a, spec.family), CDF_CLIP, 1.0 - CDF_CLIP)
    sf = np.clip(smn_sf(a, spec.family), CDF_CLIP, 1.0 - CDF_CLIP)
    return cdf, sf


def _gcs(sf):
    return -np.log(sf)


def _rq(cdf, sf):
    return np.where(cdf <= 0.5, special.ndtri(cdf), -special.ndtri(sf))


def gcs_residuals(fit: FitResult, spec: ModelSpec, dataset: Dataset) -> np.ndarray:
    """``-log(1 - F(t_i))``; unit exponential under the model."""
    _, sf = _fitted_tails(fit, spec, dataset)
    return _gcs(sf)


def rq_residuals(fit: FitResult, spec: ModelSpec, dataset: Dataset) -> np.ndarray:
    """``Phi^-1(F(t_i))``; standard normal under the model."""
    cdf, sf = _fitted_tails(fit, spec, dataset)
    return _rq(cdf, sf)


def residual_summary(x) -> dict:
    """MN, MD, SD, CS and excess CK (moment estimators for CS and CK)."""
    x = np.asarray(x, dtype=float)
    return {
        "MN": float(np.mean(x)),
        "MD": float(np.median(x)),
        "SD": float(np.std(x, ddof=1)),
        "CS": float(stats.skew(x)),
        "CK": float(stats.kurtosis(x)),
    }


@dataclass
class ResidualSet:
    gcs: np.ndarray
    rq: np.ndarray
    summary: dict

    def to_dict(self) -> dict:
        return {"gcs": self.gcs.tolist(), "rq": self.rq.tolist(), "summary": self.summary}


def residuals(fit: FitResult, spec: ModelSpec, dataset: Dataset) -> ResidualSet:
    cdf, sf = _fitted_tails(fit, spec, dataset)
    gcs, rq = _gcs(sf), _rq(cdf, sf)
    return ResidualSet(gcs, rq, {"gcs": residual_summary(gcs), "rq": residual_summary(rq)})


# ---------------------------------------------------------------------------
# simulated envelopes
# ---------------------------------------------------------------------------


@dataclass
class Envelope:
    """QQ-plot bands for one residual type, ordered by order statistic."""

    kind: str
    theoretical: np.ndarray
    observed: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray

    def rows(self):
        for i in range(self.observed.shape[0]):
            yield (
                i + 1,
                float(self.theoretical[i]),
                float(self.observed[i]),
                float(self.lower[i]),
                float(self.median[i]),
                float(self.upper[i]),
            )

    def fraction_outside(self) -> float:
        out = (self.observed < self.lower) | (self.observed > self.upper)
        return float(np.mean(out))


ENVELOPE_COLUMNS = ("order", "theoretical", "observed", "lower", "median", "upper")


def simulated_envelope(
    fit: FitResult, spec: ModelSpec, dataset: Dataset, bands: int = 100, seed: int = 0
) -> dict:
    """Simulated 2.5/50/97.5% bands for sorted GCS and RQ residuals.

    Each band draws a fresh response vector from the fitted model with its
    own ``SeedSequence([seed, b])`` and evaluates residuals at the fitted
    parameters (no refit).
    """
    if int(bands) < 2:
        raise ParameterError("need at least two simulated bands")
    n = dataset.n
    Q = fitted_quantiles(spec, dataset, fit.theta.beta)
    sims = {"gcs": np.empty((bands, n)), "rq": np.empty((bands, n))}
    for b in range(int(bands)):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), b]))
        t = sample_responses(fit.theta.alpha, Q, spec.q, spec.family, rng)
        cdf, sf = _fitted_tails(fit, spec, dataset, responses=t)
        sims["gcs"][b] = np.sort(_gcs(sf))
        sims["rq"][b] = np.sort(_rq(cdf, sf))
    pp = (np.arange(1, n + 1) - 0.5) / n
    theo = {"gcs": -np.log1p(-pp), "rq": special.ndtri(pp)}
    res = residuals(fit, spec, dataset)
    observed = {"gcs": np.sort(res.gcs), "rq": np.sort(res.rq)}
    out = {}
    for kind in ("gcs", "rq"):
        lo, md, hi = np.percentile(sims[kind], [2.5, 50.0, 97.5], axis=0)
        out[kind] = Envelope(kind, theo[kind], observed[kind], lo, md, hi)
    return out


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CriteriaReport:
    aic: float
    bic: float
    aicc: float
    hic: float
    rmse: float
    k: int
    n: int
    loglik: float

    def to_dict(self) -> dict:
        return {
            "aic": self.aic,
            "bic": self.bic,
            "aicc": self.aicc,
            "hic": self.hic,
            "rmse": self.rmse,
            "k": self.k,
            "n": self.n,
            "loglik": self.loglik,
            "k_convention": "alpha plus free beta; profiled extra parameter not counted",
        }


def information_criteria(loglik: float, k: int, n: int) -> dict:
    if n <= k + 1:
        raise DataError(f"AICc undefined: n={n} must exceed k+1={k + 1}")
    dev = -2.0 * loglik
    return {
        "aic": dev + 2.0 * k,
        "bic": dev + k * math.log(n),
        "aicc": dev + 2.0 * k * n / (n - k - 1),
        "hic": dev + 2.0 * k * math.log(math.log(n)),
    }


def criteria(fit: FitResult, spec: ModelSpec, dataset: Dataset) -> CriteriaReport:
    k = fit.n_free
    n = dataset.n
    ic = information_criteria(fit.loglik, k, n)
    Q = fitted_quantiles(spec, dataset, fit.theta.beta)
    rmse = float(np.sqrt(np.mean((dataset.responses - Q) ** 2)))
    return CriteriaReport(ic["aic"], ic["bic"], ic["aicc"], ic["hic"], rmse, k, n, fit.loglik)
