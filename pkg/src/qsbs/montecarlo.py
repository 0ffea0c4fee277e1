"""Monte Carlo studies: estimation accuracy, model selection and test size/power.

Every replication draws from its own stream
``default_rng(SeedSequence([seed, replication_index]))`` and redraws the
uniform(0, 1) covariates, so results do not depend on execution order and
serial and parallel runs agree exactly.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from importlib import metadata
from typing import Callable, Sequence

import numpy as np
import scipy
from scipy import special

from .distribution import sample_responses
from .em import EmSettings, em_fit, profile_nu
from .errors import ParameterError, QsbsError
from .inference import STATISTICS, HypothesisSpec, criteria, residuals, run_tests
from .model import Dataset, ModelSpec
from .smn import FamilyKind, MixtureFamily

log = logging.getLogger(__name__)

LEVELS = (0.01, 0.05, 0.1)
CRITERIA = ("aic", "bic", "aicc", "hic", "rmse")
Z975 = float(special.ndtri(0.975))


@dataclass(frozen=True)
class StudyConfig:
    """One simulation cell.

    ``beta_true[0]`` is the intercept; one uniform(0, 1) covariate is drawn
    for every further entry.
    """

    n: int
    q: float
    alpha_true: float
    beta_true: tuple
    family_true: MixtureFamily
    replications: int = 500
    seed: int = 0
    profile: bool = False  # estimation study: fix nu at truth unless True
    candidates: tuple = (FamilyKind.CONTAMINATED_NORMAL, FamilyKind.SLASH, FamilyKind.STUDENT_T)

    def __post_init__(self):
        object.__setattr__(self, "beta_true", tuple(float(b) for b in self.beta_true))
        object.__setattr__(self, "candidates", tuple(FamilyKind(c) for c in self.candidates))
        if int(self.replications) < 1:
            raise ParameterError("replications must be at least 1")
        if not 0 < self.q < 1:
            raise ParameterError("q must lie in (0, 1)")
        if not self.alpha_true > 0:
            raise ParameterError("alpha_true must be positive")
        if len(self.beta_true) < 1:
            raise ParameterError("beta_true needs at least the intercept")
        if int(self.n) <= len(self.beta_true) + 1:
            raise ParameterError("n is too small for the number of coefficients")

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(self.q, self.family_true)

    def to_dict(self) -> dict:
        return {
            "n": int(self.n),
            "q": self.q,
            "alpha_true": self.alpha_true,
            "beta_true": list(self.beta_true),
            "family_true": self.family_true.to_dict(),
            "replications": int(self.replications),
            "seed": int(self.seed),
            "profile": self.profile,
            "candidates": [c.value for c in self.candidates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        d = dict(d)
        d["family_true"] = MixtureFamily.from_dict(d["family_true"])
        return cls(**d)


def replication_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def generate_dataset(config: StudyConfig, replication_index: int, beta=None) -> Dataset:
    """Fresh covariates and responses for one replication.

    ``beta`` overrides ``config.beta_true`` (power studies) while keeping
    the same random stream.
    """
    beta = np.asarray(config.beta_true if beta is None else beta, dtype=float)
    rng = replication_rng(config.seed, replication_index)
    n, p = int(config.n), beta.shape[0] - 1
    X = np.column_stack([np.ones(n), rng.random((n, p))])
    Q = np.exp(X @ beta)
    t = sample_responses(config.alpha_true, Q, config.q, config.family_true, rng)
    return Dataset(t, X, ("intercept",) + tuple(f"x{j}" for j in range(1, p + 1)))


def _map(fn: Callable, indices: Sequence[int], workers: int) -> list:
    if workers <= 1:
        return [fn(i) for i in indices]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, indices, chunksize=max(1, len(indices) // (4 * workers))))


def provenance() -> dict:
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    return {"package": version, "numpy": np.__version__, "scipy": scipy.__version__}


# ---------------------------------------------------------------------------
# estimation study
# ---------------------------------------------------------------------------


@dataclass
class EstimationSummary:
    config: StudyConfig
    parameters: dict  # name -> {"bias", "mse", "cp"}
    residuals: dict  # "gcs"/"rq" -> averaged summary statistics
    n_used: int
    n_excluded: int
    estimates: np.ndarray = field(repr=False)

    def rows(self) -> list[dict]:
        out = []
        for name, vals in self.parameters.items():
            for metric in ("bias", "mse", "cp"):
                out.append({"section": "estimation", "name": name, "metric": metric, "value": vals[metric]})
        for kind, vals in self.residuals.items():
            for metric, v in vals.items():
                out.append({"section": "residuals", "name": kind, "metric": metric, "value": v})
        return out

    def to_dict(self) -> dict:
        return {
            "study": "estimation",
            "config": self.config.to_dict(),
            "parameters": self.parameters,
            "residuals": self.residuals,
            "n_used": self.n_used,
            "n_excluded": self.n_excluded,
        }


def _estimation_replicate(config: StudyConfig, settings: EmSettings, index: int):
    ds = generate_dataset(config, index)
    try:
        if config.profile:
            fit = profile_nu(config.spec, ds, settings).fit
        else:
            fit = em_fit(config.spec, ds, settings)
        if not fit.converged:
            return None
        res = residuals(fit, fit.spec, ds)
    except QsbsError as exc:
        log.debug("replication %d excluded: %s", index, exc)
        return None
    return fit.theta.as_vector(), fit.standard_errors, res.summary


def run_estimation_study(config: StudyConfig, settings: EmSettings | None = None, workers: int = 1) -> EstimationSummary:
    """Bias, MSE and Wald-interval coverage of ``(alpha, beta)`` plus residual summaries."""
    settings = settings or EmSettings()
    fn = partial(_estimation_replicate, config, settings)
    results = _map(fn, range(int(config.replications)), workers)
    kept = [r for r in results if r is not None]
    excluded = len(results) - len(kept)
    truth = np.concatenate([[config.alpha_true], config.beta_true])
    names = ["alpha"] + [f"beta{j}" for j in range(len(config.beta_true))]
    params = {}
    if kept:
        est = np.array([r[0] for r in kept])
        se = np.array([r[1] for r in kept])
        err = est - truth
        covered = np.abs(err) <= Z975 * se
        for j, nm in enumerate(names):
            params[nm] = {
                "bias": float(np.mean(err[:, j])),
                "mse": float(np.mean(err[:, j] ** 2)),
                "cp": float(np.mean(covered[:, j])),
            }
        res = {
            kind: {m: float(np.mean([r[2][kind][m] for r in kept])) for m in ("MN", "MD", "SD", "CS", "CK")}
            for kind in ("gcs", "rq")
        }
    else:
        est = np.empty((0, truth.shape[0]))
        res = {}
    return EstimationSummary(config, params, res, len(kept), excluded, est)


# ---------------------------------------------------------------------------
# selection study
# ---------------------------------------------------------------------------


@dataclass
class SelectionSummary:
    config: StudyConfig
    success: dict  # criterion -> rate
    chosen: dict  # criterion -> {family: count}
    n_used: int
    n_excluded: int

    def rows(self) -> list[dict]:
        return [
            {"section": "selection", "name": c, "metric": "success_rate", "value": v}
            for c, v in self.success.items()
        ]

    def to_dict(self) -> dict:
        return {
            "study": "selection",
            "config": self.config.to_dict(),
            "success": self.success,
            "chosen": self.chosen,
            "n_used": self.n_used,
            "n_excluded": self.n_excluded,
        }


def _selection_replicate(config: StudyConfig, settings: EmSettings, grids: dict, index: int):
    ds = generate_dataset(config, index)
    scores = {}
    for kind in config.candidates:
        fam = MixtureFamily.reference(kind)
        sub = replace(settings, nu_grid=grids.get(kind))
        try:
            fit = profile_nu(ModelSpec(config.q, fam), ds, sub).fit
            scores[kind] = criteria(fit, fit.spec, ds).to_dict()
        except QsbsError as exc:
            log.debug("replication %d excluded (%s): %s", index, kind.value, exc)
            return None
    return {c: min(scores, key=lambda k: scores[k][c]).value for c in CRITERIA}


def run_selection_study(
    config: StudyConfig,
    settings: EmSettings | None = None,
    nu_grids: dict | None = None,
    workers: int = 1,
) -> SelectionSummary:
    """Rate at which each criterion picks the generating family (nu profiled)."""
    settings = settings or EmSettings()
    grids = {FamilyKind(k): v for k, v in (nu_grids or {}).items()}
    fn = partial(_selection_replicate, config, settings, grids)
    results = _map(fn, range(int(config.replications)), workers)
    kept = [r for r in results if r is not None]
    truth = config.family_true.kind.value
    success, chosen = {}, {}
    for c in CRITERIA:
        picks = [r[c] for r in kept]
        success[c] = float(np.mean([p == truth for p in picks])) if kept else float("nan")
        chosen[c] = {k.value: picks.count(k.value) for k in config.candidates}
    return SelectionSummary(config, success, chosen, len(kept), len(results) - len(kept))


# ---------------------------------------------------------------------------
# size and power
# ---------------------------------------------------------------------------


@dataclass
class RejectionSummary:
    """Rejection rates keyed by ``delta -> statistic -> level``.

    The entry at ``delta = 0`` is the empirical size.
    """

    config: StudyConfig
    hypothesis: HypothesisSpec
    rates: dict
    n_used: dict
    n_excluded: dict
    levels: tuple = LEVELS

    def size(self, statistic: str, level: float) -> float:
        return self.rates[0.0][statistic][level]

    def power_curve(self, statistic: str, level: float) -> list[tuple[float, float]]:
        return [(d, self.rates[d][statistic][level]) for d in sorted(self.rates)]

    def rows(self) -> list[dict]:
        out = []
        for d in sorted(self.rates):
            for s in STATISTICS:
                for lv in self.levels:
                    out.append(
                        {"section": "rejection", "name": f"delta={d:g}|{s}", "metric": f"level={lv:g}", "value": self.rates[d][s][lv]}
                    )
        return out

    def to_dict(self) -> dict:
        return {
            "study": "tests",
            "config": self.config.to_dict(),
            "hypothesis": {
                "restricted_indices": list(self.hypothesis.restricted_indices),
                "restricted_values": list(self.hypothesis.restricted_values),
            },
            "levels": list(self.levels),
            "rates": {
                f"{d:g}": {s: {f"{lv:g}": v for lv, v in by.items()} for s, by in per.items()}
                for d, per in sorted(self.rates.items())
            },
            "n_used": {f"{d:g}": v for d, v in sorted(self.n_used.items())},
            "n_excluded": {f"{d:g}": v for d, v in sorted(self.n_excluded.items())},
        }


def _test_replicate(config: StudyConfig, settings: EmSettings, hyp: HypothesisSpec, beta, index: int):
    ds = generate_dataset(config, index, beta)
    try:
        rep = run_tests(config.spec, ds, settings, hyp)
    except QsbsError as exc:
        log.debug("replication %d excluded: %s", index, exc)
        return None
    return tuple(rep.p_values[s] for s in STATISTICS)


def run_test_study(
    config: StudyConfig,
    settings: EmSettings | None = None,
    hyp: HypothesisSpec | None = None,
    deltas: Sequence[float] = (0.0,),
    levels: Sequence[float] = LEVELS,
    workers: int = 1,
) -> RejectionSummary:
    """Rejection rates of the four tests with the restricted coefficients set to each ``delta``.

    The extra parameter is held at its true value.  Replication ``i`` uses
    the same random stream for every ``delta``.
    """
    settings = settings or EmSettings()
    if hyp is None:
        hyp = HypothesisSpec((len(config.beta_true) - 1,))
    hyp.check(len(config.beta_true))
    rates, used, excluded = {}, {}, {}
    for delta in deltas:
        beta = np.array(config.beta_true)
        beta[list(hyp.restricted_indices)] = np.asarray(hyp.restricted_values) + delta
        fn = partial(_test_replicate, config, settings, hyp, beta)
        results = _map(fn, range(int(config.replications)), workers)
        kept = np.array([r for r in results if r is not None]).reshape(-1, len(STATISTICS))
        d = float(delta)
        used[d] = int(kept.shape[0])
        excluded[d] = len(results) - used[d]
        rates[d] = {
            s: {float(lv): float(np.mean(kept[:, j] < lv)) if used[d] else float("nan") for lv in levels}
            for j, s in enumerate(STATISTICS)
        }
    return RejectionSummary(config, hyp, rates, used, excluded, tuple(float(lv) for lv in levels))


def binomial_se(p: float, m: int) -> float:
    return math.sqrt(p * (1.0 - p) / m)
