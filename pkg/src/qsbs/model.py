"""Regression structure: data container, link, predictor and log-likelihood."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .distribution import gamma_alpha
from .errors import DataError, EvaluationError, ParameterError, RankDeficiencyError
from .smn import MixtureFamily, smn_logpdf, smn_quantile


@dataclass(frozen=True)
class Dataset:
    """Positive responses with a design matrix whose first column is all ones.

    Use :meth:`from_covariates` to have the intercept column prepended.
    """

    responses: np.ndarray
    design: np.ndarray
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        t = np.asarray(self.responses, dtype=float).ravel()
        X = np.atleast_2d(np.asarray(self.design, dtype=float))
        if X.shape[0] != t.shape[0]:
            raise DataError(f"design has {X.shape[0]} rows but there are {t.shape[0]} responses")
        names = tuple(self.column_names) or ("intercept",) + tuple(
            f"x{j}" for j in range(1, X.shape[1])
        )
        if len(names) != X.shape[1]:
            raise DataError("column_names must name every design column")
        bad = np.flatnonzero(~np.isfinite(t) | (t <= 0))
        if bad.size:
            raise DataError(f"responses must be positive and finite; offending rows {bad[:10].tolist()}")
        if not np.all(np.isfinite(X)):
            raise DataError("design contains non-finite values")
        if not np.all(X[:, 0] == 1.0):
            raise DataError("the first design column must be the all-ones intercept")
        n, k = X.shape
        if n <= k:
            raise DataError(f"need more observations ({n}) than coefficients ({k})")
        _check_rank(X, names)
        t.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "responses", t)
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "column_names", names)

    @classmethod
    def from_covariates(cls, responses, covariates=None, names: Sequence[str] = ()):
        t = np.asarray(responses, dtype=float).ravel()
        if covariates is None:
            Z = np.empty((t.shape[0], 0))
        else:
            Z = np.asarray(covariates, dtype=float)
            if Z.ndim == 1:
                Z = Z[:, None]
        names = tuple(names) or tuple(f"x{j}" for j in range(1, Z.shape[1] + 1))
        X = np.column_stack([np.ones(t.shape[0]), Z])
        return cls(t, X, ("intercept",) + names)

    @property
    def n(self) -> int:
        return self.responses.shape[0]

    @property
    def n_coef(self) -> int:
        return self.design.shape[1]

    def index_of(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise DataError(f"no design column named {name!r}") from None

    def with_responses(self, responses) -> "Dataset":
        return Dataset(responses, self.design, self.column_names)


def _check_rank(X: np.ndarray, names: tuple[str, ...]) -> None:
    _, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(X.shape) * np.finfo(float).eps * 100
    rank = int(np.sum(diag > tol))
    if rank == X.shape[1]:
        return
    indep = np.sort(piv[:rank])
    dep = int(piv[rank])
    coef, *_ = np.linalg.lstsq(X[:, indep], X[:, dep], rcond=None)
    scale = np.abs(coef) * np.linalg.norm(X[:, indep], axis=0)
    involved = [names[j] for j, c in zip(indep, scale) if c > 1e-8 * np.linalg.norm(X[:, dep])]
    cols = tuple(sorted(set(involved + [names[dep]]), key=names.index))
    raise RankDeficiencyError(
        f"design is rank deficient: column {names[dep]!r} is a linear combination of {involved}",
        cols,
    )


class LogLink:
    """``h(Q) = log Q``, mapping the positive half-line onto the reals."""

    name = "log"

    @staticmethod
    def inverse(eta):
        return np.exp(eta)

    @staticmethod
    def inverse_deriv(eta):
        return np.exp(eta)


LINKS = {"log": LogLink}


@dataclass(frozen=True)
class ModelSpec:
    """Quantile level, kernel family (with fixed extra parameters) and link."""

    q: float
    family: MixtureFamily
    link: str = "log"
    y_q: float = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ParameterError(f"q must lie in (0, 1), got {self.q}")
        if self.link not in LINKS:
            raise ParameterError(f"unsupported link {self.link!r}")
        object.__setattr__(self, "y_q", float(smn_quantile(self.q, self.family)))

    @property
    def link_fn(self):
        return LINKS[self.link]

    def with_family(self, family: MixtureFamily) -> "ModelSpec":
        return ModelSpec(self.q, family, self.link)


@dataclass(frozen=True)
class Theta:
    alpha: float
    beta: np.ndarray

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        beta = np.array(self.beta, dtype=float).ravel()
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", beta)

    def as_vector(self) -> np.ndarray:
        """``(alpha, beta_0, ..., beta_p)``."""
        return np.concatenate([[self.alpha], self.beta])

    @classmethod
    def from_vector(cls, v) -> "Theta":
        v = np.asarray(v, dtype=float)
        return cls(float(v[0]), v[1:])


def linear_predictor(spec: ModelSpec, dataset: Dataset, beta) -> np.ndarray:
    """``eta_i = x_i' beta``."""
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != dataset.n_coef:
        raise ParameterError(f"beta has {beta.shape[0]} entries, design has {dataset.n_coef} columns")
    return dataset.design @ beta


def fitted_quantiles(spec: ModelSpec, dataset: Dataset, beta) -> np.ndarray:
    """``Q_i = h^-1(x_i' beta)``."""
    return spec.link_fn.inverse(linear_predictor(spec, dataset, beta))


def loglik_terms(theta: Theta, spec: ModelSpec, dataset: Dataset) -> np.ndarray:
    """Per-observation log-densities ``log f(t_i; alpha, Q_i)``."""
    t = dataset.responses
    Q = fitted_quantiles(spec, dataset, theta.beta)
    al = theta.alpha
    g = float(gamma_alpha(al, spec.y_q))
    r = g * g * t / (4.0 * Q)
    sr = np.sqrt(r)
    a = (sr - 1.0 / sr) / al
    log_A = np.log(0.5 * g * g + 2.0 * Q / t) - math.log(al * g) - 0.5 * np.log(4.0 * Q * t)
    with np.errstate(all="ignore"):
        if not np.all(np.isfinite(a)):
            raise EvaluationError("a(t) is not finite at the supplied parameters")
        return smn_logpdf(a, spec.family) + log_A


def observed_loglik(theta: Theta, spec: ModelSpec, dataset: Dataset) -> float:
    """Observed-data log-likelihood, summed in log space."""
    with np.errstate(all="ignore"):
        val = float(np.sum(loglik_terms(theta, spec, dataset)))
    if not math.isfinite(val):
        raise EvaluationError(f"log-likelihood is not finite at alpha={theta.alpha}, beta={theta.beta}")
    return val
