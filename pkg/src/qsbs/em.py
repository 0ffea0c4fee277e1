"""EM estimation of the QSBS quantile regression model.

The E-step computes ``u_i = E[U_i | T_i = t_i]`` (the mixing precision,
i.e. ``E[1/g(U_i) | t_i]``); the M-step maximizes the expected
complete-data log-likelihood

    Q(theta) = -n log(alpha gamma) - 1/2 sum log Q_i + sum log(gamma^2 t_i + 4 Q_i)
               - 2/(alpha gamma)^2 sum u_i (Q_i/t_i) (gamma^2 t_i / (4 Q_i) - 1)^2

with BFGS over ``(log alpha, beta)``.  The extra mixing parameter is held
fixed inside a run and chosen by :func:`profile_nu`.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, special

from .distribution import gamma_alpha, gamma_alpha_prime, mixing_moment
from .errors import (
    ConvergenceError,
    EvaluationError,
    MomentError,
    ParameterError,
    QsbsError,
    SingularInformationError,
)
from .model import Dataset, ModelSpec, Theta, observed_loglik
from .smn import FamilyKind, MixtureFamily

log = logging.getLogger(__name__)

# Below this a(t)^2 the slash weight uses its a -> 0 limit.
SLASH_LIMIT_CUTOFF = 1e-8


# ---------------------------------------------------------------------------
# settings and results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MStepSettings:
    """Inner BFGS controls.  ``gtol`` applies to the per-observation gradient."""

    gtol: float = 1e-9
    max_iterations: int = 200


def default_nu_grid(kind: FamilyKind) -> tuple:
    kind = FamilyKind(kind)
    if kind is FamilyKind.STUDENT_T:
        return tuple(float(v) for v in range(2, 31))
    if kind is FamilyKind.SLASH:
        return tuple(1.5 + 0.5 * i for i in range(18))
    if kind is FamilyKind.CONTAMINATED_NORMAL:
        nus = [round(0.01 * i, 2) for i in range(1, 51)]
        deltas = [round(0.02 + 0.04 * i, 2) for i in range(23)]
        return tuple((a, b) for a in nus for b in deltas)
    return ((),)


@dataclass(frozen=True)
class EmSettings:
    """EM controls.

    A run has converged when successive Q-function values differ by less
    than ``tolerance`` and the free part of the observed-data score ``S``
    has ``sqrt(S' I^-1 S) < gradient_tolerance``, with ``I`` the empirical
    information.  That norm does not depend on how the parameters are
    scaled, and half its square approximates the log-likelihood still to
    be gained.
    """

    tolerance: float = 1e-6
    max_iterations: int = 1000
    nu_grid: tuple | None = None
    m_step: MStepSettings = field(default_factory=MStepSettings)
    gradient_tolerance: float = 1e-4

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ParameterError("tolerance must be positive")
        if not self.gradient_tolerance > 0:
            raise ParameterError("gradient_tolerance must be positive")
        if int(self.max_iterations) < 1:
            raise ParameterError("max_iterations must be at least 1")

    def grid_for(self, kind: FamilyKind) -> tuple:
        return tuple(self.nu_grid) if self.nu_grid is not None else default_nu_grid(kind)


@dataclass
class FitResult:
    """Outcome of one EM run at a fixed extra parameter.

    Parameter vectors are ordered ``(alpha, beta_0, ..., beta_p)``.
    Coordinates held fixed (``fixed``) carry ``nan`` standard errors.
    """

    theta: Theta
    spec: ModelSpec
    weights: np.ndarray
    loglik: float
    q_value: float
    info_matrix: np.ndarray
    standard_errors: np.ndarray
    iterations: int
    converged: bool
    fixed: dict = field(default_factory=dict)
    loglik_trace: list = field(default_factory=list)
    param_names: tuple = ()
    message: str = ""

    @property
    def nu_hat(self) -> tuple:
        return self.spec.family.extra

    @property
    def family(self) -> MixtureFamily:
        return self.spec.family

    @property
    def n_free(self) -> int:
        return 1 + self.theta.beta.shape[0] - len(self.fixed)

    def to_dict(self) -> dict:
        return {
            "q": self.spec.q,
            "family": self.spec.family.to_dict(),
            "link": self.spec.link,
            "param_names": list(self.param_names),
            "alpha": self.theta.alpha,
            "beta": self.theta.beta.tolist(),
            "standard_errors": [None if math.isnan(s) else s for s in self.standard_errors.tolist()],
            "loglik": self.loglik,
            "q_value": self.q_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "fixed": {str(k): v for k, v in self.fixed.items()},
            "info_matrix": self.info_matrix.tolist(),
            "weights": self.weights.tolist(),
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        spec = ModelSpec(d["q"], MixtureFamily.from_dict(d["family"]), d.get("link", "log"))
        se = np.array([np.nan if s is None else s for s in d["standard_errors"]], dtype=float)
        return cls(
            theta=Theta(d["alpha"], d["beta"]),
            spec=spec,
            weights=np.asarray(d["weights"], dtype=float),
            loglik=d["loglik"],
            q_value=d["q_value"],
            info_matrix=np.asarray(d["info_matrix"], dtype=float),
            standard_errors=se,
            iterations=d["iterations"],
            converged=d["converged"],
            fixed={int(k): v for k, v in d.get("fixed", {}).items()},
            param_names=tuple(d.get("param_names", ())),
            message=d.get("message", ""),
        )


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------


def weights_from_a(a, family: MixtureFamily) -> np.ndarray:
    """``E[U | T = t]`` as a function of ``a(t)``."""
    a = np.asarray(a, dtype=float)
    a2 = a * a
    kind = family.kind
    if kind is FamilyKind.NORMAL:
        return np.ones_like(a2)
    nu = family.nu
    if kind is FamilyKind.STUDENT_T:
        return (nu + 1.0) / (nu + a2)
    if kind is FamilyKind.CONTAMINATED_NORMAL:
        delta = family.delta
        # numerator and denominator both divided by exp((1 - delta) a^2 / 2)
        damp = (1.0 - nu) * np.exp(-0.5 * (1.0 - delta) * a2)
        return (damp + nu * delta**1.5) / (damp + nu * math.sqrt(delta))
    out = np.full_like(a2, (1.0 + 2.0 * nu) / (3.0 + 2.0 * nu))
    big = a2 >= SLASH_LIMIT_CUTOFF
    if np.any(big):
        s = 0.5 * a2[big]
        out[big] = (
            (1.0 + 2.0 * nu) / a2[big]
            * special.gammainc(1.5 + nu, s)
            / special.gammainc(0.5 + nu, s)
        )
    return out


def conditional_weight(t, theta: Theta, Q, spec: ModelSpec):
    """E-step weight ``u = E[1/g(U) | T = t]`` for one or many observations."""
    t = np.asarray(t, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if np.any(t <= 0) or np.any(Q <= 0):
        raise ParameterError("t and Q must be positive")
    g = float(gamma_alpha(theta.alpha, spec.y_q))
    r = g * g * t / (4.0 * Q)
    a = (np.sqrt(r) - 1.0 / np.sqrt(r)) / theta.alpha
    out = weights_from_a(a, spec.family)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Q-function, gradient and per-observation scores
# ---------------------------------------------------------------------------


class _Terms:
    """Quantities shared by the Q-function, its gradient and the scores."""

    __slots__ = ("alpha", "g", "gp", "Q", "dQ", "t", "r", "denom", "a2")

    def __init__(self, alpha: float, beta: np.ndarray, spec: ModelSpec, dataset: Dataset):
        eta = dataset.design @ beta
        link = spec.link_fn
        self.alpha = alpha
        self.g = float(gamma_alpha(alpha, spec.y_q))
        self.gp = float(gamma_alpha_prime(alpha, spec.y_q))
        self.Q = link.inverse(eta)
        self.dQ = link.inverse_deriv(eta)
        self.t = dataset.responses
        self.r = self.g * self.g * self.t / (4.0 * self.Q)
        self.denom = self.g * self.g * self.t + 4.0 * self.Q
        self.a2 = (self.r + 1.0 / self.r - 2.0) / (alpha * alpha)


def _q_value(T: _Terms, u: np.ndarray) -> float:
    n = T.t.shape[0]
    return float(
        -n * math.log(T.alpha * T.g)
        - 0.5 * np.sum(np.log(T.Q))
        + np.sum(np.log(T.denom))
        - 0.5 * np.sum(u * T.a2)
    )


def _score_parts(T: _Terms, u: np.ndarray):
    """Per-observation ``dQ_i/dalpha`` and ``dQ_i/deta_i``."""
    al, g, gp, r = T.alpha, T.g, T.gp, T.r
    s_alpha = (
        -(g + al * gp) / (al * g)
        + 2.0 * g * gp * T.t / T.denom
        + u * (r + 1.0 / r - 2.0) / al**3
        - u * (gp / g) * (r - 1.0 / r) / al**2
    )
    dq = (
        -0.5 / T.Q
        + 4.0 / T.denom
        - (u / al**2) * (-(g * g * T.t) / (8.0 * T.Q**2) + 2.0 / (g * g * T.t))
    )
    return s_alpha, dq * T.dQ


def q_function(theta: Theta, weights, spec: ModelSpec, dataset: Dataset) -> float:
    """Expected complete-data log-likelihood (up to a theta-free constant)."""
    T = _Terms(theta.alpha, theta.beta, spec, dataset)
    with np.errstate(all="ignore"):
        val = _q_value(T, np.asarray(weights, dtype=float))
    if not math.isfinite(val):
        raise EvaluationError("Q-function is not finite")
    return val


def q_function_alt(theta: Theta, weights, spec: ModelSpec, dataset: Dataset) -> float:
    """Q-function written with ``log(gamma^2/2 + 2 Q_i/t_i)`` as in the complete-data form.

    Differs from :func:`q_function` by ``sum log(2 t_i)``, a theta-free offset.
    """
    T = _Terms(theta.alpha, theta.beta, spec, dataset)
    n = T.t.shape[0]
    u = np.asarray(weights, dtype=float)
    return float(
        -n * math.log(T.alpha * T.g)
        - 0.5 * np.sum(np.log(T.Q))
        + np.sum(np.log(0.5 * T.g**2 + 2.0 * T.Q / T.t))
        - 0.5 * np.sum(u * T.a2)
    )


def score_contributions(theta: Theta, weights, spec: ModelSpec, dataset: Dataset) -> np.ndarray:
    """Per-observation empirical scores, an ``n x (p+2)`` array.

    Row ``i`` is the ``i``-th summand of the Q-function gradient with the
    weights held fixed; at weights computed from ``theta`` it equals the
    gradient of ``log f(t_i; theta)``.
    """
    T = _Terms(theta.alpha, theta.beta, spec, dataset)
    s_alpha, s_eta = _score_parts(T, np.asarray(weights, dtype=float))
    return np.column_stack([s_alpha, s_eta[:, None] * dataset.design])


def q_gradient(theta: Theta, weights, spec: ModelSpec, dataset: Dataset) -> np.ndarray:
    """Analytic gradient of :func:`q_function` in ``(alpha, beta)``."""
    return score_contributions(theta, weights, spec, dataset).sum(axis=0)


def compute_weights(theta: Theta, spec: ModelSpec, dataset: Dataset) -> np.ndarray:
    T = _Terms(theta.alpha, theta.beta, spec, dataset)
    return weights_from_a(np.sqrt(T.a2), spec.family)


# ---------------------------------------------------------------------------
# information and standard errors
# ---------------------------------------------------------------------------


def empirical_info(theta: Theta, weights, spec: ModelSpec, dataset: Dataset, centered: bool = False) -> np.ndarray:
    """Empirical information ``sum_i s_i s_i'`` (minus ``S S'/n`` if ``centered``)."""
    s = score_contributions(theta, weights, spec, dataset)
    info = s.T @ s
    if centered:
        S = s.sum(axis=0)
        info = info - np.outer(S, S) / s.shape[0]
    return 0.5 * (info + info.T)


def _check_invertible(info: np.ndarray, names: Sequence[str]) -> None:
    vals, vecs = np.linalg.eigh(info)
    top = max(float(vals[-1]), 0.0)
    if not np.all(np.isfinite(vals)) or vals[0] <= top * 1e-13:
        v = vecs[:, 0]
        names = list(names) or [f"theta{j}" for j in range(len(v))]
        direction = {nm: float(c) for nm, c in zip(names, v) if abs(c) > 1e-3}
        raise SingularInformationError(
            f"empirical information is singular (smallest eigenvalue {vals[0]:.3g}); "
            f"null direction {direction}",
            direction,
        )


def standard_errors(info: np.ndarray, names: Sequence[str] = (), free: Sequence[int] | None = None) -> np.ndarray:
    """Square roots of the diagonal of ``info^-1``.

    With ``free`` given only that sub-block is inverted and the remaining
    coordinates get ``nan``.
    """
    info = np.asarray(info, dtype=float)
    k = info.shape[0]
    idx = np.arange(k) if free is None else np.asarray(free, dtype=int)
    sub = info[np.ix_(idx, idx)]
    sub_names = [names[i] for i in idx] if names else []
    _check_invertible(sub, sub_names)
    cov = np.linalg.inv(sub)
    out = np.full(k, np.nan)
    out[idx] = np.sqrt(np.diag(cov))
    return out


def param_names(dataset: Dataset) -> tuple[str, ...]:
    return ("alpha",) + tuple(f"beta[{nm}]" for nm in dataset.column_names)


# ---------------------------------------------------------------------------
# starting values
# ---------------------------------------------------------------------------


def initial_values(spec: ModelSpec, dataset: Dataset) -> Theta:
    """Least squares on ``log t`` for beta and a moment-type start for alpha.

    With ``e_i`` the log-scale residuals, ``mean(exp(e)) / exp(mean(e)) - 1``
    estimates ``omega_1 alpha^2 / 2``; the intercept is then shifted by
    ``2 log(gamma_alpha / 2)`` to move from the median to the q-quantile.
    """
    X, t = dataset.design, dataset.responses
    logt = np.log(t)
    beta0, *_ = np.linalg.lstsq(X, logt, rcond=None)
    e = logt - X @ beta0
    ratio = float(np.mean(np.exp(e)) / np.exp(np.mean(e)))
    try:
        omega1 = mixing_moment(spec.family, 1)
    except MomentError:
        omega1 = 1.0
    excess = max(ratio - 1.0, 0.0)
    alpha0 = float(np.clip(math.sqrt(2.0 * excess / omega1), 0.05, 5.0))
    beta0 = beta0.copy()
    beta0[0] += 2.0 * math.log(float(gamma_alpha(alpha0, spec.y_q)) / 2.0)
    return Theta(alpha0, beta0)


# ---------------------------------------------------------------------------
# the EM loop
# ---------------------------------------------------------------------------


class _MStep:
    """Negative Q-function per observation in ``z = (log alpha, beta_free)``."""

    def __init__(self, spec, dataset, weights, beta_base, free):
        self.spec = spec
        self.dataset = dataset
        self.u = weights
        self.base = beta_base
        self.free = free
        self.n = dataset.n

    def unpack(self, z):
        beta = self.base.copy()
        beta[self.free] = z[1:]
        return math.exp(z[0]), beta

    def __call__(self, z):
        if not abs(z[0]) < 30 or not np.all(np.abs(z[1:]) < 1e4):
            return np.inf, np.zeros_like(z)
        alpha, beta = self.unpack(z)
        with np.errstate(all="ignore"):
            T = _Terms(alpha, beta, self.spec, self.dataset)
            val = _q_value(T, self.u)
            s_alpha, s_eta = _score_parts(T, self.u)
            grad = np.empty_like(z)
            grad[0] = alpha * s_alpha.sum()
            grad[1:] = (s_eta @ self.dataset.design)[self.free]
        if not (math.isfinite(val) and np.all(np.isfinite(grad))):
            return np.inf, np.zeros_like(z)
        return -val / self.n, -grad / self.n


def _bfgs(fun, z0, settings: MStepSettings, hess_inv0=None):
    options = {"gtol": settings.gtol, "maxiter": settings.max_iterations}
    if hess_inv0 is not None:
        options["hess_inv0"] = hess_inv0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        warnings.simplefilter("ignore", optimize.OptimizeWarning)
        return optimize.minimize(fun, z0, jac=True, method="BFGS", options=options)


def em_fit(
    spec: ModelSpec,
    dataset: Dataset,
    settings: EmSettings | None = None,
    init: Theta | None = None,
    fixed: Mapping[int, float] | None = None,
) -> FitResult:
    """Maximum-likelihood fit of ``(alpha, beta)`` by EM.

    Parameters
    ----------
    fixed : mapping, optional
        ``{j: value}`` holds ``beta_j`` at ``value`` (restricted fits).

    Returns
    -------
    FitResult
        ``converged`` is False when the stopping rule was not met within
        ``settings.max_iterations`` or an M-step could not improve Q.
    """
    settings = settings or EmSettings()
    fixed = {int(k): float(v) for k, v in (fixed or {}).items()}
    k = dataset.n_coef
    for j in fixed:
        if not 0 <= j < k:
            raise ParameterError(f"fixed coefficient index {j} out of range")
    free = np.array([j for j in range(k) if j not in fixed], dtype=int)

    theta = init if init is not None else initial_values(spec, dataset)
    beta = np.array(theta.beta, dtype=float)
    if beta.shape[0] != k:
        raise ParameterError("initial beta has the wrong length")
    for j, v in fixed.items():
        beta[j] = v
    theta = Theta(theta.alpha, beta)

    weights = compute_weights(theta, spec, dataset)
    q_old = q_function(theta, weights, spec, dataset)
    trace = [observed_loglik(theta, spec, dataset)]
    hess_inv = None
    converged = False
    message = ""
    it = 0
    for it in range(1, int(settings.max_iterations) + 1):
        step = _MStep(spec, dataset, weights, theta.beta.copy(), free)
        z0 = np.concatenate([[math.log(theta.alpha)], theta.beta[free]])
        res = _bfgs(step, z0, settings.m_step, hess_inv)
        q_new = -res.fun * dataset.n if np.isfinite(res.fun) else -np.inf
        if not q_new >= q_old - 1e-10 * max(1.0, abs(q_old)):
            # damped restart from halfway along the failed step
            z_half = z0 + 0.5 * (res.x - z0)
            res = _bfgs(step, z_half, settings.m_step, None)
            q_new = -res.fun * dataset.n if np.isfinite(res.fun) else -np.inf
            if not q_new >= q_old - 1e-10 * max(1.0, abs(q_old)):
                message = f"M-step failed to increase Q at iteration {it}: {res.message}"
                log.warning(message)
                break
        hess_inv = _usable_hess_inv(res.hess_inv)
        alpha, beta = step.unpack(res.x)
        theta = Theta(alpha, beta)
        diff = abs(q_new - q_old)
        weights = compute_weights(theta, spec, dataset)
        q_old = q_function(theta, weights, spec, dataset)
        trace.append(observed_loglik(theta, spec, dataset))
        if diff < settings.tolerance and _score_norm(theta, weights, spec, dataset, free) < settings.gradient_tolerance:
            converged = True
            break
    else:
        message = f"stopping rule not met within {settings.max_iterations} iterations"

    loglik = trace[-1]
    names = param_names(dataset)
    info = empirical_info(theta, weights, spec, dataset)
    free_params = [0] + [1 + j for j in free]
    se = standard_errors(info, names, None if not fixed else free_params)
    return FitResult(
        theta=theta,
        spec=spec,
        weights=weights,
        loglik=loglik,
        q_value=q_old,
        info_matrix=info,
        standard_errors=se,
        iterations=it,
        converged=converged,
        fixed=fixed,
        loglik_trace=trace,
        param_names=names,
        message=message,
    )


def _score_norm(theta, weights, spec, dataset, free) -> float:
    """``sqrt(S' I^-1 S)`` over the free coordinates."""
    s = score_contributions(theta, weights, spec, dataset)[:, np.concatenate([[0], 1 + free])]
    S = s.sum(axis=0)
    step, *_ = np.linalg.lstsq(s.T @ s, S, rcond=None)
    return math.sqrt(max(float(S @ step), 0.0))


def _usable_hess_inv(H):
    """Symmetrized ``H`` if it is safely positive definite, else None."""
    if H is None:
        return None
    H = np.asarray(H, dtype=float)
    if not np.all(np.isfinite(H)):
        return None
    H = 0.5 * (H + H.T)
    vals = np.linalg.eigvalsh(H)
    if vals[0] <= 1e-10 * max(vals[-1], 0.0) or vals[0] <= 0:
        return None
    return H


# ---------------------------------------------------------------------------
# profile likelihood over the extra parameter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProfileEntry:
    extra: tuple
    loglik: float
    converged: bool
    error: str = ""


@dataclass
class ProfileResult:
    nu_hat: tuple
    trace: list
    fit: FitResult


def profile_nu(
    spec: ModelSpec,
    dataset: Dataset,
    settings: EmSettings | None = None,
    fixed: Mapping[int, float] | None = None,
) -> ProfileResult:
    """Fit at each grid value of the extra parameter and keep the best.

    Consecutive grid points are warm-started from the previous fit.
    """
    settings = settings or EmSettings()
    kind = spec.family.kind
    if kind is FamilyKind.NORMAL:
        fit = em_fit(spec, dataset, settings, fixed=fixed)
        return ProfileResult((), [ProfileEntry((), fit.loglik, fit.converged)], fit)
    grid = settings.grid_for(kind)
    if len(grid) == 0:
        raise ParameterError("nu grid is empty")
    trace: list[ProfileEntry] = []
    best: FitResult | None = None
    init = None
    for value in grid:
        extra = tuple(np.atleast_1d(value).astype(float).tolist())
        try:
            fam = MixtureFamily.from_params(kind, extra)
            sub = spec.with_family(fam)
            fit = em_fit(sub, dataset, settings, init=init, fixed=fixed)
        except QsbsError as exc:
            trace.append(ProfileEntry(extra, float("nan"), False, str(exc)))
            continue
        trace.append(ProfileEntry(extra, fit.loglik, fit.converged))
        if fit.converged:
            init = fit.theta
            if best is None or fit.loglik > best.loglik:
                best = fit
    if best is None:
        raise ConvergenceError(f"no grid value of the extra parameter produced a converged fit ({len(grid)} tried)")
    return ProfileResult(best.nu_hat, trace, best)
