"""Regenerate the synthetic insurance fixture and its expected outputs.

Everything here is written from scratch with numpy/scipy and does not import
the package: a contaminated-normal BS density and sampler, a direct
maximization of the observed log-likelihood, central-difference scores for
the information, and posterior weights summed over the two mixture atoms.

Run from the repository root::

    python tests/data/make_insurance_fixture.py
"""

import csv
import json
import math
from pathlib import Path

import numpy as np
from scipy import optimize, stats

HERE = Path(__file__).parent
CSV_PATH = HERE / "insurance_synthetic.csv"
JSON_PATH = HERE / "insurance_expected.json"

N = 767
SEED = 767
TRUE = {"q": 0.5, "beta": (7.5092, 0.0272, 1.0195), "alpha": 0.9356, "nu": 0.03, "delta": 0.1}
NUS = (0.02, 0.03, 0.04)
DELTAS = (0.06, 0.1, 0.14)
LEVELS = (0.25, 0.5, 0.75)
HYPOTHESES = {"optime": 1, "legrep": 2}


# --- contaminated-normal BS law -------------------------------------------


def cn_cdf(y, nu, delta):
    return nu * stats.norm.cdf(math.sqrt(delta) * y) + (1 - nu) * stats.norm.cdf(y)


def cn_quantile(q, nu, delta):
    return optimize.brentq(lambda y: cn_cdf(y, nu, delta) - q, -60.0, 60.0, xtol=1e-15, rtol=1e-15)


def cn_logpdf(y, nu, delta):
    return np.logaddexp(
        math.log(nu) + stats.norm.logpdf(math.sqrt(delta) * y) + 0.5 * math.log(delta),
        math.log1p(-nu) + stats.norm.logpdf(y),
    )


def gamma_const(alpha, yq):
    return alpha * yq + math.sqrt((alpha * yq) ** 2 + 4.0)


def logpdf_terms(alpha, beta, t, X, q, nu, delta):
    """Per-observation log f(t_i) under the quantile parameterization."""
    yq = cn_quantile(q, nu, delta)
    Q = np.exp(X @ beta)
    scale = 4.0 * Q / gamma_const(alpha, yq) ** 2
    ratio = np.sqrt(t / scale)
    a = (ratio - 1.0 / ratio) / alpha
    log_jac = np.log(t + scale) - 1.5 * np.log(t) - np.log(2.0 * alpha) - 0.5 * np.log(scale)
    return cn_logpdf(a, nu, delta) + log_jac


def sample(rng, alpha, Q, q, nu, delta):
    yq = cn_quantile(q, nu, delta)
    scale = 4.0 * Q / gamma_const(alpha, yq) ** 2
    u = np.where(rng.random(Q.shape) < nu, delta, 1.0)
    y = rng.standard_normal(Q.shape) / np.sqrt(u)
    w = 0.5 * alpha * y
    return scale * (w + np.sqrt(w * w + 1.0)) ** 2


def posterior_u(alpha, beta, t, X, q, nu, delta):
    """E[U | T = t] by summing over U in {delta, 1}."""
    yq = cn_quantile(q, nu, delta)
    Q = np.exp(X @ beta)
    scale = 4.0 * Q / gamma_const(alpha, yq) ** 2
    ratio = np.sqrt(t / scale)
    a = (ratio - 1.0 / ratio) / alpha
    w_small = nu * math.sqrt(delta) * np.exp(-0.5 * delta * a * a)
    w_one = (1 - nu) * np.exp(-0.5 * a * a)
    return (delta * w_small + w_one) / (w_small + w_one)


def expected_complete_loglik(alpha, beta, u, t, X, q, nu, delta):
    """sum_i [-log(alpha gamma) - log(Q_i)/2 + log(gamma^2 t_i + 4 Q_i) - u_i a_i^2/2]."""
    yq = cn_quantile(q, nu, delta)
    g = gamma_const(alpha, yq)
    Q = np.exp(X @ beta)
    r = g * g * t / (4.0 * Q)
    a2 = (r + 1.0 / r - 2.0) / alpha**2
    return float(np.sum(-math.log(alpha * g) - 0.5 * np.log(Q) + np.log(g * g * t + 4.0 * Q) - 0.5 * u * a2))


# --- direct maximization -------------------------------------------------


def mle(t, X, q, nu, delta, fixed=None, start=None):
    """Maximize the observed log-likelihood over (log alpha, free beta)."""
    fixed = fixed or {}
    p = X.shape[1]
    free = [j for j in range(p) if j not in fixed]

    def unpack(z):
        beta = np.zeros(p)
        beta[free] = z[1:]
        for j, v in fixed.items():
            beta[j] = v
        return math.exp(z[0]), beta

    def nll(z):
        alpha, beta = unpack(z)
        val = -np.sum(logpdf_terms(alpha, beta, t, X, q, nu, delta)) / t.size
        return val if np.isfinite(val) else 1e10

    if start is None:
        b0 = np.linalg.lstsq(X, np.log(t), rcond=None)[0]
        resid = np.log(t) - X @ b0
        start = np.concatenate([[math.log(max(np.std(resid), 0.1))], b0])
        start = np.concatenate([[start[0]], start[1:][free]])
    res = optimize.minimize(nll, start, method="Nelder-Mead",
                            options={"maxiter": 40000, "maxfev": 40000, "xatol": 1e-10, "fatol": 1e-14})
    res = optimize.minimize(nll, res.x, method="BFGS", options={"gtol": 1e-10, "maxiter": 10000})
    alpha, beta = unpack(res.x)
    return alpha, beta, -res.fun * t.size, res.x


def numeric_scores(alpha, beta, t, X, q, nu, delta):
    """Central-difference per-observation scores in (alpha, beta)."""
    theta = np.concatenate([[alpha], beta])
    cols = []
    for k in range(theta.size):
        h = 1e-6 * max(1.0, abs(theta[k]))
        up, dn = theta.copy(), theta.copy()
        up[k] += h
        dn[k] -= h
        fu = logpdf_terms(up[0], up[1:], t, X, q, nu, delta)
        fd = logpdf_terms(dn[0], dn[1:], t, X, q, nu, delta)
        cols.append((fu - fd) / (2 * h))
    return np.column_stack(cols)


# --- fixture -------------------------------------------------------------


def write_data():
    rng = np.random.default_rng(SEED)
    optime = np.round(rng.uniform(0.0, 100.0, N), 2)
    legrep = (rng.random(N) < 0.5).astype(int)
    month = rng.integers(1, 13, N)
    X = np.column_stack([np.ones(N), optime, legrep])
    Q = np.exp(X @ np.array(TRUE["beta"]))
    amount = np.round(sample(rng, TRUE["alpha"], Q, TRUE["q"], TRUE["nu"], TRUE["delta"]), 2)
    amount = np.maximum(amount, 0.01)
    with CSV_PATH.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["amount", "optime", "legrep", "month"])
        for row in zip(amount, optime, legrep, month):
            w.writerow([f"{row[0]:.2f}", f"{row[1]:.2f}", int(row[2]), int(row[3])])


def read_data():
    with CSV_PATH.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    t = np.array([float(r["amount"]) for r in rows])
    X = np.column_stack([np.ones(len(rows)), [float(r["optime"]) for r in rows], [float(r["legrep"]) for r in rows]])
    return t, X


def main():
    write_data()
    t, X = read_data()
    fits, tests = [], []
    for q in LEVELS:
        best = None
        for nu in NUS:
            for delta in DELTAS:
                alpha, beta, ll, z = mle(t, X, q, nu, delta)
                if best is None or ll > best["loglik"]:
                    best = {"nu": nu, "delta": delta, "alpha": alpha, "beta": beta, "loglik": ll, "z": z}
        nu, delta = best["nu"], best["delta"]
        alpha, beta = best["alpha"], best["beta"]
        s_hat = numeric_scores(alpha, beta, t, X, q, nu, delta)
        J_hat = s_hat.T @ s_hat
        se = np.sqrt(np.diag(np.linalg.inv(J_hat)))
        fits.append({
            "q": q, "nu_hat": [nu, delta], "alpha": alpha, "beta": beta.tolist(),
            "standard_errors": se.tolist(), "loglik": best["loglik"],
        })
        u_hat = posterior_u(alpha, beta, t, X, q, nu, delta)
        q_hat = expected_complete_loglik(alpha, beta, u_hat, t, X, q, nu, delta)
        theta_hat = np.concatenate([[alpha], beta])
        for name, j in HYPOTHESES.items():
            start = np.delete(best["z"], 1 + j)
            a0, b0, ll0, _ = mle(t, X, q, nu, delta, fixed={j: 0.0}, start=start)
            s = numeric_scores(a0, b0, t, X, q, nu, delta)
            S = s.sum(axis=0)
            J_tilde = s.T @ s - np.outer(S, S) / t.size
            d = theta_hat - np.concatenate([[a0], b0])
            u0 = posterior_u(a0, b0, t, X, q, nu, delta)
            q0 = expected_complete_loglik(a0, b0, u0, t, X, q, nu, delta)
            tests.append({
                "q": q, "hypothesis": name,
                "statistics": {
                    "wald": float(d @ J_hat @ d),
                    "score": float(S @ np.linalg.solve(J_tilde, S)),
                    "lr": float(-2.0 * (q0 - q_hat)),
                    "gradient": float(S @ d),
                },
                "observed_lr": float(-2.0 * (ll0 - best["loglik"])),
            })
        print(f"q={q}: extra=({nu}, {delta}) alpha={alpha:.4f} beta={np.round(beta, 4)}")
    out = {
        "n": N, "seed": SEED, "truth": TRUE, "family": "cn",
        "nu_grid": f"{','.join(map(str, NUS))} x {','.join(map(str, DELTAS))}",
        "fits": fits, "tests": tests,
    }
    JSON_PATH.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
