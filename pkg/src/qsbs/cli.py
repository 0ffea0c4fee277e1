"""Command-line front end: ``qsbs {fit,test,residuals,simulate,predict}``.

Settings come from an optional flat ``key = value`` file (``--config``);
flags given on the command line override file values.  Every output file
embeds a hash of the resolved configuration and no timestamps, so reruns
with the same inputs are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .distribution import QsbsDistribution, qsbs_quantile
from .em import EmSettings, FitResult, profile_nu
from .errors import DataError, ParameterError, QsbsError
from .inference import (
    ENVELOPE_COLUMNS,
    STATISTICS,
    HypothesisSpec,
    criteria,
    residuals,
    run_tests,
    simulated_envelope,
)
from .model import Dataset, ModelSpec, fitted_quantiles
from .montecarlo import (
    LEVELS,
    StudyConfig,
    provenance,
    run_estimation_study,
    run_selection_study,
    run_test_study,
)
from .smn import FamilyKind, MixtureFamily, parse_kind

log = logging.getLogger("qsbs")

DEFAULTS = {
    "response": "amount",
    "covariates": ",".join(io.INSURANCE_DEFAULT_COVARIATES),
    "q": "0.5",
    "family": "cn",
    "nu_grid": "",
    "seed": "0",
    "out": ".",
    "format": "all",
    "tolerance": "1e-6",
    "max_iterations": "1000",
    "bands": "100",
    "hypothesis": "",
    "levels": "",
}

STUDY_DEFAULTS = {
    "study": "estimation",
    "n": "200",
    "q": "0.5",
    "alpha": "0.2",
    "beta": "2.5,3,0.9",
    "family": "t",
    "nu": "11",
    "replications": "500",
    "seed": "0",
    "deltas": "0",
    "restrict": "",
    "levels": ",".join(str(v) for v in LEVELS),
    "workers": "1",
    "profile": "false",
    "nu_grid": "",
    "tolerance": "1e-6",
    "max_iterations": "1000",
    "out": ".",
    "format": "all",
}


# ---------------------------------------------------------------------------
# configuration resolution
# ---------------------------------------------------------------------------


def _merge(defaults: dict, args: argparse.Namespace, allowed: Sequence[str]) -> dict:
    merged = dict(defaults)
    if getattr(args, "config", None):
        file_vals = io.read_config(args.config)
        unknown = sorted(set(file_vals) - set(allowed))
        if unknown:
            raise ParameterError(f"unknown key(s) in {args.config}: {unknown}")
        merged.update(file_vals)
    for key in allowed:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = str(val)
    return merged


def _as_int(d: dict, key: str) -> int:
    try:
        return int(str(d[key]).strip())
    except ValueError:
        raise ParameterError(f"{key} must be an integer, got {d[key]!r}") from None


def _as_float(d: dict, key: str) -> float:
    try:
        return float(str(d[key]).strip())
    except ValueError:
        raise ParameterError(f"{key} must be a number, got {d[key]!r}") from None


def _names(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in str(text).split(",") if s.strip())


@dataclass(frozen=True)
class RunConfig:
    data: str | None
    response: str
    covariates: tuple
    q: tuple
    family: FamilyKind
    nu_grid: tuple | None
    seed: int
    out: Path
    formats: io.OutputFormats
    tolerance: float
    max_iterations: int
    bands: int
    hypothesis: tuple = ()
    levels: tuple = ()
    fit_path: str | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_mapping(cls, d: dict) -> "RunConfig":
        kind = parse_kind(d["family"])
        q = tuple(io.parse_floats(d["q"]))
        if not q:
            raise ParameterError("at least one q is required")
        for v in q:
            if not 0 < v < 1:
                raise ParameterError(f"q values must lie in (0, 1), got {v}")
        hyps = tuple(h.strip() for h in str(d.get("hypothesis", "")).split(";") if h.strip())
        return cls(
            data=d.get("data"),
            response=str(d["response"]).strip(),
            covariates=_names(d["covariates"]),
            q=q,
            family=kind,
            nu_grid=io.parse_nu_grid(d.get("nu_grid"), kind) if kind is not FamilyKind.NORMAL else None,
            seed=_as_int(d, "seed"),
            out=Path(d["out"]),
            formats=io.OutputFormats.parse(d.get("format")),
            tolerance=_as_float(d, "tolerance"),
            max_iterations=_as_int(d, "max_iterations"),
            bands=_as_int(d, "bands"),
            hypothesis=hyps,
            levels=tuple(io.parse_floats(d.get("levels", ""))),
            fit_path=d.get("fit"),
            raw={k: v for k, v in d.items() if k not in ("out", "config")},
        )

    @property
    def settings(self) -> EmSettings:
        return EmSettings(self.tolerance, self.max_iterations, self.nu_grid)

    @property
    def hash(self) -> str:
        return io.config_hash(self.raw)

    def load_data(self) -> tuple[Dataset, dict]:
        if not self.data:
            raise ParameterError("no input data given (--data)")
        return io.ingest_csv(self.data, self.response, self.covariates)


def _parse_hypothesis(text: str, ds: Dataset) -> HypothesisSpec:
    names, values = [], []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        name, _, val = item.partition("=")
        names.append(name.strip())
        values.append(float(val) if val.strip() else 0.0)
    if not names:
        raise ParameterError(f"empty hypothesis {text!r}")
    return HypothesisSpec.from_names(ds, names, values)


def _header(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "config": cfg.raw, "config_hash": cfg.hash, "provenance": provenance()}


def _fit_one(cfg: RunConfig, ds: Dataset, q: float):
    spec = ModelSpec(q, MixtureFamily.reference(cfg.family))
    prof = profile_nu(spec, ds, cfg.settings)
    return prof


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _fit_text(records: list[dict], cfg: RunConfig, summary: dict) -> str:
    lines = [f"# config {cfg.hash}", f"family: {cfg.family.value}   response: {cfg.response}   n: {summary['n']}", ""]
    for rec in records:
        fit = rec["fit"]
        lines.append(f"q = {rec['q']:g}   extra = {tuple(rec['nu_hat'])}   "
                     f"loglik = {fit['loglik']:.4f}   iterations = {fit['iterations']}   converged = {fit['converged']}")
        lines.append(f"  {'parameter':<24}{'estimate':>14}{'se':>12}")
        est = [fit["alpha"]] + list(fit["beta"])
        for name, e, s in zip(fit["param_names"], est, fit["standard_errors"]):
            s_txt = f"{s:12.4f}" if s is not None else f"{'-':>12}"
            lines.append(f"  {name:<24}{e:14.4f}{s_txt}")
        c = rec["criteria"]
        lines.append("  " + "  ".join(f"{k.upper()} {c[k]:.3f}" for k in ("aic", "bic", "aicc", "hic", "rmse")))
        lines.append("")
    return "\n".join(lines)


def cmd_fit(cfg: RunConfig) -> dict:
    ds, summary = cfg.load_data()
    records = []
    for q in cfg.q:
        prof = _fit_one(cfg, ds, q)
        fit = prof.fit
        records.append(
            {
                "q": q,
                "nu_hat": list(fit.nu_hat),
                "fit": fit.to_dict(),
                "criteria": criteria(fit, fit.spec, ds).to_dict(),
                "profile": [
                    {"extra": list(e.extra), "loglik": e.loglik, "converged": e.converged, "error": e.error}
                    for e in prof.trace
                ],
            }
        )
    report = _header(cfg, "fit")
    report.update({"response_summary": summary, "fits": records})
    cfg.out.mkdir(parents=True, exist_ok=True)
    if cfg.formats.json:
        io.write_json(cfg.out / "fit.json", report)
    if cfg.formats.txt:
        (cfg.out / "fit.txt").write_text(_fit_text(records, cfg, summary), encoding="utf-8")
    if cfg.formats.csv:
        rows = []
        for rec in records:
            f = rec["fit"]
            est = [f["alpha"]] + list(f["beta"])
            for name, e, s in zip(f["param_names"], est, f["standard_errors"]):
                rows.append((rec["q"], name, e, "" if s is None else s))
        io.write_csv(cfg.out / "trace_q.csv", ("q", "parameter", "estimate", "se"), rows, f"config {cfg.hash}")
    return report


def cmd_test(cfg: RunConfig) -> dict:
    if not cfg.hypothesis:
        raise ParameterError("no hypothesis given (--hypothesis NAME[=VALUE][,NAME...])")
    ds, _ = cfg.load_data()
    hyps = [(h, _parse_hypothesis(h, ds)) for h in cfg.hypothesis]
    results = []
    for q in cfg.q:
        prof = _fit_one(cfg, ds, q)
        for text, hyp in hyps:
            rep = run_tests(prof.fit.spec, ds, cfg.settings, hyp, unrestricted=prof.fit)
            entry = {"q": q, "hypothesis": text, "nu_hat": list(prof.fit.nu_hat)}
            entry.update(rep.to_dict())
            entry["restricted_fit"] = {"alpha": rep.restricted.theta.alpha, "beta": rep.restricted.theta.beta.tolist()}
            results.append(entry)
    report = _header(cfg, "test")
    report["results"] = results
    cfg.out.mkdir(parents=True, exist_ok=True)
    if cfg.formats.json:
        io.write_json(cfg.out / "tests.json", report)
    if cfg.formats.txt:
        lines = [f"# config {cfg.hash}", f"{'q':>6}  {'hypothesis':<20}" + "".join(f"{s:>22}" for s in STATISTICS)]
        for r in results:
            cells = "".join(f"{r['statistics'][s]:>12.4f} ({r['p_values'][s]:.4f})" for s in STATISTICS)
            lines.append(f"{r['q']:>6g}  {r['hypothesis']:<20}{cells}")
        (cfg.out / "tests.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report


def cmd_residuals(cfg: RunConfig) -> dict:
    if len(cfg.q) != 1:
        raise ParameterError("residuals takes a single q")
    ds, _ = cfg.load_data()
    fit = _fit_one(cfg, ds, cfg.q[0]).fit
    res = residuals(fit, fit.spec, ds)
    env = simulated_envelope(fit, fit.spec, ds, bands=cfg.bands, seed=cfg.seed)
    cfg.out.mkdir(parents=True, exist_ok=True)
    note = f"config {cfg.hash}"
    if cfg.formats.csv:
        Q = fitted_quantiles(fit.spec, ds, fit.theta.beta)
        rows = zip(range(1, ds.n + 1), ds.responses.tolist(), Q.tolist(), res.gcs.tolist(), res.rq.tolist())
        io.write_csv(cfg.out / "residuals.csv", ("index", "response", "fitted_quantile", "gcs", "rq"), rows, note)
        for kind, e in env.items():
            io.write_csv(cfg.out / f"envelope_{kind}.csv", ENVELOPE_COLUMNS, e.rows(), note)
    report = _header(cfg, "residuals")
    report.update(
        {
            "q": cfg.q[0],
            "nu_hat": list(fit.nu_hat),
            "summary": res.summary,
            "outside_bands": {k: e.fraction_outside() for k, e in env.items()},
        }
    )
    if cfg.formats.json:
        io.write_json(cfg.out / "residuals_summary.json", report)
    return report


def _study_from_mapping(d: dict) -> tuple[str, StudyConfig, dict]:
    kind = parse_kind(d["family"])
    extra = io.parse_floats(d["nu"]) if kind is not FamilyKind.NORMAL else []
    family = MixtureFamily.from_params(kind, extra)
    profile = str(d["profile"]).strip().lower() in ("1", "true", "yes", "on")
    config = StudyConfig(
        n=_as_int(d, "n"),
        q=_as_float(d, "q"),
        alpha_true=_as_float(d, "alpha"),
        beta_true=tuple(io.parse_floats(d["beta"])),
        family_true=family,
        replications=_as_int(d, "replications"),
        seed=_as_int(d, "seed"),
        profile=profile,
    )
    study = str(d["study"]).strip().lower()
    if study not in ("estimation", "selection", "tests"):
        raise ParameterError(f"study must be estimation, selection or tests, got {study!r}")
    return study, config, d


def cmd_simulate(d: dict) -> dict:
    study, config, _ = _study_from_mapping(d)
    out = Path(d["out"])
    formats = io.OutputFormats.parse(d.get("format"))
    raw = {k: v for k, v in d.items() if k not in ("out", "config")}
    digest = io.config_hash(raw)
    settings = EmSettings(_as_float(d, "tolerance"), _as_int(d, "max_iterations"))
    workers = _as_int(d, "workers")
    if study == "estimation":
        grid = io.parse_nu_grid(d.get("nu_grid"), config.family_true.kind) if config.profile else None
        if grid is not None:
            settings = EmSettings(settings.tolerance, settings.max_iterations, grid)
        summary = run_estimation_study(config, settings, workers=workers)
    elif study == "selection":
        grids = {}
        for part in str(d.get("nu_grid", "")).split(";"):
            if "=" in part:
                k, v = part.split("=", 1)
                grids[parse_kind(k.strip())] = io.parse_nu_grid(v, parse_kind(k.strip()))
        summary = run_selection_study(config, settings, grids, workers=workers)
    else:
        restrict = _names(d.get("restrict", "")) or (str(len(config.beta_true) - 1),)
        hyp = HypothesisSpec(tuple(int(j) for j in restrict))
        summary = run_test_study(
            config,
            settings,
            hyp,
            deltas=tuple(io.parse_floats(d["deltas"])),
            levels=tuple(io.parse_floats(d["levels"])),
            workers=workers,
        )
    report = {
        "command": "simulate",
        "run_config": raw,
        "config_hash": digest,
        "provenance": provenance(),
        "seeds": {"root": config.seed, "scheme": "SeedSequence([seed, replication_index])"},
    }
    report.update(summary.to_dict())
    out.mkdir(parents=True, exist_ok=True)
    if formats.json:
        io.write_json(out / "study_summary.json", report)
    if formats.csv:
        rows = [(r["section"], r["name"], r["metric"], r["value"]) for r in summary.rows()]
        io.write_csv(out / "study_summary.csv", ("section", "name", "metric", "value"), rows, f"config {digest}")
    return report


def cmd_predict(cfg: RunConfig) -> dict:
    if not cfg.fit_path:
        raise ParameterError("predict needs --fit pointing at a fit.json report")
    report = json.loads(Path(cfg.fit_path).read_text(encoding="utf-8"))
    fits = [FitResult.from_dict(rec["fit"]) for rec in report["fits"]]
    covariates = cfg.covariates or tuple(n[len("beta[") : -1] for n in fits[0].param_names[2:])
    Z = _read_covariates(cfg.data, covariates)
    X = np.column_stack([np.ones(Z.shape[0]), Z])
    levels = cfg.levels
    rows = []
    for fit in fits:
        if X.shape[1] != fit.theta.beta.shape[0]:
            raise DataError(f"fit has {fit.theta.beta.shape[0]} coefficients but {X.shape[1]} design columns were built")
        Q = fit.spec.link_fn.inverse(X @ fit.theta.beta)
        extra = []
        for p in levels:
            dist = QsbsDistribution(fit.theta.alpha, Q, fit.spec.q, fit.spec.family)
            extra.append(np.asarray(qsbs_quantile(p, dist)))
        for i in range(X.shape[0]):
            rows.append((i + 1, fit.spec.q, float(Q[i]), *(float(e[i]) for e in extra)))
    cfg.out.mkdir(parents=True, exist_ok=True)
    cols = ("row", "q", "fitted_quantile") + tuple(f"quantile_{p:g}" for p in levels)
    io.write_csv(cfg.out / "predictions.csv", cols, rows, f"config {cfg.hash}")
    return {"rows": len(rows)}


def _read_covariates(path, names: Sequence[str]) -> np.ndarray:
    if not path:
        raise ParameterError("no input data given (--data)")
    header, rows = io._read_table(path)
    missing = [c for c in names if c not in header]
    if missing:
        raise DataError(f"missing column(s) {missing}; available: {header}")
    idx = [header.index(c) for c in names]
    out = np.empty((len(rows), len(idx)))
    for r, (line, row) in enumerate(rows):
        for j, k in enumerate(idx):
            try:
                out[r, j] = float(row[k])
            except (ValueError, IndexError):
                raise DataError(f"line {line}, column {names[j]!r}: not a number") from None
    return out


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags override its entries")
    p.add_argument("--seed", type=int, help="root seed (default 0)")
    p.add_argument("--q", help="quantile level(s), comma separated or a..b/step")
    p.add_argument("--family", help="normal, cn, slash or t")
    p.add_argument("--nu-grid", dest="nu_grid", help="extra-parameter grid; cn uses nu:delta pairs or 'NUS x DELTAS'")
    p.add_argument("--out", help="output directory (default .)")
    p.add_argument("--format", help="comma list of json, txt, csv (default all)")
    p.add_argument("--tolerance", type=float, help="EM stopping tolerance on the Q-function")
    p.add_argument("--max-iterations", dest="max_iterations", type=int)


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="input CSV with header row")
    p.add_argument("--response", help="response column (default amount)")
    p.add_argument("--covariates", help="comma-separated covariate columns (default optime,legrep)")


RUN_KEYS = tuple(DEFAULTS) + ("data", "fit")
STUDY_KEYS = tuple(STUDY_DEFAULTS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsbs", description="Quantile SBS regression via EM.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="profile the extra parameter and fit each q")
    _common(p)
    _data_flags(p)

    p = sub.add_parser("test", help="Wald, score, LR and gradient tests")
    _common(p)
    _data_flags(p)
    p.add_argument("--hypothesis", help="NAME[=VALUE][,NAME...]; separate hypotheses with ';'")

    p = sub.add_parser("residuals", help="GCS/RQ residuals and simulated envelopes")
    _common(p)
    _data_flags(p)
    p.add_argument("--bands", type=int, help="number of simulated envelope samples (default 100)")

    p = sub.add_parser("simulate", help="run a Monte Carlo study from a study file")
    _common(p)
    p.add_argument("--study", help="estimation, selection or tests")
    p.add_argument("--replications", type=int)
    p.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")

    p = sub.add_parser("predict", help="fitted quantiles for new covariate rows")
    _common(p)
    _data_flags(p)
    p.add_argument("--fit", help="fit.json produced by 'qsbs fit'")
    p.add_argument("--levels", help="extra probability levels to report, comma separated")
    return parser


def _error_object(exc: BaseException) -> dict:
    code = getattr(exc, "code", None) if isinstance(exc, QsbsError) else None
    obj = {"type": type(exc).__name__, "code": code or "io_error", "message": str(exc)}
    for attr in ("columns", "direction", "order"):
        if hasattr(exc, attr):
            val = getattr(exc, attr)
            obj[attr] = list(val) if isinstance(val, tuple) else val
    return {"error": obj}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            cmd_simulate(_merge(STUDY_DEFAULTS, args, STUDY_KEYS))
        else:
            cfg = RunConfig.from_mapping(_merge(DEFAULTS, args, RUN_KEYS))
            {"fit": cmd_fit, "test": cmd_test, "residuals": cmd_residuals, "predict": cmd_predict}[args.command](cfg)
    except (QsbsError, OSError, json.JSONDecodeError, KeyError) as exc:
        sys.stderr.write(json.dumps(_error_object(exc), sort_keys=True) + "\n")
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
