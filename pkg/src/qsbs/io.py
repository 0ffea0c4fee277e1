"""CSV ingestion, run configuration files and deterministic report writers."""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import DataError, ParameterError
from .model import Dataset
from .smn import FamilyKind, parse_kind

INSURANCE_COLUMNS = ("amount", "optime", "legrep", "month")
INSURANCE_DEFAULT_COVARIATES = ("optime", "legrep")  # month is left out by default


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def descriptive_summary(x) -> dict:
    """MN, MD, SD, CV, CS, CK (excess), range, min, max and n of a sample."""
    x = np.asarray(x, dtype=float)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else float("nan")
    mn = float(np.mean(x))
    return {
        "MN": mn,
        "MD": float(np.median(x)),
        "SD": sd,
        "CV": sd / mn,
        "CS": float(stats.skew(x)),
        "CK": float(stats.kurtosis(x)),
        "range": float(np.ptp(x)),
        "min": float(np.min(x)),
        "max": float(np.max(x)),
        "n": int(x.size),
    }


def _read_table(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = [(reader.line_num, row) for row in reader if any(c.strip() for c in row)]
    return header, rows


def ingest_csv(path, response_column: str, covariate_columns: Sequence[str] = ()) -> tuple[Dataset, dict]:
    """Read a header-row CSV into a :class:`Dataset` plus a response summary.

    Line numbers in error messages count the header as line 1.
    """
    header, rows = _read_table(path)
    wanted = [response_column, *covariate_columns]
    missing = [c for c in wanted if c not in header]
    if missing:
        raise DataError(f"missing column(s) {missing}; available: {header}")
    if len(set(wanted)) != len(wanted):
        dup = sorted({c for c in wanted if wanted.count(c) > 1})
        raise DataError(f"column(s) requested more than once: {dup}")
    idx = [header.index(c) for c in wanted]
    values = np.empty((len(rows), len(wanted)))
    blanks, bad = [], []
    for r, (line, row) in enumerate(rows):
        for j, k in enumerate(idx):
            cell = row[k].strip() if k < len(row) else ""
            if cell == "" or cell.upper() in ("NA", "NAN"):
                blanks.append(line)
                break
            try:
                values[r, j] = float(cell)
            except ValueError:
                bad.append(f"line {line}, column {wanted[j]!r}: {cell!r}")
                break
    if blanks:
        raise DataError(f"missing values on line(s) {blanks[:20]}")
    if bad:
        raise DataError("non-numeric cell(s): " + "; ".join(bad[:10]))
    t = values[:, 0]
    nonpos = [rows[i][0] for i in np.flatnonzero(~(t > 0))]
    if nonpos:
        raise DataError(f"response {response_column!r} must be positive; offending line(s) {nonpos[:20]}")
    ds = Dataset.from_covariates(t, values[:, 1:], tuple(covariate_columns))
    return ds, descriptive_summary(t)


def validate_insurance_schema(path) -> list[str]:
    """Check that a file carries the insurance columns; returns its header."""
    header, _ = _read_table(path)
    required = INSURANCE_COLUMNS[:3]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"insurance file lacks column(s) {missing}; expected {list(INSURANCE_COLUMNS)}")
    return header


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def read_config(path) -> dict:
    """Flat ``key = value`` file; an optional ``[section]`` header is ignored.

    Keys are normalized to lower case with dashes turned into underscores.
    """
    path = Path(path)
    if not path.is_file():
        raise ParameterError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = lambda k: k.strip().lower().replace("-", "_")
    try:
        parser.read_string(text if text.lstrip().startswith("[") else "[run]\n" + text)
    except configparser.Error as exc:
        raise ParameterError(f"cannot parse {path}: {exc}") from None
    out = {}
    for section in parser.sections():
        out.update(dict(parser.items(section)))
    return out


def parse_floats(text: str) -> list[float]:
    """Comma-separated numbers; ``a..b/step`` expands to an inclusive range."""
    out: list[float] = []
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        if ".." in item:
            try:
                span, step = item.split("/") if "/" in item else (item, "1")
                lo, hi = (float(v) for v in span.split(".."))
                step = float(step)
            except ValueError:
                raise ParameterError(f"bad range {item!r}; use start..stop/step") from None
            if step <= 0 or hi < lo:
                raise ParameterError(f"bad range {item!r}")
            count = int(math.floor((hi - lo) / step + 1e-9)) + 1
            out.extend(round(lo + i * step, 12) for i in range(count))
        else:
            try:
                out.append(float(item))
            except ValueError:
                raise ParameterError(f"not a number: {item!r}") from None
    return out


def parse_nu_grid(text: str | None, kind: FamilyKind) -> tuple | None:
    """Grid of extra parameters for ``kind``.

    ``t``/``slash``: a number list (``2,3,5`` or ``2..30/1``).  ``cn``:
    explicit ``nu:delta`` pairs (``0.03:0.1,0.04:0.06``) or the product of
    two lists written ``NUS x DELTAS``.
    """
    if text is None or str(text).strip() == "":
        return None
    kind = parse_kind(kind)
    text = str(text).strip()
    if kind is FamilyKind.NORMAL:
        raise ParameterError("the normal family has no extra parameter to profile")
    if kind is FamilyKind.CONTAMINATED_NORMAL:
        if " x " in text:
            nus, deltas = (parse_floats(part) for part in text.split(" x "))
            return tuple((a, b) for a in nus for b in deltas)
        pairs = []
        for item in text.split(","):
            try:
                a, b = item.split(":")
                pairs.append((float(a), float(b)))
            except ValueError:
                raise ParameterError(f"contaminated-normal grid entries must be nu:delta, got {item!r}") from None
        return tuple(pairs)
    return tuple(parse_floats(text))


# ---------------------------------------------------------------------------
# deterministic writers
# ---------------------------------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj), encoding="utf-8")


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], comment: str | None = None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_csv_rows(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, list(reader)


@dataclass(frozen=True)
class OutputFormats:
    json: bool = True
    txt: bool = True
    csv: bool = True

    @classmethod
    def parse(cls, text: str | None) -> "OutputFormats":
        if text is None or text.strip() in ("", "all"):
            return cls()
        names = {s.strip().lower() for s in text.split(",") if s.strip()}
        unknown = names - {"json", "txt", "csv"}
        if unknown:
            raise ParameterError(f"unknown output format(s) {sorted(unknown)}; choose from json, txt, csv")
        return cls("json" in names, "txt" in names, "csv" in names)
