"""Reading and writing datasets, fit reports, study summaries and SROC files."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional

from .copula import CopulaFamily, CopulaSpec
from .inference import FitResult
from .likelihood import PARAM_NAMES, Dataset, Design, ModelSpec, ParamSet, StudyRecord
from .simulate import StudySummaryTable
from .sroc import DensityGrid, SrocCurve, SummaryPoint

REPORT_SCHEMA = "copmeta-report/1"
DATASET_COLUMNS = ("study_id", "design", "tp", "diseased", "tn", "nondiseased")
SUMMARY_COLUMNS = ("fit", "parameter", "statistic", "value")
CURVE_COLUMNS = ("block", "direction", "q", "x_independent", "x_dependent")
GRID_COLUMNS = ("sens", "spec", "density")

_TAU_FAMILY = {"tau_cc": "cop_cc", "tau12": "cop12", "tau13": "cop13"}


class ParseError(ValueError):
    pass


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def _count(row: dict, col: str, line: int) -> int:
    raw = (row.get(col) or "").strip()
    try:
        value = int(raw)
    except ValueError:
        raise ParseError(f"non-integer {col} {raw!r} at row {line}") from None
    if value < 0:
        raise ParseError(f"negative {col} at row {line}")
    return value


def parse_dataset(path) -> Dataset:
    """Read a study-level CSV with columns study_id, design, tp, diseased, tn, nondiseased.

    Rows are numbered from 1, not counting the header.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path} is empty")
        header = [h.strip() for h in reader.fieldnames]
        missing = [c for c in DATASET_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"missing column(s) {', '.join(missing)} in {path}")
        reader.fieldnames = header
        studies = []
        for line, row in enumerate(reader, start=1):
            design = (row.get("design") or "").strip().lower()
            if design not in ("cc", "cohort"):
                raise ParseError(f"unknown design {design!r} at row {line} (expected cc or cohort)")
            tp = _count(row, "tp", line)
            dis = _count(row, "diseased", line)
            tn = _count(row, "tn", line)
            nondis = _count(row, "nondiseased", line)
            if tp > dis:
                raise ParseError(f"tp exceeds diseased at row {line}")
            if tn > nondis:
                raise ParseError(f"tn exceeds nondiseased at row {line}")
            try:
                rec = StudyRecord(Design(design), tp, dis, tn, nondis, (row.get("study_id") or "").strip())
            except ValueError as exc:
                raise ParseError(f"{exc} at row {line}") from None
            studies.append(rec)
    if not studies:
        raise ParseError(f"{path} has no studies")
    return Dataset(tuple(studies))


def write_dataset(data: Dataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_COLUMNS)
        for k, s in enumerate(data.studies, start=1):
            w.writerow([s.study_id or f"s{k}", s.design.value, s.y1, s.n1, s.y2, s.n2])


# ---------------------------------------------------------------------------
# fit reports
# ---------------------------------------------------------------------------


def _num(x) -> Optional[float]:
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _theta(spec: ModelSpec, name: str, tau) -> Optional[float]:
    fam = getattr(spec, _TAU_FAMILY[name])
    if fam is None or tau is None:
        return None
    if fam is CopulaFamily.INDEPENDENCE:
        return 0.0
    return CopulaSpec.from_tau(fam, tau).theta


def fit_to_dict(fit: FitResult, extras: dict = None) -> dict:
    est = fit.estimates
    params = {}
    for name in PARAM_NAMES:
        entry = {
            "estimate": _num(getattr(est, name)),
            "se": _num(fit.std_errors.get(name)),
            "estimated": fit.std_errors.get(name) is not None,
            "fixed_at_zero": name in fit.fixed_at_zero,
        }
        if name in _TAU_FAMILY:
            entry["theta"] = _num(_theta(fit.spec, name, getattr(est, name)))
        params[name] = entry
    out = {
        "schema": REPORT_SCHEMA,
        "method": fit.method,
        "model": fit.spec.name,
        "spec": fit.spec.to_dict(),
        "parameters": params,
        "loglik": fit.loglik,
        "convergence": {
            "converged": bool(fit.converged),
            "n_iterations": int(fit.n_iterations),
            "gradient_norm": _num(fit.gradient_norm),
            "message": fit.message,
        },
        "data_hash": fit.data_hash,
    }
    if extras:
        out.update(extras)
    return out


def fit_from_dict(d: dict) -> FitResult:
    if d.get("schema") != REPORT_SCHEMA:
        raise ParseError(f"unsupported report schema {d.get('schema')!r}")
    params = d["parameters"]
    spec = ModelSpec.from_dict(d["spec"])
    est = ParamSet(**{n: params[n]["estimate"] for n in PARAM_NAMES})
    ses = {}
    for n in PARAM_NAMES:
        se = params[n]["se"]
        if params[n]["estimated"]:
            se = float("nan") if se is None else float(se)
        ses[n] = se
    conv = d["convergence"]
    return FitResult(
        estimates=est,
        std_errors=ses,
        loglik=float(d["loglik"]),
        converged=bool(conv["converged"]),
        n_iterations=int(conv["n_iterations"]),
        gradient_norm=float("nan") if conv["gradient_norm"] is None else float(conv["gradient_norm"]),
        spec=spec,
        method=d["method"],
        fixed_at_zero=tuple(n for n in PARAM_NAMES if params[n]["fixed_at_zero"]),
        data_hash=d.get("data_hash", ""),
        message=conv.get("message", ""),
    )


def write_fit_report(fit: FitResult, path, extras: dict = None) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(fit_to_dict(fit, extras), fh, indent=2)
        fh.write("\n")


def read_fit_report(path) -> FitResult:
    with Path(path).open(encoding="utf-8") as fh:
        return fit_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# simulation study summaries
# ---------------------------------------------------------------------------


def write_study_summary(tables: Iterable[StudySummaryTable], path) -> None:
    """Long-form CSV: one row per (fit, parameter, statistic); blank value means not comparable."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for t in tables:
            for name, stat, value in t.rows():
                w.writerow([t.name, name, stat, "" if value is None else repr(float(value))])


def read_study_summary(path) -> dict:
    """Nested ``{fit: {parameter: {statistic: value}}}`` from a summary CSV."""
    out: dict = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            value = None if row["value"] == "" else float(row["value"])
            out.setdefault(row["fit"], {}).setdefault(row["parameter"], {})[row["statistic"]] = value
    return out


# ---------------------------------------------------------------------------
# SROC files
# ---------------------------------------------------------------------------


def write_curves(curves: Iterable[SrocCurve], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for c in curves:
            for xi, xd in zip(c.x_independent, c.x_dependent):
                w.writerow([c.block.value, c.direction.value, repr(c.q), repr(float(xi)), repr(float(xd))])


def read_curves(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            {"block": r["block"], "direction": r["direction"], "q": float(r["q"]),
             "x_independent": float(r["x_independent"]), "x_dependent": float(r["x_dependent"])}
            for r in csv.DictReader(fh)
        ]


def write_grid(grid: DensityGrid, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_COLUMNS)
        for i, s in enumerate(grid.sens):
            for j, t in enumerate(grid.spec):
                w.writerow([repr(float(s)), repr(float(t)), repr(float(grid.density[i, j]))])


def read_grid(path) -> list[tuple[float, float, float]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [(float(r["sens"]), float(r["spec"]), float(r["density"])) for r in csv.DictReader(fh)]


def summary_point_dict(p: SummaryPoint) -> dict:
    return {"sens": p.sens, "spec": p.spec, "prevalence": p.prevalence}
