"""Command-line entry point: ``copmeta <command> [options]``.

Every command validates its whole configuration before touching the output
directory, so a bad family name or link never leaves partial files behind.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from . import io
from .copula import CopulaFamily
from .inference import fit_cl, fit_ml, lrt_vs_independence, model_scan
from .likelihood import PARAM_NAMES, PERMUTATIONS, Dataset, ModelSpec
from .margin import MarginSpec
from .quadrature import DEFAULT_NQ
from .simulate import FitCandidate, SimConfig, replication_rng, run_simulation_study, simulate_dataset
from .sroc import density_grid, quantile_curve, summary_point

log = logging.getLogger("copmeta")

COMMANDS = ("fit", "cl-fit", "scan", "simulate", "study", "sroc", "lrt")
OUTPUT_ENV = "COPMETA_OUTPUT_DIR"
DEFAULT_OUTPUT = "copmeta-output"
EXAMPLE_DATA = "example.csv"
EXAMPLE_CONFIG = "example_config.json"

# rotations written "a/b": Clayton rotated by a for cop13 and by b for cop_cc and cop12
FAMILY_GRID = (
    ("BVN", ("bvn", "bvn", "bvn")),
    ("Frank", ("frank", "frank", "frank")),
    ("Cln 180/270", ("clayton270", "clayton270", "clayton180")),
    ("Cln 180/90", ("clayton90", "clayton90", "clayton180")),
    ("Cln 0/270", ("clayton270", "clayton270", "clayton0")),
    ("Cln 0/90", ("clayton90", "clayton90", "clayton0")),
    ("CL", ("independence", "independence", "independence")),
)


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    data_path: Optional[Path] = None
    margin: str = "normal-logit"
    cop_cc: str = "bvn"
    cop12: str = "bvn"
    cop13: str = "bvn"
    permutation: str = "1"
    n_q: int = DEFAULT_NQ
    seed: int = 0
    output_dir: Path = Path(DEFAULT_OUTPUT)
    replications: int = 100
    jobs: int = 1
    truth: str = "normal"
    n_case_control: int = 25
    n_cohort: int = 25
    quantiles: tuple = (0.01, 0.5, 0.99)
    resolution: int = 200
    grid_size: int = 101
    coverage: tuple = (0.5, 0.9, 0.99)
    margins: tuple = ("normal-logit", "beta")
    copula_grid: str = "default"
    report_path: Optional[Path] = None
    df: int = 3
    fit_margin: Optional[str] = None
    model_spec: ModelSpec = field(init=False, default=None)

    def validate(self) -> None:
        """Check every enumerated field; raises CliError with a readable message."""
        if self.command not in COMMANDS:
            raise CliError(f"unknown command {self.command!r}")
        try:
            self.model_spec = ModelSpec(
                margin=MarginSpec.parse(self.margin),
                cop_cc=self.cop_cc, cop12=self.cop12, cop13=self.cop13,
                permutation=self.permutation, n_q=self.n_q,
            )
            for m in self.margins:
                MarginSpec.parse(m)
            if self.fit_margin is not None:
                MarginSpec.parse(self.fit_margin)
        except ValueError as exc:
            raise CliError(str(exc)) from None
        if not 1 <= self.n_q <= 200:
            raise CliError("--nq must be between 1 and 200")
        if self.replications < 1:
            raise CliError("--replications must be at least 1")
        if self.jobs < 1:
            raise CliError("--jobs must be at least 1")
        if self.truth not in ("normal", "beta"):
            raise CliError("--truth must be normal or beta")
        if self.n_case_control < 0 or self.n_cohort < 0 or self.n_case_control + self.n_cohort < 1:
            raise CliError("need at least one simulated study")
        if not all(0.0 < q < 1.0 for q in self.quantiles):
            raise CliError("quantiles must lie in (0, 1)")
        if not all(0.0 < c < 1.0 for c in self.coverage):
            raise CliError("coverage levels must lie in (0, 1)")
        if self.resolution < 50:
            raise CliError("--resolution must be at least 50")
        if self.grid_size < 2:
            raise CliError("--grid-size must be at least 2")
        if self.df < 1:
            raise CliError("--df must be at least 1")
        if self.copula_grid != "default":
            _parse_triples(self.copula_grid)
        for p in (self.data_path, self.report_path):
            if p is not None and not Path(p).is_file():
                raise CliError(f"no such file: {p}")


def _parse_triples(text: str) -> list[tuple[str, tuple]]:
    """``"bvn,bvn,bvn;frank,frank,frank"`` into labelled family triples."""
    out = []
    for chunk in text.split(";"):
        parts = [p.strip() for p in chunk.split(",")]
        if len(parts) != 3:
            raise CliError(f"copula triple {chunk!r} needs three families (cc, 12, 13)")
        try:
            fams = tuple(CopulaFamily.parse(p).value for p in parts)
        except ValueError as exc:
            raise CliError(str(exc)) from None
        out.append((",".join(fams), fams))
    return out


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------


def example_data_path() -> Path:
    return Path(str(resources.files("copmeta").joinpath("data", EXAMPLE_DATA)))


def _load_data(cfg: RunConfig) -> Dataset:
    path = cfg.data_path or example_data_path()
    return io.parse_dataset(path)


def _spec_for(cfg: RunConfig, data: Dataset) -> ModelSpec:
    s = cfg.model_spec
    return ModelSpec(
        margin=s.margin,
        cop_cc=s.cop_cc if data.n_case_control else None,
        cop12=s.cop12 if data.n_cohort else None,
        cop13=s.cop13 if data.n_cohort else None,
        permutation=s.permutation, n_q=s.n_q,
    )


def _write_json(obj, path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _say(msg: str) -> None:
    print(msg)


def _cmd_fit(cfg: RunConfig, out: Path) -> None:
    data = _load_data(cfg)
    fit = fit_ml(data, _spec_for(cfg, data))
    path = out / "fit.json"
    io.write_fit_report(fit, path)
    _say(f"{fit.spec.name}: loglik {fit.loglik:.4f}, converged {fit.converged} -> {path}")


def _cmd_cl_fit(cfg: RunConfig, out: Path) -> None:
    data = _load_data(cfg)
    fit = fit_cl(data, cfg.model_spec.margin, n_q=cfg.n_q)
    path = out / "cl_fit.json"
    io.write_fit_report(fit, path)
    _say(f"CL {fit.spec.margin.name}: loglik {fit.loglik:.4f}, converged {fit.converged} -> {path}")


def _cmd_scan(cfg: RunConfig, out: Path) -> None:
    data = _load_data(cfg)
    grid = FAMILY_GRID if cfg.copula_grid == "default" else _parse_triples(cfg.copula_grid)
    labels = [g[0] for g in grid]
    triples = [g[1] for g in grid]
    margins = [MarginSpec.parse(m) for m in cfg.margins]
    rows = model_scan(data, margins, triples, n_q=cfg.n_q, permutation=cfg.model_spec.permutation,
                      labels=labels)
    path = out / "scan.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "model", "margin", "cop_cc", "cop12", "cop13", "loglik", "converged",
                    *PARAM_NAMES, "error"])
        for k, r in enumerate(rows, start=1):
            s = r.spec
            fams = ["" if c is None else c.value for c in (s.cop_cc, s.cop12, s.cop13)]
            if r.fit is None:
                w.writerow([k, r.name, s.margin.name, *fams, "", "", *[""] * len(PARAM_NAMES), r.error])
                continue
            est = r.fit.estimates.as_dict()
            w.writerow([k, r.name, s.margin.name, *fams, repr(r.fit.loglik), r.fit.converged,
                        *["" if est[n] is None else repr(est[n]) for n in PARAM_NAMES], ""])
    for k, r in enumerate(rows, start=1):
        ll = "failed" if r.fit is None else f"{r.fit.loglik:.2f}"
        _say(f"{k:2d}  {r.name:<28s} {ll}")
    _say(f"-> {path}")


def _sim_config(cfg: RunConfig) -> SimConfig:
    kw = dict(n_case_control=cfg.n_case_control, n_cohort=cfg.n_cohort, seed=cfg.seed)
    return SimConfig.beta_margins(**kw) if cfg.truth == "beta" else SimConfig(**kw)


def _cmd_simulate(cfg: RunConfig, out: Path) -> None:
    sim = _sim_config(cfg)
    data = simulate_dataset(sim, replication_rng(sim.seed, 0))
    io.write_dataset(data, out / "dataset.csv")
    _write_json({**sim.to_dict(), "n_resampled": data.n_resampled}, out / "dataset_config.json")
    _say(f"{len(data)} studies -> {out / 'dataset.csv'}")


def _cmd_study(cfg: RunConfig, out: Path) -> None:
    sim = _sim_config(cfg)
    true_spec = sim.true_spec(cfg.n_q)
    cands = [FitCandidate("ml", true_spec)]
    if cfg.fit_margin is not None:
        m = MarginSpec.parse(cfg.fit_margin)
        if m != true_spec.margin:
            cands.append(FitCandidate(f"ml-{m.name}", ModelSpec(
                margin=m, cop_cc=true_spec.cop_cc, cop12=true_spec.cop12, cop13=true_spec.cop13,
                n_q=cfg.n_q)))
    cands.append(FitCandidate("cl", true_spec, composite=True))
    tables = run_simulation_study(sim, cands, cfg.replications, n_jobs=cfg.jobs)
    path = out / "study_summary.csv"
    io.write_study_summary(tables.values(), path)
    _write_json({
        "config": sim.to_dict(),
        "replications": cfg.replications,
        "fits": {t.name: {"n_failures": t.n_failures, "failure_rate": t.failure_rate,
                          "flagged": t.flagged, "n_resampled": t.n_resampled}
                 for t in tables.values()},
    }, out / "study_meta.json")
    for t in tables.values():
        _say(f"{t.name}: {t.n_replications - t.n_failures}/{t.n_replications} converged")
    _say(f"-> {path}")


def _cmd_sroc(cfg: RunConfig, out: Path) -> None:
    if cfg.report_path is not None:
        fit = io.read_fit_report(cfg.report_path)
    else:
        data = _load_data(cfg)
        fit = fit_ml(data, _spec_for(cfg, data))
    if not fit.converged:
        raise CliError("fit did not converge; no SROC output written")
    blocks = [b for b, present in (("cc", fit.spec.has_cc), ("cohort", fit.spec.has_cohort)) if present]
    if "cohort" in blocks and fit.spec.permutation == PERMUTATIONS[2]:
        log.warning("cohort SROC skipped: permutation %s has no sensitivity-specificity edge", PERMUTATIONS[2])
        blocks.remove("cohort")
    curves = [quantile_curve(fit, b, q, d, cfg.grid_size)
              for b in blocks for d in ("x1_of_x2", "x2_of_x1") for q in cfg.quantiles]
    io.write_curves(curves, out / "sroc_curves.csv")
    hdr = {}
    for b in blocks:
        g = density_grid(fit, b, cfg.resolution, cfg.coverage)
        io.write_grid(g, out / f"density_{b}.csv")
        hdr[b] = {"mass": g.mass, "thresholds": {str(k): v for k, v in g.hdr_thresholds.items()}}
    io.write_fit_report(fit, out / "sroc_fit.json", extras={
        "summary_point": io.summary_point_dict(summary_point(fit)),
        "hdr": hdr,
    })
    _say(f"SROC for blocks {', '.join(blocks)} -> {out}")


def _cmd_lrt(cfg: RunConfig, out: Path) -> None:
    data = _load_data(cfg)
    full = fit_ml(data, _spec_for(cfg, data))
    reduced = fit_cl(data, cfg.model_spec.margin, n_q=cfg.n_q)
    res = lrt_vs_independence(full, reduced, df=cfg.df)
    _write_json({
        "full_model": full.spec.name, "full_loglik": full.loglik, "full_converged": full.converged,
        "reduced_model": reduced.spec.name, "reduced_loglik": reduced.loglik,
        "reduced_converged": reduced.converged,
        "statistic": res.stat, "df": res.df, "p_value": res.p_value,
    }, out / "lrt.json")
    _say(f"LR statistic {res.stat:.3f} on {res.df} df, p = {res.p_value:.4g} -> {out / 'lrt.json'}")


_DISPATCH = {
    "fit": _cmd_fit, "cl-fit": _cmd_cl_fit, "scan": _cmd_scan, "simulate": _cmd_simulate,
    "study": _cmd_study, "sroc": _cmd_sroc, "lrt": _cmd_lrt,
}


def run(cfg: RunConfig) -> int:
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _DISPATCH[cfg.command](cfg, out)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, help="study CSV (default: bundled example)")
    p.add_argument("--margin", default="normal-logit",
                   help="normal-logit, normal-probit, normal-cloglog or beta")
    p.add_argument("--cop-cc", default="bvn", help="case-control copula family")
    p.add_argument("--cop12", default="bvn", help="first cohort vine edge copula")
    p.add_argument("--cop13", default="bvn", help="second cohort vine edge copula")
    p.add_argument("--permutation", default="1", help="vine permutation: 1, 2, 3 or e.g. 12,13,23|1")


def _common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nq", type=int, default=DEFAULT_NQ, help="Gauss-Legendre points per dimension")
    p.add_argument("--out", type=Path, help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    p.add_argument("-v", "--verbose", action="store_true")


def _sim_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth", default="normal", choices=("normal", "beta"),
                   help="normal-margin or beta-margin simulation truth")
    p.add_argument("--n-cc", type=int, default=25, help="case-control studies per dataset")
    p.add_argument("--n-cohort", type=int, default=25, help="cohort studies per dataset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copmeta",
                                     description="Hybrid copula mixed models for diagnostic test accuracy.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="maximum-likelihood fit")
    _model_args(p)
    _common_args(p)

    p = sub.add_parser("cl-fit", help="composite-likelihood fit (independent random effects)")
    _model_args(p)
    _common_args(p)

    p = sub.add_parser("scan", help="fit a grid of margins and copula families, ranked by log-likelihood")
    _model_args(p)
    _common_args(p)
    p.add_argument("--margins", default="normal-logit,beta", help="comma-separated margins")
    p.add_argument("--copulas", default="default",
                   help="'default' or semicolon-separated cc,12,13 family triples")

    p = sub.add_parser("simulate", help="generate one synthetic dataset")
    _sim_args(p)
    _common_args(p)

    p = sub.add_parser("study", help="bias/SD/RMSE simulation study")
    _sim_args(p)
    _common_args(p)
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--fit-margin", help="also fit this (possibly misspecified) margin")

    p = sub.add_parser("sroc", help="SROC curves, summary point and density grids")
    _model_args(p)
    _common_args(p)
    p.add_argument("--report", type=Path, help="use a saved fit report instead of fitting")
    p.add_argument("--quantiles", type=_floats, default=(0.01, 0.5, 0.99))
    p.add_argument("--resolution", type=int, default=200, help="density grid cells per axis")
    p.add_argument("--grid-size", type=int, default=101, help="points per quantile curve")
    p.add_argument("--coverage", type=_floats, default=(0.5, 0.9, 0.99), help="HDR coverage levels")

    p = sub.add_parser("lrt", help="likelihood-ratio test against independent random effects")
    _model_args(p)
    _common_args(p)
    p.add_argument("--df", type=int, default=3)
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    out = ns.out or Path(os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    cfg = RunConfig(command=ns.command, output_dir=out, n_q=ns.nq)
    for attr, key in (("data_path", "data"), ("margin", "margin"), ("cop_cc", "cop_cc"),
                      ("cop12", "cop12"), ("cop13", "cop13"), ("permutation", "permutation"),
                      ("seed", "seed"), ("truth", "truth"), ("n_case_control", "n_cc"),
                      ("n_cohort", "n_cohort"), ("replications", "replications"), ("jobs", "jobs"),
                      ("fit_margin", "fit_margin"), ("report_path", "report"),
                      ("quantiles", "quantiles"), ("resolution", "resolution"),
                      ("grid_size", "grid_size"), ("coverage", "coverage"), ("df", "df"),
                      ("copula_grid", "copulas")):
        if hasattr(ns, key):
            setattr(cfg, attr, getattr(ns, key))
    if hasattr(ns, "margins"):
        cfg.margins = tuple(m.strip() for m in ns.margins.split(",") if m.strip())
    return cfg


def main(argv: Sequence[str] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(config_from_args(ns))
    except (CliError, ValueError, OSError) as exc:
        print(f"copmeta {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # still report something readable
        print(f"copmeta {ns.command}: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
