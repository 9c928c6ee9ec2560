"""Command-line interface: ``cindex-meta <verb> ...``.

Verbs
-----
estimate   subject-level CSV(s) -> study-summary CSV
fit        study-summary CSV -> fit report, coefficient table, fitted curve
simulate   scenario config -> replication and summary CSVs
powergrid  study-summary CSV -> ranking of the 36 FP2 power pairs
plot       study-summary CSV (+ curve CSVs) -> SVG
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import meta, plot, sim, survival
from .errors import CIndexMetaError, InputFormatError
from .io import atomic_write_text, read_study_csv, read_subject_csv, rows_to_csv, studies_to_csv
from .meta import Family, MetaModelSpec, Status, Subset
from .survival import Estimator, UnoVariant
from .transforms import TransformTag

CURVE_POINTS = 200


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"error: {message}\n")


class _Fail(Exception):
    pass


def _powers(text: str) -> tuple:
    try:
        p = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid power pair {text!r}") from None
    if len(p) != 2 or any(x not in meta.FP_POWERS for x in p):
        raise argparse.ArgumentTypeError(
            f"powers must be two values from {','.join(f'{x:g}' for x in meta.FP_POWERS)}"
        )
    return p


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number list {text!r}") from None


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid count {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("count must be >= 1")
    return v


def _model_flags(p):
    p.add_argument("--family", choices=[f.value for f in Family], default="ma")
    p.add_argument("--transform", choices=[t.value for t in TransformTag], default="logit")
    p.add_argument("--subset", choices=[s.value for s in Subset], default="all")
    p.add_argument("--fp-powers", type=_powers, default=(-0.5, 0.5), metavar="P1,P2")
    p.add_argument("--rcs-knots", type=_float_list, default=None, metavar="K1,K2,...")
    p.add_argument("--hk-floor", action="store_true", help="floor the Hartung-Knapp factor at 1")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cindex-meta", description=__doc__.split("\n\n")[0], allow_abbrev=False)
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="estimate C(τ) per subject-level CSV", allow_abbrev=False)
    p.add_argument("inputs", nargs="+", type=Path, help="CSV files with header time,event,score")
    p.add_argument("--tau", type=float, default=None, help="truncation time (default: max observed time)")
    p.add_argument("--estimator", choices=[e.value for e in Estimator], default="uno")
    p.add_argument("--uno-variant", choices=[v.value for v in UnoVariant], default="squared")
    p.add_argument("--bootstrap", type=int, default=1000, metavar="REPS")
    p.add_argument("--seed", type=_seed, default=None)
    p.add_argument("--study-id", action="append", default=None,
                   help="study label per input (default: file stem)")
    p.add_argument("--out", type=Path, default=None, help="directory for estimates.csv (default: stdout)")

    p = sub.add_parser("fit", help="fit a meta-analysis / meta-regression model", allow_abbrev=False)
    p.add_argument("studies", type=Path)
    _model_flags(p)
    p.add_argument("--out", type=Path, default=None, help="directory for fit_report.csv and fit_curve.csv")

    p = sub.add_parser("simulate", help="run a simulation scenario", allow_abbrev=False)
    p.add_argument("config", type=Path, nargs="?", default=None, help="key = value scenario file")
    p.add_argument("--seed", type=_seed, default=None)
    p.add_argument("--replications", type=_positive_int, default=None)
    p.add_argument("--bootstrap", type=_positive_int, default=None, metavar="REPS")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("powergrid", help="rank all FP2 power pairs", allow_abbrev=False)
    p.add_argument("studies", type=Path)
    p.add_argument("--transform", choices=[t.value for t in TransformTag], default="logit")
    p.add_argument("--subset", choices=[s.value for s in Subset], default="all")
    p.add_argument("--loss-studies", type=Path, default=None,
                   help="study CSV for the RMSE (default: the fitted studies)")
    p.add_argument("--out", type=Path, default=None, help="directory for powergrid.csv")

    p = sub.add_parser("plot", help="SVG of study bubbles and fitted curves", allow_abbrev=False)
    p.add_argument("studies", type=Path)
    p.add_argument("--curve", action="append", default=[], type=Path,
                   help="curve CSV with columns tau,point[,...] (repeatable)")
    p.add_argument("--oracle", action="store_true", help="add the simulation model's true curve")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", type=Path, required=True, help="directory for plot.svg")
    return parser


# ---------------------------------------------------------------- verbs

def _emit(text: str, out: Path | None, name: str):
    if out is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(out / name, text)


def cmd_estimate(args) -> int:
    if args.bootstrap < 2:
        raise _Fail("--bootstrap must be >= 2 (a variance is required)")
    ids = args.study_id or [p.stem for p in args.inputs]
    if len(ids) != len(args.inputs):
        raise _Fail("--study-id must be given once per input")
    rng = np.random.default_rng(args.seed)
    rows = []
    for sid, path in zip(ids, args.inputs):
        sample = read_subject_csv(path)
        tau = float(sample.observed_time.max()) if args.tau is None else args.tau
        est = survival.estimate_cindex(sample, tau, args.estimator, args.uno_variant, args.bootstrap, rng)
        # zero variance is legal here; fit rejects it on read
        rows.append(SimpleNamespace(study_id=sid, tau=est.tau, c_hat=est.c_hat, var_hat=est.var_hat, n=est.n))
    _emit(studies_to_csv(rows), args.out, "estimates.csv")
    return 0


def _coef_names(fit_: meta.MetaFit) -> list:
    spec = fit_.spec
    if spec.family is Family.MA:
        return ["intercept"]
    if spec.family is Family.LINEAR:
        return ["intercept", "tau"]
    if spec.family is Family.RCS:
        return ["intercept", "tau"] + [f"rcs{j}" for j in range(1, len(fit_.knots) - 1)]
    if spec.family is Family.FP2:
        p1, p2 = (f"{p:g}" for p in spec.fp_powers)
        term = lambda p: "log(tau)" if p == "0" else f"tau^{p}"
        second = f"{term(p1)}*log(tau)" if p1 == p2 else term(p2)
        return ["intercept", term(p1), second]
    return ["theta", "beta", "R0"]


REPORT_COLUMNS = ("model", "status", "k_used", "sigma_a", "sigma_a2", "q_stat", "q_df",
                  "q_pvalue", "coefficient", "estimate", "hk_se", "message")


def fit_report(fit_: meta.MetaFit) -> tuple:
    """(CSV text, human-readable table)."""
    label = fit_.spec.label
    head = [label, fit_.status.value, fit_.k_used]
    if fit_.status is Status.FAILED:
        rows = [head + [math.nan] * 5 + ["", math.nan, math.nan, fit_.message]]
        table = f"{label}: FAILED ({fit_.message})\n"
        return rows_to_csv(REPORT_COLUMNS, rows), table
    stats_ = [fit_.sigma_a, fit_.sigma_a2, fit_.q_stat, fit_.q_df, fit_.q_pvalue]
    se = fit_.se_gamma
    rows = [head + stats_ + [n, float(g), float(s), fit_.message]
            for n, g, s in zip(_coef_names(fit_), fit_.gamma, se)]
    lines = [
        f"model      {label}",
        f"status     {fit_.status.value}{' (' + fit_.message + ')' if fit_.message else ''}",
        f"studies    {fit_.k_used}",
        f"sigma_a    {fit_.sigma_a:.4f}",
        f"Q          {fit_.q_stat:.3f}   df {fit_.q_df}   p {fit_.q_pvalue:.4g}",
        "",
        f"{'coefficient':<22}{'estimate':>12}{'HK s.e.':>12}",
    ]
    for n, g, s in zip(_coef_names(fit_), fit_.gamma, se):
        lines.append(f"{n:<22}{g:>12.5f}{s:>12.5f}")
    return rows_to_csv(REPORT_COLUMNS, rows), "\n".join(lines) + "\n"


def _spec(args) -> MetaModelSpec:
    return MetaModelSpec(
        family=args.family, transform=args.transform, subset=args.subset,
        rcs_knots=args.rcs_knots, fp_powers=args.fp_powers, hk_floor=args.hk_floor,
    )


def cmd_fit(args) -> int:
    studies = read_study_csv(args.studies)
    spec = _spec(args)
    if spec.family is Family.EXPDECAY:
        f = meta.fit_exp_decay(spec, studies)
    else:
        f = meta.fit_reml(spec, studies)
    report, table = fit_report(f)
    sys.stdout.write(table)
    if args.out is not None:
        atomic_write_text(args.out / "fit_report.csv", report)
        if f.status is not Status.FAILED:
            used = meta.subset_by_tau(studies, spec.subset)
            taus = [s.tau for s in used]
            grid = np.linspace(min(taus), max(taus), CURVE_POINTS)
            point, lo, hi = meta.predict(f, grid)
            curve = rows_to_csv(("tau", "point", "ci_low", "ci_high"),
                                zip(grid.tolist(), point.tolist(), lo.tolist(), hi.tolist()))
            atomic_write_text(args.out / "fit_curve.csv", curve)
    return 0


def cmd_simulate(args) -> int:
    if args.seed is None:
        raise _Fail("simulate requires --seed")
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise _Fail(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    overrides["seed"] = str(args.seed)
    if args.replications is not None:
        overrides["replications"] = str(args.replications)
    if args.bootstrap is not None:
        overrides["bootstrap_reps"] = str(args.bootstrap)
    if args.config is not None:
        cfg = sim.ScenarioConfig.from_file(args.config, **overrides)
    else:
        cfg = sim.ScenarioConfig.from_mapping(overrides)
    results = sim.run_scenario(cfg, workers=args.workers)
    rep = sim.replications_csv(results)
    summ = sim.summary_csv(cfg, results)
    atomic_write_text(args.out / f"{cfg.name}_replications.csv", rep)
    atomic_write_text(args.out / f"{cfg.name}_summary.csv", summ)
    rows = list(csv.DictReader(summ.splitlines()))
    sys.stdout.write(f"{'model':<22}{'fail %':>8}{'bias':>10}{'coverage':>10}{'area x1000':>12}\n")
    for r in rows:
        sys.stdout.write(
            f"{r['model']:<22}{float(r['failure_rate_pct']):>8.1f}{float(r['bias']):>10.4f}"
            f"{float(r['coverage']):>10.3f}{float(r['area_x1000_mean']):>12.2f}\n"
        )
    return 0


def cmd_powergrid(args) -> int:
    studies = read_study_csv(args.studies)
    loss = read_study_csv(args.loss_studies) if args.loss_studies else None
    rows = meta.fp2_power_grid(studies, args.transform, loss, args.subset)
    text = rows_to_csv(
        ("rank", "p1", "p2", "rmse", "status", "message"),
        ((i, r.powers[0], r.powers[1], r.rmse, r.status.value, r.message) for i, r in enumerate(rows, 1)),
    )
    _emit(text, args.out, "powergrid.csv")
    return 0


def _read_curve(path: Path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"tau", "point"} <= set(reader.fieldnames):
                raise InputFormatError(f"{path}: curve CSV needs columns tau,point")
            data = [(float(r["tau"]), float(r["point"])) for r in reader]
    except OSError as exc:
        raise InputFormatError(f"{path}: {exc.strerror}") from exc
    except ValueError:
        raise InputFormatError(f"{path}: non-numeric curve value") from None
    if not data:
        raise InputFormatError(f"{path}: no data rows")
    t, c = zip(*data)
    return path.stem, list(t), list(c)


def cmd_plot(args) -> int:
    studies = read_study_csv(args.studies)
    curves = [_read_curve(p) for p in args.curve]
    oracle = None
    if args.oracle:
        cfg = sim.ScenarioConfig(seed=args.seed, models=("ma(id)",))
        lo = min(s.tau for s in studies)
        hi = max(s.tau for s in studies)
        grid = np.linspace(lo, hi, CURVE_POINTS)
        oracle = (grid.tolist(), sim.true_curve(cfg)(grid).tolist())
    svg = plot.render_svg(studies, curves, oracle)
    atomic_write_text(args.out / "plot.svg", svg)
    return 0


COMMANDS = {
    "estimate": cmd_estimate,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "powergrid": cmd_powergrid,
    "plot": cmd_plot,
}


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except _Fail as exc:
        sys.stderr.write(f"error: {_one_line(exc)}\n")
    except CIndexMetaError as exc:
        sys.stderr.write(f"error: {exc.name}: {_one_line(exc)}\n")
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {_one_line(exc)}\n")
    return 1


if __name__ == "__main__":
    sys.exit(main())
