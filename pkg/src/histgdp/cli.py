"""Command line interface.

Subcommands: ``validate`` (ingest and report), ``features`` (export the
per-year feature matrices), ``estimate`` (full estimation run),
``evaluate`` (country-held-out performance protocol), ``explain``
(Shapley attributions), and ``correlate`` (external proxy correlation).

Exit codes: 0 success, 1 validation error, 2 numerical error, 3 I/O
error.  Diagnostics go to stderr; data goes to files and stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import config_from_sources
from .data_ingest import load_dataset, write_rejects_report
from .errors import HistGdpError, InputError
from .evaluation import (
    evaluate_models,
    load_proxy_csv,
    proxy_correlation,
    write_evaluation_csv,
    write_evaluation_summary,
)
from .explain import run_explain, write_importance_csv, write_shapley_csv
from .features import write_feature_csv
from .pipeline import (
    read_estimates_csv,
    run_full,
    write_estimates_csv,
    write_run_report,
)


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1 (argparse's default is 2, which we reserve for
    # numerical failures)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_alpha_grid(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _parse_thresholds(text):
    pairs = []
    for part in text.split(","):
        year, t = part.split(":")
        pairs.append((int(year), int(t)))
    return tuple(pairs)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="histgdp", description=__doc__)
    parser.add_argument("--version", action="version", version=f"histgdp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file (flat keys mirror the flags)")
        p.add_argument("--biographies", help="biographies.csv path")
        p.add_argument("--locations", help="locations.csv path")
        p.add_argument("--gdp", help="gdp.csv path")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--window-years", dest="window_years", type=int)
        p.add_argument("--scale", choices=("log10p1", "asinh"))
        p.add_argument("--alpha-grid", dest="alpha_grid", type=_parse_alpha_grid,
                       metavar="A1,A2,...")
        p.add_argument("--n-lambda", dest="n_lambda", type=int)
        p.add_argument("--lambda-ratio", dest="lambda_ratio", type=float)
        p.add_argument("--k-folds", dest="k_folds", type=int)
        p.add_argument("--n-splits", dest="n_splits", type=int)
        p.add_argument("--test-fraction", dest="test_fraction", type=float)
        p.add_argument("--bootstrap-samples", dest="bootstrap_samples", type=int)
        p.add_argument("--ci-level", dest="ci_level", type=float)
        p.add_argument("--gating-rule", dest="gating_rule",
                       choices=("both", "either", "sum"))
        p.add_argument("--gating-thresholds", dest="gating_thresholds",
                       type=_parse_thresholds, metavar="YEAR:T,YEAR:T,...")
        p.add_argument("--reference-year-for-age", dest="reference_year_for_age", type=int)
        p.add_argument("--cv-selection-rule", dest="cv_selection_rule",
                       choices=("min_mean", "fold_average"))
        p.add_argument("--bootstrap-unit", dest="bootstrap_unit",
                       choices=("row", "country"))
        p.add_argument("--min-birth-year", dest="min_birth_year", type=int)
        p.add_argument("--max-reject-fraction", dest="max_reject_fraction", type=float)
        return p

    add_common(sub.add_parser("validate", help="ingest inputs and report data quality"))
    add_common(sub.add_parser("features", help="export feature_matrix_<year>.csv files"))
    add_common(sub.add_parser("estimate", help="produce estimates.csv and run_report.json"))
    add_common(sub.add_parser("evaluate", help="run the held-out-country protocol"))
    add_common(sub.add_parser("explain", help="export Shapley attributions per period"))
    correlate = add_common(sub.add_parser("correlate", help="correlate estimates with a proxy"))
    correlate.add_argument("--proxies", help="proxy CSV (location_id,year,value)")
    correlate.add_argument("--estimates", help="estimates.csv from a prior run")
    correlate.add_argument("--transform", choices=("none", "log10"), default=None)
    return parser


_CONFIG_KEYS = (
    "biographies", "locations", "gdp", "output_dir", "seed", "threads",
    "window_years", "scale", "alpha_grid", "n_lambda", "lambda_ratio",
    "k_folds", "n_splits", "test_fraction", "bootstrap_samples", "ci_level",
    "gating_rule", "gating_thresholds", "reference_year_for_age",
    "cv_selection_rule", "bootstrap_unit", "min_birth_year",
    "max_reject_fraction", "proxies",
)


def _resolve_config(args):
    overrides = {
        key: getattr(args, key) for key in _CONFIG_KEYS if getattr(args, key, None) is not None
    }
    return config_from_sources(args.config, overrides)


def _require_inputs(config):
    # a path never supplied is a usage problem (exit 1); a supplied path
    # that does not exist surfaces later as an I/O error (exit 3)
    missing = [name for name in ("biographies", "locations", "gdp")
               if getattr(config, name) is None]
    if missing:
        from .errors import ValidationError

        print("usage: histgdp <command> --biographies B --locations L --gdp G [options]",
              file=sys.stderr)
        raise ValidationError(
            f"missing required input path(s): {', '.join(missing)} "
            f"(pass --{missing[0]} or set it in the config file)"
        )


def _load(config):
    _require_inputs(config)
    return load_dataset(
        config.biographies,
        config.locations,
        config.gdp,
        min_birth_year=config.min_birth_year,
        max_reject_fraction=config.max_reject_fraction,
    )


def _outdir(config) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_validate(config) -> int:
    out = _outdir(config)
    _require_inputs(config)
    try:
        dataset = _load(config)
    except HistGdpError as err:
        rejects = getattr(err, "rejects", None)
        if rejects:
            write_rejects_report(rejects, out / "rejects.csv")
        raise
    write_rejects_report(dataset.rejects, out / "rejects.csv")
    summary = {
        "eligible_biographies": len(dataset.records),
        "locations": len(dataset.locations),
        "countries": len(dataset.locations.countries()),
        "regions": len(dataset.locations.regions()),
        "gdp_observations": len(dataset.gdp),
        "occupations": len(dataset.occupations),
        "rejected_rows": len(dataset.rejects),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_features(config) -> int:
    out = _outdir(config)
    dataset = _load(config)
    sink: dict = {}
    run_full(dataset, config, with_bootstrap=False, feature_sink=sink)
    for year, fm in sorted(sink.items()):
        write_feature_csv(fm, out / f"feature_matrix_{year}.csv")
    print(f"wrote {len(sink)} feature matrices to {out}", file=sys.stderr)
    return 0


def cmd_estimate(config) -> int:
    out = _outdir(config)
    dataset = _load(config)
    result = run_full(dataset, config)
    write_rejects_report(dataset.rejects, out / "rejects.csv")
    write_estimates_csv(result.estimates, out / "estimates.csv")
    write_run_report(result.report, out / "run_report.json")
    counts = result.report["counts"]
    print(
        f"estimates.csv: {counts['source']} source rows, "
        f"{counts['estimates']} estimates, {counts['gated']} gated",
        file=sys.stderr,
    )
    return 0


def cmd_evaluate(config) -> int:
    out = _outdir(config)
    dataset = _load(config)
    dist = evaluate_models(dataset, config)
    write_evaluation_csv(dist, out / "evaluation.csv")
    write_evaluation_summary(dist, out / "evaluation_summary.json")
    print(
        f"evaluation.csv: {len(dist.splits)} splits, {dist.n_failed} failed",
        file=sys.stderr,
    )
    return 0


def cmd_explain(config) -> int:
    out = _outdir(config)
    dataset = _load(config)
    results = run_explain(dataset, config)
    for period_id, (attributions, ranking) in sorted(results.items()):
        write_shapley_csv(attributions, out / f"shapley_{period_id}.csv")
        write_importance_csv(ranking, out / f"feature_importance_{period_id}.csv")
    print(f"wrote attributions for {len(results)} periods to {out}", file=sys.stderr)
    return 0


def cmd_correlate(config, args) -> int:
    out = _outdir(config)
    proxies = args.proxies or config.proxies
    if proxies is None:
        raise InputError("correlate needs --proxies")
    estimates_path = args.estimates or (out / "estimates.csv")
    estimates = read_estimates_csv(estimates_path)
    rows = load_proxy_csv(proxies)
    transform = args.transform or "log10"
    res = proxy_correlation(estimates, rows, transform=transform)
    doc = {
        "transform": transform,
        "pearson_r": res.r,
        "n": res.n,
        "pearson_r_source": res.r_source,
        "n_source": res.n_source,
        "pearson_r_estimate": res.r_estimate,
        "n_estimate": res.n_estimate,
    }
    (out / "correlation.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = _resolve_config(args)
        if args.command == "validate":
            return cmd_validate(config)
        if args.command == "features":
            return cmd_features(config)
        if args.command == "estimate":
            return cmd_estimate(config)
        if args.command == "evaluate":
            return cmd_evaluate(config)
        if args.command == "explain":
            return cmd_explain(config)
        if args.command == "correlate":
            return cmd_correlate(config, args)
        raise InputError(f"unknown command '{args.command}'")
    except HistGdpError as err:
        print(f"histgdp {args.command}: {err}", file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print(f"histgdp {args.command}: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
