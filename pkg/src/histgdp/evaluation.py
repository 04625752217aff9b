"""Model-performance protocol: repeated country-held-out splits.

Each split withholds a random 20% of countries together with all their
regions, tunes the elastic net by cross-validation on the remaining
countries only, fits the baseline and the full model, and scores both on
the withheld rows.  Hyperparameter tuning never sees a test row, and the
lag-fill hierarchy is restricted to training-visible labels, so a test
country's income enters only as ground truth.  Baseline and full models
chain their previous-period estimates through separate stores, mirroring
how each would be used on its own.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data_ingest import Dataset, LocationTable
from .errors import ValidationError
from .features import build_static_features, initial_gdp
from .numerics import kruskal_wallis, mae_relative, pearson, quantile, r2_log
from .pipeline import (
    PERIODS,
    GatingPolicy,
    _build_period_features,
    fit_baseline,
    predict_gated,
    train_period,
)
from .rng import child_seed, parallel_map

MIN_COUNTRIES = 5
MIN_TEST_ROWS = 5


@dataclass(frozen=True)
class SplitSpec:
    """One held-out test set: countries plus all their regions."""

    seed: int
    test_countries: tuple
    test_locations: tuple


def split_countries(countries, fraction: float = 0.2, seed: int = 0,
                    locations: LocationTable | None = None) -> SplitSpec:
    """Draw ``ceil(fraction * n)`` test countries uniformly without
    replacement; their regions are attached automatically."""
    countries = sorted(countries)
    if len(countries) < MIN_COUNTRIES:
        raise ValidationError(
            f"split_countries: need at least {MIN_COUNTRIES} countries, "
            f"got {len(countries)}"
        )
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"split_countries: fraction {fraction} outside (0, 1)")
    n_test = math.ceil(fraction * len(countries))
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(countries), size=n_test, replace=False).tolist())
    test_countries = tuple(countries[i] for i in chosen)
    test_locations = list(test_countries)
    if locations is not None:
        for c in test_countries:
            test_locations.extend(locations.regions_of(c))
    return SplitSpec(
        seed=seed, test_countries=test_countries, test_locations=tuple(sorted(test_locations))
    )


@dataclass(frozen=True)
class SplitMetrics:
    split_index: int
    seed: int
    r2_baseline: float | None = None
    r2_full: float | None = None
    mae_baseline: float | None = None
    mae_full: float | None = None
    n_test_rows: int = 0
    n_gated_test: int = 0
    per_period_mae_full: dict = field(default_factory=dict)
    failed: str | None = None


@dataclass(frozen=True)
class PerformanceDistribution:
    splits: tuple
    medians: dict
    iqr: dict
    kw: dict  # metric -> {"h": ..., "p": ...}
    n_failed: int


def summarize_performance(splits) -> PerformanceDistribution:
    """Aggregate per-split metrics: medians, interquartile ranges, and
    Kruskal-Wallis tests of baseline-vs-full on each metric."""
    splits = tuple(splits)
    ok = [s for s in splits if s.failed is None]
    medians: dict = {}
    iqr: dict = {}
    kw: dict = {}
    if ok:
        series = {
            "r2_baseline": [s.r2_baseline for s in ok],
            "r2_full": [s.r2_full for s in ok],
            "mae_baseline": [s.mae_baseline for s in ok],
            "mae_full": [s.mae_full for s in ok],
        }
        for name, values in series.items():
            medians[name] = quantile(values, 0.5)
            iqr[name] = quantile(values, 0.75) - quantile(values, 0.25)
        for metric in ("r2", "mae"):
            h, p = kruskal_wallis(
                [series[f"{metric}_baseline"], series[f"{metric}_full"]]
            )
            kw[metric] = {"h": h, "p": p}
    return PerformanceDistribution(
        splits=splits,
        medians=medians,
        iqr=iqr,
        kw=kw,
        n_failed=len(splits) - len(ok),
    )


def run_single_split(
    dataset: Dataset,
    config: RunConfig,
    statics: dict,
    split_index: int,
    master_seed: int,
    policy: GatingPolicy | None = None,
) -> SplitMetrics:
    """One split of the protocol: hold out countries, tune, fit, score."""
    locations = dataset.locations
    if policy is None:
        policy = GatingPolicy.from_config(config)
    split_seed = child_seed(master_seed, "split", split_index)
    spec = split_countries(
        locations.countries(), config.test_fraction, split_seed, locations
    )
    test_locs = set(spec.test_locations)
    source = dataset.source_levels
    train_source = {k: v for k, v in source.items() if k[0] not in test_locs}
    test_keys = {k for k in source if k[0] in test_locs}

    en_store: dict = {}
    base_store: dict = {}
    en_log, base_log, obs_log = [], [], []
    per_period_pairs: dict = {}
    n_gated_test = 0
    completed: list = []
    train_years = {year for (_, year) in train_source}

    for index, period in enumerate(PERIODS):
        if not train_years & set(period.snapshots):
            completed.append(period.period_id)
            continue
        fm, _ = _build_period_features(
            period, dataset, config, en_store,
            statics_cache=statics, source_levels=train_source,
        )
        labels_train = {k: train_source[k] for k in fm.row_keys if k in train_source}
        # no-leakage guarantee: the tuning matrix rows are disjoint from test keys
        assert not set(labels_train) & test_keys
        tpm = train_period(
            period, fm, labels_train, config,
            completed_periods=tuple(completed),
            seed=child_seed(split_seed, "cv", index),
        )

        base_keys = sorted(labels_train)
        y_train = [math.log10(labels_train[k]) for k in base_keys]
        if period.prev_end is None:
            base_init = None
        else:
            base_init = [
                initial_gdp(lid, period.prev_end, train_source, base_store, locations)[0]
                for (lid, _) in base_keys
            ]
        baseline = fit_baseline(base_keys, y_train, base_init, locations, period)

        def gate_counts(key):
            return statics[key[1]].gate_counts(key[0])

        candidates = [k for k in fm.row_keys if k not in train_source]
        en_preds, gated = predict_gated(tpm, fm, candidates, gate_counts, policy)
        base_preds = {}
        for lid, year in sorted(en_preds):
            init_val = (
                None
                if period.prev_end is None
                else initial_gdp(lid, period.prev_end, train_source, base_store, locations)[0]
            )
            base_preds[(lid, year)] = baseline.predict_one(
                locations.supra_of(lid), year, init_val
            )
        en_store.update({k: 10.0 ** v for k, v in en_preds.items()})
        base_store.update({k: 10.0 ** v for k, v in base_preds.items()})

        gated_set = set(gated)
        for key in sorted(k for k in test_keys if k[1] in period.snapshots):
            if key in gated_set:
                n_gated_test += 1
                continue
            if key not in en_preds:
                continue
            en_log.append(en_preds[key])
            base_log.append(base_preds[key])
            obs_log.append(math.log10(source[key]))
            per_period_pairs.setdefault(period.period_id, []).append(
                (en_preds[key], math.log10(source[key]))
            )
        completed.append(period.period_id)

    if len(obs_log) < MIN_TEST_ROWS:
        return SplitMetrics(
            split_index=split_index,
            seed=split_seed,
            n_test_rows=len(obs_log),
            n_gated_test=n_gated_test,
            failed=f"only {len(obs_log)} usable test rows (< {MIN_TEST_ROWS})",
        )
    obs_level = np.power(10.0, obs_log)
    per_period_mae = {
        pid: mae_relative(
            np.power(10.0, [p for p, _ in pairs]), np.power(10.0, [o for _, o in pairs])
        )
        for pid, pairs in per_period_pairs.items()
        if pairs
    }
    return SplitMetrics(
        split_index=split_index,
        seed=split_seed,
        r2_baseline=r2_log(np.array(base_log), np.array(obs_log)),
        r2_full=r2_log(np.array(en_log), np.array(obs_log)),
        mae_baseline=mae_relative(np.power(10.0, base_log), obs_level),
        mae_full=mae_relative(np.power(10.0, en_log), obs_level),
        n_test_rows=len(obs_log),
        n_gated_test=n_gated_test,
        per_period_mae_full=per_period_mae,
    )


def evaluate_models(
    dataset: Dataset,
    config: RunConfig,
    n_splits: int | None = None,
    master_seed: int | None = None,
    statics: dict | None = None,
) -> PerformanceDistribution:
    """Repeat the country-held-out protocol over independently seeded splits.

    Failed splits are recorded with their reason, never silently dropped.
    A prebuilt ``statics`` cache (built with the same feature settings)
    lets repeated evaluations on one dataset skip feature construction.
    """
    if n_splits is None:
        n_splits = config.n_splits
    if master_seed is None:
        master_seed = config.seed
    policy = GatingPolicy.from_config(config)
    labeled_years = {year for (_, year) in dataset.source_levels}
    if statics is None:
        statics = {}
    for period in PERIODS:
        if labeled_years & set(period.snapshots):
            for year in period.snapshots:
                if year in statics:
                    continue
                statics[year] = build_static_features(
                    year,
                    dataset,
                    window_years=config.window_years,
                    scale=config.scale,
                    reference_year=config.reference_year_for_age,
                )

    def one(split_index):
        try:
            return run_single_split(
                dataset, config, statics, split_index, master_seed, policy
            )
        except Exception as err:  # a failed split must not crash the harness
            return SplitMetrics(
                split_index=split_index,
                seed=child_seed(master_seed, "split", split_index),
                failed=f"{type(err).__name__}: {err}",
            )

    splits = parallel_map(one, range(n_splits), threads=config.threads)
    return summarize_performance(splits)


@dataclass(frozen=True)
class ProxyCorrelation:
    r: float
    n: int
    r_source: float | None
    n_source: int
    r_estimate: float | None
    n_estimate: int


def proxy_correlation(estimates, proxy_rows, transform: str = "none") -> ProxyCorrelation:
    """Pearson correlation between estimates and an external proxy series.

    Joins on (location, year); the transform applies to the GDP estimate.
    Correlations are also reported separately for source-backed and
    model-estimated rows (None when a subset has fewer than 3 matches).
    """
    if transform not in ("none", "log10"):
        raise ValidationError(f"unknown transform '{transform}'")
    by_key = {(e.location_id, e.year): e for e in estimates}
    pairs = []
    for lid, year, value in proxy_rows:
        rec = by_key.get((lid, int(year)))
        if rec is None:
            continue
        x = math.log10(rec.gdp_pc) if transform == "log10" else rec.gdp_pc
        pairs.append((x, float(value), rec.kind))
    if len(pairs) < 3:
        raise ValidationError(
            f"proxy_correlation: only {len(pairs)} matched (location, year) pairs"
        )

    def corr(subset):
        if len(subset) < 3:
            return None
        return pearson([p[0] for p in subset], [p[1] for p in subset])

    source_pairs = [p for p in pairs if p[2] == "source"]
    estimate_pairs = [p for p in pairs if p[2] == "estimate"]
    return ProxyCorrelation(
        r=corr(pairs),
        n=len(pairs),
        r_source=corr(source_pairs),
        n_source=len(source_pairs),
        r_estimate=corr(estimate_pairs),
        n_estimate=len(estimate_pairs),
    )


def load_proxy_csv(path):
    """Read a proxy series CSV with header ``location_id,year,value``."""
    path = Path(path)
    if not path.exists():
        from .errors import InputError

        raise InputError(f"proxy file not found: {path}")
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["location_id", "year", "value"]:
            from .errors import InputError

            raise InputError(f"{path}: expected header location_id,year,value")
        for line, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ValidationError(f"{path}:{line}: wrong field count")
            rows.append((row[0].strip(), int(row[1]), float(row[2])))
    return rows


def write_evaluation_csv(dist: PerformanceDistribution, path):
    def fmt(v):
        return "" if v is None else f"{v:.6g}"

    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "split_index",
                "seed",
                "r2_baseline",
                "r2_full",
                "mae_baseline",
                "mae_full",
                "n_test_rows",
                "n_gated_test",
                "failed",
            ]
        )
        for s in dist.splits:
            writer.writerow(
                [
                    s.split_index,
                    s.seed,
                    fmt(s.r2_baseline),
                    fmt(s.r2_full),
                    fmt(s.mae_baseline),
                    fmt(s.mae_full),
                    s.n_test_rows,
                    s.n_gated_test,
                    s.failed or "",
                ]
            )


def write_evaluation_summary(dist: PerformanceDistribution, path):
    ok = [s for s in dist.splits if s.failed is None]
    per_period: dict = {}
    for s in ok:
        for pid, value in s.per_period_mae_full.items():
            per_period.setdefault(pid, []).append(value)
    doc = {
        "n_splits": len(dist.splits),
        "n_failed": dist.n_failed,
        "medians": dist.medians,
        "iqr": dist.iqr,
        "kruskal_wallis": dist.kw,
        "median_mae_full_by_period": {
            pid: quantile(values, 0.5) for pid, values in sorted(per_period.items())
        },
        "total_gated_test_rows": sum(s.n_gated_test for s in dist.splits),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
