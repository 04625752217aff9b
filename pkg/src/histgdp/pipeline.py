"""Estimation pipeline: per-period training chained through the lag
hierarchy, gated prediction, regional rescaling, and bootstrap intervals.

Periods run strictly in chronological order because each period's
``init_gdp`` feature draws on the previous period's source data and model
estimates.  Within a period the steps are: build features for every
snapshot year, train the elastic net on the labeled rows, predict the
unlabeled location-years that pass the gating thresholds, rescale regional
estimates to their country values, and attach percentile-bootstrap
confidence intervals.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data_ingest import Dataset, LocationTable
from .elasticnet import CvResult, EnModel, en_cv, en_fit, fit_centered
from .errors import ValidationError
from .features import (
    FeatureMatrix,
    attach_initial_gdp,
    build_static_features,
    stack_features,
)
from .numerics import ols_fit, quantile, standardize
from .rng import child_rng, child_seed

MIN_BOOTSTRAP_SAMPLES = 50


@dataclass(frozen=True)
class Period:
    period_id: str
    start: int
    end: int
    snapshots: tuple
    prev_end: int | None


PERIODS = (
    Period("late_middle_ages", 1300, 1500, (1300, 1350, 1400, 1450, 1500), None),
    Period("early_modern", 1501, 1750, (1550, 1600, 1650, 1700, 1750), 1500),
    Period("age_of_revolutions", 1751, 1850, (1800, 1850), 1750),
    Period("machine_age", 1851, 1950, (1900, 1950), 1850),
    Period("information_age", 2000, 2000, (2000,), 1950),
)

SNAPSHOT_YEARS = tuple(y for p in PERIODS for y in p.snapshots)


def period_of_year(year: int) -> Period:
    for p in PERIODS:
        if year in p.snapshots:
            return p
    raise ValidationError(f"year {year} is not a snapshot year")


@dataclass(frozen=True)
class GatingPolicy:
    """Minimum unweighted birth/death counts required to emit an estimate."""

    thresholds: tuple = ((1600, 3), (1950, 5), (2000, 10))
    rule: str = "both"  # both | either | sum

    def threshold(self, year: int) -> int:
        for cap, t in self.thresholds:
            if year <= cap:
                return t
        return self.thresholds[-1][1]

    def passes(self, births: int, deaths: int, year: int) -> bool:
        t = self.threshold(year)
        if self.rule == "both":
            return births >= t and deaths >= t
        if self.rule == "either":
            return births >= t or deaths >= t
        if self.rule == "sum":
            return births + deaths >= t
        raise ValidationError(f"unknown gating rule '{self.rule}'")

    @classmethod
    def from_config(cls, config: RunConfig) -> "GatingPolicy":
        return cls(thresholds=config.gating_thresholds, rule=config.gating_rule)


@dataclass(frozen=True)
class EstimateRecord:
    location_id: str
    year: int
    gdp_pc: float
    ci_low: float
    ci_high: float
    kind: str  # source | estimate
    gated: bool = False
    rescaled: bool = False
    init_gdp_provenance: str = ""


@dataclass(frozen=True)
class TrainedPeriodModel:
    period_id: str
    model: EnModel
    feature_names: tuple  # columns surviving standardization
    dropped_columns: tuple
    training_keys: tuple
    cv: CvResult


@dataclass(frozen=True)
class BaselineModel:
    """OLS with supranational-region x snapshot-year fixed effects plus the
    previous-period income level (absent for the earliest period)."""

    period_id: str
    cells: tuple
    cell_coefficients: np.ndarray
    intercept: float
    lag_coefficient: float | None
    rank_deficient: bool
    single_obs_cells: tuple

    def predict_one(self, supra: str, year: int, init_log: float | None) -> float:
        value = self.intercept
        cell = f"{supra}|{year}"
        if cell in self.cells:
            value += float(self.cell_coefficients[self.cells.index(cell)])
        if self.lag_coefficient is not None:
            if init_log is None:
                raise ValidationError("baseline prediction needs an initial income value")
            value += self.lag_coefficient * init_log
        return value


def fit_baseline(labeled_keys, y_log, init_log, locations: LocationTable, period: Period) -> BaselineModel:
    """Fit the persistence-plus-fixed-effects baseline for one period.

    ``init_log`` is the per-row log10 previous-period income (None for the
    earliest period, which has no lag regressor).
    """
    keys = list(labeled_keys)
    if not keys:
        raise ValidationError(f"fit_baseline: no observations in period '{period.period_id}'")
    y = np.asarray(y_log, dtype=float)
    cells = sorted({f"{locations.supra_of(lid)}|{year}" for lid, year in keys})
    design = np.zeros((len(keys), len(cells) + (0 if init_log is None else 1)))
    counts: dict[str, int] = {}
    for i, (lid, year) in enumerate(keys):
        cell = f"{locations.supra_of(lid)}|{year}"
        design[i, cells.index(cell)] = 1.0
        counts[cell] = counts.get(cell, 0) + 1
    if init_log is not None:
        init = np.asarray(init_log, dtype=float)
        if init.size != len(keys):
            raise ValidationError("fit_baseline: init_log length must match rows")
        design[:, -1] = init
    fit = ols_fit(design, y)
    return BaselineModel(
        period_id=period.period_id,
        cells=tuple(cells),
        cell_coefficients=fit.coefficients[: len(cells)],
        intercept=fit.intercept,
        lag_coefficient=None if init_log is None else float(fit.coefficients[-1]),
        rank_deficient=fit.rank_deficient,
        single_obs_cells=tuple(c for c in cells if counts[c] == 1),
    )


def train_period(
    period: Period,
    period_features: FeatureMatrix,
    labels: dict,
    config: RunConfig,
    completed_periods=(),
    seed: int | None = None,
) -> TrainedPeriodModel:
    """Cross-validate and fit the elastic net on a period's labeled rows.

    Periods must be processed chronologically (the lag feature depends on
    everything earlier), so every earlier period has to appear in
    ``completed_periods``.
    """
    for earlier in PERIODS:
        if earlier.period_id == period.period_id:
            break
        if earlier.period_id not in completed_periods:
            raise ValidationError(
                f"train_period: '{period.period_id}' requires earlier period "
                f"'{earlier.period_id}' to be processed first"
            )
    labeled_keys = [k for k in period_features.row_keys if k in labels]
    bad_years = {year for _, year in labeled_keys} - set(period.snapshots)
    if bad_years:
        raise ValidationError(
            f"train_period: labels at {sorted(bad_years)} fall outside '{period.period_id}'"
        )
    if len(labeled_keys) < 2 * config.k_folds:
        raise ValidationError(
            f"train_period: period '{period.period_id}' has {len(labeled_keys)} labeled "
            f"rows, fewer than 2*k={2 * config.k_folds}; reduce k_folds"
        )
    x_raw = period_features.subset(labeled_keys)
    y = np.array([math.log10(labels[k]) for k in labeled_keys])
    std = standardize(x_raw.to_matrix())
    if seed is None:
        seed = child_seed(config.seed, "cv", PERIODS.index(period))
    cv = en_cv(
        std.matrix,
        y,
        alpha_grid=config.alpha_grid,
        k=config.k_folds,
        seed=seed,
        n_lambda=config.n_lambda,
        lambda_ratio=config.lambda_ratio,
        selection_rule=config.cv_selection_rule,
        threads=config.threads,
    )
    model = en_fit(
        std.matrix,
        y,
        cv.chosen_alpha,
        cv.chosen_lambda,
        means=std.means,
        sds=std.sds,
        feature_names=std.matrix.col_labels,
    )
    return TrainedPeriodModel(
        period_id=period.period_id,
        model=model,
        feature_names=std.matrix.col_labels,
        dropped_columns=std.dropped,
        training_keys=tuple(labeled_keys),
        cv=cv,
    )


def _model_matrix(tpm: TrainedPeriodModel, fm: FeatureMatrix, keys) -> np.ndarray:
    sub = fm.subset(keys)
    index = {name: j for j, name in enumerate(sub.columns)}
    cols = [index[name] for name in tpm.model.feature_names]
    return sub.values[:, cols]


def predict_log10(tpm: TrainedPeriodModel, fm: FeatureMatrix, keys) -> np.ndarray:
    """Model predictions (log10 scale) for the given row keys."""
    raw = _model_matrix(tpm, fm, keys)
    std = (raw - tpm.model.means) / tpm.model.sds
    return tpm.model.intercept + std @ tpm.model.coefficients


def predict_gated(
    tpm: TrainedPeriodModel,
    fm: FeatureMatrix,
    keys,
    gate_counts,
    policy: GatingPolicy,
):
    """Predict only the keys that pass the gating rule.

    ``gate_counts`` maps a (location, year) key to its unweighted
    (births, deaths).  Returns (predictions by key in log10, gated keys).
    """
    passed, gated = [], []
    for key in keys:
        births, deaths = gate_counts(key)
        (passed if policy.passes(births, deaths, key[1]) else gated).append(key)
    predictions = {}
    if passed:
        values = predict_log10(tpm, fm, passed)
        predictions = dict(zip(passed, values.tolist()))
    return predictions, gated


def rescale_regions(regional_levels: dict, country_value: float, proxies: dict):
    """Scale regional estimates so their weighted mean hits the country value.

    Weights are the unweighted birth+death counts.  Returns the rescaled
    mapping and the common factor.
    """
    if not regional_levels:
        return {}, 1.0
    total = float(sum(proxies[r] for r in regional_levels))
    if total <= 0:
        raise ValidationError("rescale_regions: total population proxy is zero")
    weighted_mean = sum(proxies[r] * v for r, v in regional_levels.items()) / total
    c = country_value / weighted_mean
    return {r: c * v for r, v in regional_levels.items()}, c


def bootstrap_ci(
    x_train,
    y_train,
    alpha: float,
    lam: float,
    x_targets,
    *,
    n_samples: int = 200,
    level: float = 0.90,
    seed: int = 0,
    unit: str = "row",
    clusters=None,
    level_factors=None,
):
    """Percentile-bootstrap confidence intervals for target predictions.

    Resamples training rows with replacement (or whole country clusters),
    refits at the already-chosen hyperparameters, and takes quantiles of
    the level-scale predictions.  ``level_factors`` multiplies each
    target's replicate predictions (the regional rescaling factor).
    Returns (ci_low, ci_high, skipped_replicates).
    """
    if n_samples < MIN_BOOTSTRAP_SAMPLES:
        raise ValidationError(f"bootstrap_ci: need at least {MIN_BOOTSTRAP_SAMPLES} samples")
    if not 0.0 < level < 1.0:
        raise ValidationError(f"bootstrap_ci: level must lie in (0, 1), got {level}")
    x = np.asarray(x_train, dtype=float)
    y = np.asarray(y_train, dtype=float)
    targets = np.asarray(x_targets, dtype=float)
    n = x.shape[0]
    factors = np.ones(targets.shape[0]) if level_factors is None else np.asarray(level_factors)
    if unit == "country":
        if clusters is None:
            raise ValidationError("bootstrap_ci: country unit needs cluster labels")
        labels = np.asarray(clusters)
        unique = sorted(set(labels.tolist()))
        members = {c: np.flatnonzero(labels == c) for c in unique}
    full_degenerate = bool(np.all(y == y[0]))
    warm, _, _ = fit_centered(x, y, alpha, lam)

    predictions = np.empty((n_samples, targets.shape[0]))
    skipped = 0
    for b in range(n_samples):
        for attempt in range(100):
            rng = child_rng(seed, "bootstrap", b, attempt)
            if unit == "row":
                idx = rng.integers(0, n, size=n)
            else:
                chosen = rng.integers(0, len(unique), size=len(unique))
                idx = np.concatenate([members[unique[c]] for c in chosen])
            degenerate = bool(np.all(y[idx] == y[idx][0])) and not full_degenerate
            if not degenerate:
                break
            skipped += 1
        beta, col_means, y_mean = fit_centered(
            x[idx], y[idx], alpha, lam, warm_start=warm
        )
        predictions[b] = y_mean + (targets - col_means) @ beta
    levels = np.power(10.0, predictions) * factors
    lo_p = (1.0 - level) / 2.0
    ci_low = np.array([quantile(levels[:, t], lo_p) for t in range(targets.shape[0])])
    ci_high = np.array([quantile(levels[:, t], 1.0 - lo_p) for t in range(targets.shape[0])])
    return ci_low, ci_high, skipped


@dataclass
class RunResult:
    estimates: list
    report: dict


def _build_period_features(
    period, dataset, config, model_levels, statics_cache=None, source_levels=None
):
    """Stacked features for a period's snapshot years, with the lag column
    attached from the previous period's end year (omitted for the earliest
    period).  ``source_levels`` restricts the visible labels (the
    evaluation harness hides its test countries here)."""
    if source_levels is None:
        source_levels = dataset.source_levels
    parts = []
    statics = {}
    for year in period.snapshots:
        if statics_cache is not None and year in statics_cache:
            static = statics_cache[year]
        else:
            static = build_static_features(
                year,
                dataset,
                window_years=config.window_years,
                scale=config.scale,
                reference_year=config.reference_year_for_age,
            )
            if statics_cache is not None:
                statics_cache[year] = static
        statics[year] = static
        if period.prev_end is None:
            parts.append(static.matrix)
        else:
            parts.append(
                attach_initial_gdp(
                    static, period.prev_end, source_levels, model_levels,
                    dataset.locations,
                )
            )
    fm = stack_features(parts)
    return replace(fm, period=period.period_id), statics


def run_full(
    dataset: Dataset,
    config: RunConfig,
    *,
    with_bootstrap: bool = True,
    feature_sink: dict | None = None,
    model_sink: dict | None = None,
    statics_cache: dict | None = None,
) -> RunResult:
    """Run the whole estimation and return estimates plus the run report.

    Source observations pass through with ``kind = source``; gated
    location-years are listed in the report instead of the output.
    ``feature_sink``/``model_sink`` collect the per-year feature matrices
    and per-period trained models for the export and attribution commands;
    ``with_bootstrap=False`` skips interval construction (estimates then
    carry zero-width intervals flagged in the report).  ``statics_cache``
    lets repeated runs on one dataset share the label-independent feature
    blocks; the cache must have been built with the same feature settings.
    """
    locations = dataset.locations
    policy = GatingPolicy.from_config(config)
    source = dataset.source_levels

    estimates: list[EstimateRecord] = []
    for obs in sorted(dataset.gdp, key=lambda o: (o.location_id, o.year)):
        estimates.append(
            EstimateRecord(
                location_id=obs.location_id,
                year=obs.year,
                gdp_pc=obs.gdp_pc,
                ci_low=obs.gdp_pc,
                ci_high=obs.gdp_pc,
                kind="source",
            )
        )

    model_levels: dict = {}
    report_periods: dict = {}
    gated_keys: list = []
    completed: list = []
    proxy_weights: dict = {}
    provenance_counts: dict = {}
    n_rescaled = 0
    n_unrescaled_regions = 0
    n_skipped_replicates = 0
    n_age_imputed = 0

    labeled_years = {year for (_, year) in source}
    for period in PERIODS:
        if not labeled_years & set(period.snapshots):
            report_periods[period.period_id] = {"skipped": "no labeled rows"}
            completed.append(period.period_id)
            continue

        fm, statics = _build_period_features(
            period, dataset, config, model_levels, statics_cache=statics_cache
        )
        n_age_imputed += sum(len(v) for v in fm.flags.values())
        if feature_sink is not None:
            for year in period.snapshots:
                year_keys = [k for k in fm.row_keys if k[1] == year]
                feature_sink[year] = fm.subset(year_keys)
        labels = {
            k: source[k] for k in fm.row_keys if k in source
        }
        tpm = train_period(period, fm, labels, config, completed_periods=tuple(completed))
        if model_sink is not None:
            model_sink[period.period_id] = (tpm, fm)

        def gate_counts(key):
            lid, year = key
            return statics[year].gate_counts(lid)

        candidate_keys = [k for k in fm.row_keys if k not in source]
        predictions, gated = predict_gated(tpm, fm, candidate_keys, gate_counts, policy)
        gated_keys.extend(gated)

        # regional rescaling against the country value (source wins)
        levels = {k: 10.0 ** v for k, v in predictions.items()}
        factors = {k: 1.0 for k in levels}
        rescaled_flags = {k: False for k in levels}
        country_years = sorted(
            {
                (locations.country_of(lid), year)
                for (lid, year) in levels
                if locations.get(lid).level == "region"
            }
        )
        for country, year in country_years:
            regional = {
                (lid, yr): v
                for (lid, yr), v in levels.items()
                if yr == year
                and locations.get(lid).level == "region"
                and locations.country_of(lid) == country
            }
            if not regional:
                continue
            country_value = source.get((country, year))
            if country_value is None:
                country_value = levels.get((country, year))
            if country_value is None:
                n_unrescaled_regions += len(regional)
                continue
            weights = {}
            for (lid, yr) in regional:
                births, deaths = statics[yr].gate_counts(lid)
                weights[(lid, yr)] = births + deaths
            rescaled, c = rescale_regions(regional, country_value, weights)
            for key, value in rescaled.items():
                levels[key] = value
                factors[key] = c
                rescaled_flags[key] = True
                proxy_weights[key] = weights[key]
            n_rescaled += len(rescaled)

        # bootstrap intervals on the final (rescaled) level scale
        ordered = sorted(levels)
        ci_by_key = {k: (levels[k], levels[k]) for k in ordered}
        skipped = 0
        if ordered and with_bootstrap:
            x_std = (
                _model_matrix(tpm, fm, tpm.training_keys) - tpm.model.means
            ) / tpm.model.sds
            y_train = np.array([math.log10(labels[k]) for k in tpm.training_keys])
            target_std = (
                _model_matrix(tpm, fm, ordered) - tpm.model.means
            ) / tpm.model.sds
            clusters = None
            if config.bootstrap_unit == "country":
                clusters = [locations.country_of(lid) for (lid, _) in tpm.training_keys]
            ci_low, ci_high, skipped = bootstrap_ci(
                x_std,
                y_train,
                tpm.model.alpha,
                tpm.model.lam,
                target_std,
                n_samples=config.bootstrap_samples,
                level=config.ci_level,
                seed=child_seed(config.seed, "bootstrap", PERIODS.index(period)),
                unit=config.bootstrap_unit,
                clusters=clusters,
                level_factors=[factors[k] for k in ordered],
            )
            ci_by_key = {k: (ci_low[i], ci_high[i]) for i, k in enumerate(ordered)}
        n_skipped_replicates += skipped

        for key in ordered:
            lid, year = key
            prov = fm.init_provenance.get(key, "")
            provenance_counts[prov] = provenance_counts.get(prov, 0) + 1
            estimates.append(
                EstimateRecord(
                    location_id=lid,
                    year=year,
                    gdp_pc=levels[key],
                    ci_low=float(ci_by_key[key][0]),
                    ci_high=float(ci_by_key[key][1]),
                    kind="estimate",
                    rescaled=rescaled_flags[key],
                    init_gdp_provenance=prov,
                )
            )
            model_levels[key] = levels[key]

        report_periods[period.period_id] = {
            "alpha": tpm.model.alpha,
            "lambda": tpm.model.lam,
            "n_selected": len(tpm.model.selected_features),
            "n_candidates": len(tpm.feature_names),
            "n_training_rows": len(tpm.training_keys),
            "n_estimates": len(ordered),
            "n_gated": len(gated),
            "sweeps": tpm.model.n_sweeps,
            "max_delta": tpm.model.max_delta,
            "dropped_constant_columns": len(tpm.dropped_columns),
            "skipped_bootstrap_replicates": skipped,
        }
        completed.append(period.period_id)

    estimates.sort(key=lambda e: (e.location_id, e.year))
    audit = audit_rescaling(estimates, locations, proxy_weights)
    report = {
        "config": config.echo(),
        "bootstrap_enabled": with_bootstrap,
        "counts": {
            "source": sum(1 for e in estimates if e.kind == "source"),
            "estimates": sum(1 for e in estimates if e.kind == "estimate"),
            "gated": len(gated_keys),
            "rescaled": n_rescaled,
            "unrescaled_regions": n_unrescaled_regions,
            "skipped_bootstrap_replicates": n_skipped_replicates,
            "avg_age_imputed_rows": n_age_imputed,
            "rejected_rows": len(dataset.rejects),
        },
        "periods": report_periods,
        "gated": sorted([list(k) for k in gated_keys]),
        "init_gdp_provenance_counts": dict(sorted(provenance_counts.items())),
        "rescale_audit": audit,
    }
    return RunResult(estimates=estimates, report=report)


def audit_rescaling(estimates, locations: LocationTable, proxy_weights: dict) -> dict:
    """Check the weighted-mean constraint on every rescaled country-year.

    For each (country, year) with rescaled regional estimates and a country
    value, the proxy-weighted mean of the regional estimates must equal the
    country value to 1e-9 relative.
    """
    by_key = {(e.location_id, e.year): e for e in estimates}
    groups: dict = {}
    for e in estimates:
        if e.kind != "estimate" or not e.rescaled:
            continue
        country = locations.country_of(e.location_id)
        groups.setdefault((country, e.year), []).append(e)
    checked = 0
    max_rel = 0.0
    violations = []
    for (country, year), members in sorted(groups.items()):
        country_rec = by_key.get((country, year))
        if country_rec is None:
            continue
        total = sum(proxy_weights[(m.location_id, m.year)] for m in members)
        wmean = (
            sum(proxy_weights[(m.location_id, m.year)] * m.gdp_pc for m in members) / total
        )
        rel = abs(wmean - country_rec.gdp_pc) / country_rec.gdp_pc
        checked += 1
        max_rel = max(max_rel, rel)
        if rel > 1e-9:
            violations.append({"country": country, "year": year, "rel_error": rel})
    return {"checked": checked, "max_rel_error": max_rel, "violations": violations}


def format_float(value: float) -> str:
    return f"{value:.6g}"


def write_estimates_csv(estimates, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "location_id",
                "year",
                "gdp_pc_2011usd",
                "ci_low",
                "ci_high",
                "kind",
                "gated",
                "rescaled",
                "init_gdp_provenance",
            ]
        )
        for e in estimates:
            writer.writerow(
                [
                    e.location_id,
                    e.year,
                    format_float(e.gdp_pc),
                    format_float(e.ci_low),
                    format_float(e.ci_high),
                    e.kind,
                    "true" if e.gated else "false",
                    "true" if e.rescaled else "false",
                    e.init_gdp_provenance,
                ]
            )


def read_estimates_csv(path) -> list:
    """Read an estimates.csv back into EstimateRecord rows."""
    from .errors import InputError

    path = Path(path)
    if not path.exists():
        raise InputError(f"estimates file not found: {path}")
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "location_id":
            raise InputError(f"{path}: not an estimates.csv file")
        for row in reader:
            records.append(
                EstimateRecord(
                    location_id=row[0],
                    year=int(row[1]),
                    gdp_pc=float(row[2]),
                    ci_low=float(row[3]),
                    ci_high=float(row[4]),
                    kind=row[5],
                    gated=row[6] == "true",
                    rescaled=row[7] == "true",
                    init_gdp_provenance=row[8],
                )
            )
    return records


def write_run_report(report: dict, path):
    Path(path).write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
