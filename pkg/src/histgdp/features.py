"""Per-location feature construction from flow assignments.

For every (location, snapshot year) this module derives the candidate
feature set: popularity-weighted occupation counts for the four flows,
diversity and average ubiquity, complexity indices, SVD factors of the
log-scaled count matrices, average lifespan, supranational dummies, and
the hierarchically filled previous-period GDP.

Count matrices and everything derived from them (RCA, complexity, SVD,
ubiquity) are computed separately per hierarchy level -- mixing country
rows and region rows in one matrix would double-count every individual.

Feature columns, in order:

    <flow>.total, <flow>.<occupation>   per flow (births, deaths,
                                        immigrants, emigrants)
    diversity.<flow>                    per flow
    ubiquity.<flow>                     per flow
    eci.<flow>                          per flow
    svd.<flow>.<i>                      i = 1..5 per flow
    dummy.<region>                      one per supranational region
    avg_age
    init_gdp                            only when a previous period exists
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data_ingest import FLOWS, FlowAssignment, LocationTable, assign_flows
from .errors import NumericalError, ValidationError
from .numerics import Matrix, spearman, svd

DEFAULT_REFERENCE_YEAR = 2023
N_SVD_FACTORS = 5

INIT_GDP_PROVENANCES = ("source", "model", "country_source", "country_model", "supra_mean")


@dataclass(frozen=True)
class HpiScore:
    """Historical popularity score; ``clamped`` marks floored inputs."""

    value: float
    clamped: bool = False


def hpi(pageviews, language_editions, age) -> HpiScore:
    """Popularity score from page views, language editions, and age.

    ``log10(V) + ln(L) + log4(A)`` with a penalty of ``(70 - A) / 7``
    subtracted for ages under 70.  Inputs below 1 are clamped to 1 and
    flagged.  The score is continuous at age 70 and weakly increasing in
    views and language editions.
    """
    v = max(float(pageviews), 1.0)
    l = max(float(language_editions), 1.0)
    a = max(float(age), 1.0)
    clamped = (v != pageviews) or (l != language_editions) or (a != age)
    value = math.log10(v) + math.log(l) + math.log(a) / math.log(4.0)
    if a < 70.0:
        value -= (70.0 - a) / 7.0
    return HpiScore(value=value, clamped=clamped)


def hpi_weight(record, reference_year: int = DEFAULT_REFERENCE_YEAR) -> float:
    """Count weight for one record: the HPI clamped at zero.

    The young-age penalty can push the score negative; negative "counts"
    would break the log scaling downstream, so weights floor at 0.
    """
    score = hpi(record.pageviews, record.language_editions, reference_year - record.birth_year)
    return max(score.value, 0.0)


@dataclass(frozen=True)
class CountTensor:
    """HPI-weighted and raw occupation counts for one hierarchy level."""

    level: str
    location_ids: tuple
    occupations: tuple
    weighted: dict  # flow -> (L, K) float array
    unweighted: dict  # flow -> (L, K) int array

    def row(self, location_id: str) -> int:
        try:
            return self.location_ids.index(location_id)
        except ValueError:
            raise ValidationError(
                f"location '{location_id}' not in {self.level}-level tensor"
            ) from None

    def unweighted_totals(self, flow: str) -> np.ndarray:
        return self.unweighted[flow].sum(axis=1)


def flow_counts(
    flows: FlowAssignment,
    records_by_id: dict,
    locations: LocationTable,
    level: str,
    occupations,
    reference_year: int = DEFAULT_REFERENCE_YEAR,
    weights: dict | None = None,
) -> CountTensor:
    """Aggregate flow memberships into location x occupation counts."""
    location_ids = tuple(locations.ids(level))
    occupations = tuple(occupations)
    occ_index = {occ: k for k, occ in enumerate(occupations)}
    loc_index = {lid: i for i, lid in enumerate(location_ids)}

    weighted = {}
    unweighted = {}
    for flow in FLOWS:
        w = np.zeros((len(location_ids), len(occupations)))
        u = np.zeros((len(location_ids), len(occupations)), dtype=int)
        for lid, members in flows.flow(flow).items():
            i = loc_index.get(lid)
            if i is None:
                continue  # other hierarchy level
            for pid in sorted(members):
                record = records_by_id.get(pid)
                if record is None:
                    raise ValidationError(f"flow member '{pid}' has no biography record")
                k = occ_index.get(record.occupation)
                if k is None:
                    raise ValidationError(
                        f"occupation '{record.occupation}' missing from vocabulary"
                    )
                if weights is not None:
                    w[i, k] += weights[pid]
                else:
                    w[i, k] += hpi_weight(record, reference_year)
                u[i, k] += 1
        weighted[flow] = w
        unweighted[flow] = u
    return CountTensor(
        level=level,
        location_ids=location_ids,
        occupations=occupations,
        weighted=weighted,
        unweighted=unweighted,
    )


def diversity(counts: CountTensor, flow: str) -> np.ndarray:
    """Occupations with at least one individual, per location."""
    return (counts.unweighted[flow] >= 1).sum(axis=1)


def avg_ubiquity(counts: CountTensor, flow: str) -> np.ndarray:
    """Mean ubiquity of the occupations present in each location.

    Ubiquity of an occupation is the number of locations where it is
    present.  Locations with nothing present get 0.
    """
    present = counts.unweighted[flow] >= 1
    ubiquity = present.sum(axis=0)
    out = np.zeros(len(counts.location_ids))
    for i in range(out.size):
        occ_present = present[i]
        if occ_present.any():
            out[i] = float(ubiquity[occ_present].mean())
    return out


@dataclass(frozen=True)
class RcaResult:
    matrix: Matrix  # binary specialization matrix on the kept rows/cols
    dropped_locations: tuple
    dropped_occupations: tuple


def rca_matrix(counts: CountTensor, flow: str) -> RcaResult:
    """Binary specialization matrix from revealed comparative advantage.

    ``M_ik = 1`` iff ``(N_ik / N_i.) / (N_.k / N_..) >= 1`` on the
    HPI-weighted counts; evaluated by cross-multiplication so exact ties
    and rescaled inputs behave identically.  All-zero rows and columns are
    dropped first and recorded.
    """
    n = counts.weighted[flow]
    if float(n.sum()) <= 0.0:
        raise ValidationError(f"rca_matrix: no weighted counts in flow '{flow}'")
    keep_rows = n.sum(axis=1) > 0
    keep_cols = n.sum(axis=0) > 0
    kept = n[np.ix_(keep_rows, keep_cols)]
    row_tot = kept.sum(axis=1)
    col_tot = kept.sum(axis=0)
    grand = kept.sum()
    binary = (kept * grand >= np.outer(row_tot, col_tot)).astype(float)
    return RcaResult(
        matrix=Matrix(
            binary,
            row_labels=tuple(np.array(counts.location_ids)[keep_rows]),
            col_labels=tuple(np.array(counts.occupations)[keep_cols]),
        ),
        dropped_locations=tuple(np.array(counts.location_ids)[~keep_rows]),
        dropped_occupations=tuple(np.array(counts.occupations)[~keep_cols]),
    )


@dataclass(frozen=True)
class EciResult:
    eci: np.ndarray
    pci: np.ndarray
    iterations: int
    degenerate: bool = False


def _zscore(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    if sd < 1e-12:
        return np.zeros_like(v)
    return (v - v.mean()) / sd


def eci(m, max_iterations: int = 1000) -> EciResult:
    """Complexity indices as the fixed point of the mutual-averaging map.

    A location's complexity is the average complexity of the occupations
    it is specialized in, and vice versa; the location vector is z-scored
    every round.  Converged when the ranking is stable and the largest
    value change falls below 1e-9.  The sign is fixed so complexity
    correlates non-negatively with diversity.
    """
    mv = m.values if isinstance(m, Matrix) else np.asarray(m, dtype=float)
    rows, cols = mv.shape
    if rows < 2 or cols < 2:
        return EciResult(
            eci=np.zeros(rows), pci=np.zeros(cols), iterations=0, degenerate=True
        )
    div = mv.sum(axis=1)
    ubiq = mv.sum(axis=0)
    if np.any(div <= 0) or np.any(ubiq <= 0):
        raise ValidationError("eci: drop all-zero rows/columns before calling")

    # Start from diversity; when diversities tie everywhere fall back to
    # mean ubiquity, then to a generic deterministic vector, so the
    # iteration does not start exactly orthogonal to the answer.
    loc = _zscore(div.astype(float))
    if not loc.any():
        loc = _zscore((mv @ ubiq) / div)
    if not loc.any():
        loc = _zscore(np.arange(rows, dtype=float))
    prev_ranks = np.argsort(np.argsort(loc))
    for iteration in range(1, max_iterations + 1):
        occ = (mv.T @ loc) / ubiq
        nxt = _zscore((mv @ occ) / div)
        if not nxt.any():
            return EciResult(np.zeros(rows), np.zeros(cols), iteration, degenerate=True)
        ranks = np.argsort(np.argsort(nxt))
        delta = float(np.max(np.abs(nxt - loc)))
        loc = nxt
        if np.array_equal(ranks, prev_ranks) and delta < 1e-9:
            break
        prev_ranks = ranks
    else:
        raise NumericalError(f"eci did not converge within {max_iterations} iterations")

    pci = _zscore((mv.T @ loc) / ubiq)
    if len(set(div.tolist())) > 1 and spearman(loc, div) < 0:
        loc = -loc
        pci = -pci
    return EciResult(eci=loc, pci=pci, iterations=iteration)


def svd_factors(counts: CountTensor, flow: str, n_factors: int = N_SVD_FACTORS) -> np.ndarray:
    """Leading left-singular-vector coordinates of ``log10(1 + N)``.

    Returns an (L, n_factors) array; factors beyond the numerical rank are
    zero-filled.
    """
    n = counts.weighted[flow]
    out = np.zeros((n.shape[0], n_factors))
    if not n.any():
        return out
    dec = svd(np.log10(1.0 + n), name=f"svd_factors[{flow}]")
    rank = int(np.sum(dec.s > 1e-12 * dec.s[0])) if dec.s.size and dec.s[0] > 0 else 0
    take = min(n_factors, rank)
    out[:, :take] = dec.u[:, :take]
    return out


def avg_age(flows: FlowAssignment, records_by_id: dict, locations: LocationTable):
    """Mean lifespan of deceased individuals assigned to each location.

    Individuals without a death year are excluded.  Locations with no
    qualifying individual receive the global mean and are flagged.
    Returns (values by location id, flagged location ids).
    """
    lifespans: dict[str, list] = {}
    all_spans: dict[str, int] = {}
    for lid in locations.ids():
        spans = []
        for pid in sorted(flows.members(lid)):
            record = records_by_id.get(pid)
            if record is None:
                raise ValidationError(f"flow member '{pid}' has no biography record")
            if record.lifespan is not None:
                spans.append(record.lifespan)
                all_spans[pid] = record.lifespan
        lifespans[lid] = spans
    global_mean = float(np.mean(list(all_spans.values()))) if all_spans else 0.0
    values = {}
    flagged = []
    for lid, spans in lifespans.items():
        if spans:
            values[lid] = float(np.mean(spans))
        else:
            values[lid] = global_mean
            flagged.append(lid)
    return values, tuple(flagged)


def linearize(x: float, scale: str = "log10p1") -> float:
    """Compress a non-negative count; both scales map 0 to 0."""
    if x < 0:
        raise ValidationError(f"linearize: negative input {x}")
    if scale == "log10p1":
        return math.log10(1.0 + x)
    if scale == "asinh":
        return math.asinh(x)
    raise ValidationError(f"linearize: unknown scale '{scale}'")


def initial_gdp(location_id, lag_year, source_levels, model_levels, locations: LocationTable):
    """Previous-period GDP per capita fill, in log10.

    Hierarchy: own source value at the lag year, then own model estimate,
    then the parent country's source or model value, and finally the mean
    of country-level source values in the location's supranational region.
    Returns (log10 value, provenance).
    """
    model_levels = model_levels or {}
    key = (location_id, lag_year)
    if key in source_levels:
        return math.log10(source_levels[key]), "source"
    if key in model_levels:
        return math.log10(model_levels[key]), "model"
    loc = locations.get(location_id)
    if loc.level == "region":
        ckey = (loc.parent_country, lag_year)
        if ckey in source_levels:
            return math.log10(source_levels[ckey]), "country_source"
        if ckey in model_levels:
            return math.log10(model_levels[ckey]), "country_model"
    supra = locations.supra_of(location_id)
    pool = [
        source_levels[(c, lag_year)]
        for c in locations.countries()
        if locations.supra_of(c) == supra and (c, lag_year) in source_levels
    ]
    if pool:
        return math.log10(float(np.mean(pool))), "supra_mean"
    raise ValidationError(
        f"initial_gdp: no value anywhere in supranational region "
        f"'{supra}' at year {lag_year} (needed for '{location_id}')"
    )


@dataclass(frozen=True)
class FeatureMatrix:
    """Named feature columns for (location, snapshot-year) rows."""

    row_keys: tuple  # ((location_id, year), ...)
    columns: tuple
    values: np.ndarray
    scale: str
    period: str | None = None
    init_provenance: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("feature matrix contains non-finite values")
        if len(set(self.row_keys)) != len(self.row_keys):
            raise ValidationError("duplicate feature matrix row keys")
        if len(set(self.columns)) != len(self.columns):
            raise ValidationError("duplicate feature column names")
        if self.values.shape != (len(self.row_keys), len(self.columns)):
            raise ValidationError("feature matrix shape does not match keys/columns")

    def to_matrix(self) -> Matrix:
        return Matrix(self.values, row_labels=self.row_keys, col_labels=self.columns)

    def subset(self, keys) -> "FeatureMatrix":
        index = {key: i for i, key in enumerate(self.row_keys)}
        rows = []
        for key in keys:
            if key not in index:
                raise ValidationError(f"feature matrix has no row {key}")
            rows.append(index[key])
        return replace(
            self,
            row_keys=tuple(keys),
            values=self.values[rows],
            init_provenance={k: v for k, v in self.init_provenance.items() if k in set(keys)},
        )


def stack_features(parts) -> FeatureMatrix:
    """Stack per-year feature matrices with identical columns."""
    parts = list(parts)
    if not parts:
        raise ValidationError("stack_features: nothing to stack")
    columns = parts[0].columns
    for p in parts[1:]:
        if p.columns != columns:
            raise ValidationError("stack_features: column sets differ")
    provenance = {}
    flags = {}
    for p in parts:
        provenance.update(p.init_provenance)
        flags.update(p.flags)
    return FeatureMatrix(
        row_keys=tuple(k for p in parts for k in p.row_keys),
        columns=columns,
        values=np.vstack([p.values for p in parts]),
        scale=parts[0].scale,
        period=parts[0].period,
        init_provenance=provenance,
        flags=flags,
    )


@dataclass(frozen=True)
class StaticFeatures:
    """Label-independent features for one snapshot year, plus the count
    tensors needed downstream for gating and population proxies."""

    matrix: FeatureMatrix
    tensors: dict  # level -> CountTensor
    flows: FlowAssignment

    def gate_counts(self, location_id: str) -> tuple[int, int]:
        level = "country" if location_id in self.tensors["country"].location_ids else "region"
        tensor = self.tensors[level]
        i = tensor.row(location_id)
        return (
            int(tensor.unweighted_totals("births")[i]),
            int(tensor.unweighted_totals("deaths")[i]),
        )


def build_static_features(
    year: int,
    dataset,
    *,
    window_years: int = 150,
    scale: str = "log10p1",
    reference_year: int = DEFAULT_REFERENCE_YEAR,
    avg_age_mode: str = "lifespan",
) -> StaticFeatures:
    """All feature columns except ``init_gdp`` for one snapshot year."""
    locations = dataset.locations
    occupations = tuple(dataset.occupations)
    flows = assign_flows(dataset.records, locations, year, window_years)
    if not any(flows.flow(f) for f in FLOWS):
        raise ValidationError(f"no individuals in the {window_years}-year window before {year}")

    weights = {r.person_id: hpi_weight(r, reference_year) for r in dataset.records}
    tensors = {
        level: flow_counts(
            flows, dataset.by_person, locations, level, occupations,
            reference_year=reference_year, weights=weights,
        )
        for level in ("country", "region")
    }

    supra_regions = locations.supranational_regions()
    columns = []
    for flow in FLOWS:
        columns.append(f"{flow}.total")
        columns.extend(f"{flow}.{occ}" for occ in occupations)
    columns.extend(f"diversity.{flow}" for flow in FLOWS)
    columns.extend(f"ubiquity.{flow}" for flow in FLOWS)
    columns.extend(f"eci.{flow}" for flow in FLOWS)
    for flow in FLOWS:
        columns.extend(f"svd.{flow}.{i}" for i in range(1, N_SVD_FACTORS + 1))
    columns.extend(f"dummy.{supra}" for supra in supra_regions)
    columns.append("avg_age")

    # per-level derived blocks
    eci_values: dict[tuple, dict] = {}
    for level in ("country", "region"):
        tensor = tensors[level]
        for flow in FLOWS:
            mapping: dict[str, float] = {}
            if tensor.weighted[flow].any():
                rca = rca_matrix(tensor, flow)
                result = eci(rca.matrix)
                for lid, value in zip(rca.matrix.row_labels, result.eci):
                    mapping[lid] = float(value)
            eci_values[(level, flow)] = mapping

    factor_blocks = {
        (level, flow): svd_factors(tensors[level], flow)
        for level in ("country", "region")
        for flow in FLOWS
    }
    diversity_blocks = {
        (level, flow): diversity(tensors[level], flow)
        for level in ("country", "region")
        for flow in FLOWS
    }
    ubiquity_blocks = {
        (level, flow): avg_ubiquity(tensors[level], flow)
        for level in ("country", "region")
        for flow in FLOWS
    }
    if avg_age_mode == "lifespan":
        ages, age_flagged = avg_age(flows, dataset.by_person, locations)
    elif avg_age_mode == "snapshot_age":
        ages, age_flagged = _snapshot_ages(flows, dataset.by_person, locations, year)
    else:
        raise ValidationError(f"unknown avg_age mode '{avg_age_mode}'")

    row_keys = []
    rows = []
    for level in ("country", "region"):
        tensor = tensors[level]
        for lid in tensor.location_ids:
            i = tensor.row(lid)
            row = []
            for flow in FLOWS:
                w = tensor.weighted[flow][i]
                row.append(linearize(float(w.sum()), scale))
                row.extend(linearize(float(v), scale) for v in w)
            for flow in FLOWS:
                row.append(float(diversity_blocks[(level, flow)][i]))
            for flow in FLOWS:
                row.append(float(ubiquity_blocks[(level, flow)][i]))
            for flow in FLOWS:
                row.append(eci_values[(level, flow)].get(lid, 0.0))
            for flow in FLOWS:
                row.extend(float(v) for v in factor_blocks[(level, flow)][i])
            supra = locations.supra_of(lid)
            row.extend(1.0 if supra == s else 0.0 for s in supra_regions)
            row.append(ages[lid])
            row_keys.append((lid, year))
            rows.append(row)

    matrix = FeatureMatrix(
        row_keys=tuple(row_keys),
        columns=tuple(columns),
        values=np.array(rows, dtype=float),
        scale=scale,
        flags={f"avg_age_imputed_{year}": age_flagged},
    )
    return StaticFeatures(matrix=matrix, tensors=tensors, flows=flows)


def _snapshot_ages(flows, records_by_id, locations, year):
    # alternative reading of "average age": age at the snapshot year
    values = {}
    flagged = []
    pool = []
    per_loc = {}
    for lid in locations.ids():
        ages = [year - records_by_id[pid].birth_year for pid in sorted(flows.members(lid))]
        per_loc[lid] = ages
        pool.extend(ages)
    global_mean = float(np.mean(pool)) if pool else 0.0
    for lid, ages in per_loc.items():
        if ages:
            values[lid] = float(np.mean(ages))
        else:
            values[lid] = global_mean
            flagged.append(lid)
    return values, tuple(flagged)


def attach_initial_gdp(
    static: StaticFeatures | FeatureMatrix,
    lag_year: int,
    source_levels: dict,
    model_levels: dict,
    locations: LocationTable,
) -> FeatureMatrix:
    """Append the ``init_gdp`` column (log10) with per-row provenance."""
    fm = static.matrix if isinstance(static, StaticFeatures) else static
    col = np.zeros((len(fm.row_keys), 1))
    provenance = dict(fm.init_provenance)
    for i, (lid, _year) in enumerate(fm.row_keys):
        value, prov = initial_gdp(lid, lag_year, source_levels, model_levels, locations)
        col[i, 0] = value
        provenance[(lid, _year)] = prov
    return FeatureMatrix(
        row_keys=fm.row_keys,
        columns=fm.columns + ("init_gdp",),
        values=np.hstack([fm.values, col]),
        scale=fm.scale,
        period=fm.period,
        init_provenance=provenance,
        flags=fm.flags,
    )


def build_feature_matrix(
    year: int,
    dataset,
    *,
    window_years: int = 150,
    scale: str = "log10p1",
    reference_year: int = DEFAULT_REFERENCE_YEAR,
    lag_year: int | None = None,
    model_levels: dict | None = None,
) -> FeatureMatrix:
    """One-call feature matrix for a snapshot year.

    When ``lag_year`` is None (the earliest period has no predecessor) the
    ``init_gdp`` column is omitted entirely.
    """
    static = build_static_features(
        year,
        dataset,
        window_years=window_years,
        scale=scale,
        reference_year=reference_year,
    )
    if lag_year is None:
        return static.matrix
    return attach_initial_gdp(
        static, lag_year, dataset.source_levels, model_levels or {}, dataset.locations
    )


def write_feature_csv(fm: FeatureMatrix, path):
    """Export a feature matrix as ``feature_matrix_<year>.csv`` content."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["location_id", "year", *fm.columns])
        for (lid, year), row in zip(fm.row_keys, fm.values):
            writer.writerow([lid, year, *[repr(float(v)) for v in row]])
