"""Loading, validation, and indexing of the three input tables.

Input files are UTF-8 CSV with RFC-4180 quoting; an empty string means a
missing value.  Structural problems (missing file, wrong header) are
fatal.  Row-level invariant violations (negative lifespans, non-positive
language counts, duplicate keys) are collected into a rejects report with
line numbers; the load aborts only when the rejected fraction exceeds a
configurable threshold.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError, ValidationError

BIOGRAPHY_HEADER = [
    "person_id",
    "name",
    "birth_year",
    "death_year",
    "birth_location_id",
    "death_location_id",
    "occupation",
    "pageviews",
    "language_editions",
]
LOCATION_HEADER = [
    "location_id",
    "name",
    "level",
    "parent_country_id",
    "supranational_region",
]
GDP_HEADER = ["location_id", "year", "gdp_pc_2011usd", "source"]

SNAPSHOT_YEARS = tuple(range(1300, 2000, 50)) + (2000,)

FLOWS = ("births", "deaths", "immigrants", "emigrants")


@dataclass(frozen=True)
class BiographyRecord:
    person_id: str
    name: str
    birth_year: int
    death_year: int | None
    birth_location: str | None
    death_location: str | None
    occupation: str
    pageviews: int
    language_editions: int

    @property
    def lifespan(self) -> int | None:
        if self.death_year is None:
            return None
        return self.death_year - self.birth_year


@dataclass(frozen=True)
class Location:
    location_id: str
    name: str
    level: str  # "country" | "region"
    parent_country: str | None
    supranational_region: str


class LocationTable:
    """Region/country hierarchy with supranational groupings.

    Construction validates the hierarchy: region parents must exist and be
    countries, every country needs a supranational region, ids are unique.
    """

    def __init__(self, entries):
        self._by_id: dict[str, Location] = {}
        for loc in entries:
            if loc.location_id in self._by_id:
                raise ValidationError(f"duplicate location id '{loc.location_id}'")
            if loc.level not in ("country", "region"):
                raise ValidationError(
                    f"location '{loc.location_id}': unknown level '{loc.level}'"
                )
            self._by_id[loc.location_id] = loc
        for loc in self._by_id.values():
            if loc.level == "region":
                parent = self._by_id.get(loc.parent_country or "")
                if parent is None or parent.level != "country":
                    raise ValidationError(
                        f"region '{loc.location_id}' has no valid parent country"
                    )
            elif not loc.supranational_region:
                raise ValidationError(
                    f"country '{loc.location_id}' lacks a supranational region"
                )

    def __contains__(self, location_id: str) -> bool:
        return location_id in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)

    def get(self, location_id: str) -> Location:
        try:
            return self._by_id[location_id]
        except KeyError:
            raise ValidationError(f"unknown location id '{location_id}'") from None

    def ids(self, level: str | None = None) -> list[str]:
        return sorted(
            lid for lid, loc in self._by_id.items() if level is None or loc.level == level
        )

    def countries(self) -> list[str]:
        return self.ids("country")

    def regions(self) -> list[str]:
        return self.ids("region")

    def regions_of(self, country_id: str) -> list[str]:
        return sorted(
            lid
            for lid, loc in self._by_id.items()
            if loc.level == "region" and loc.parent_country == country_id
        )

    def country_of(self, location_id: str) -> str:
        loc = self.get(location_id)
        return loc.location_id if loc.level == "country" else loc.parent_country

    def supra_of(self, location_id: str) -> str:
        country = self.get(self.country_of(location_id))
        return country.supranational_region

    def supranational_regions(self) -> list[str]:
        return sorted({self.supra_of(c) for c in self.countries()})


@dataclass(frozen=True)
class GdpObservation:
    location_id: str
    year: int
    gdp_pc: float
    source: str


@dataclass(frozen=True)
class RejectedRow:
    line_number: int
    key: str
    reason: str


@dataclass(frozen=True)
class FlowAssignment:
    """Per-location person-id sets for one snapshot year.

    Assignments exist at both hierarchy levels: a record born in a region
    contributes to that region and to its parent country.  Migrant sets
    require both endpoints to be resolvable at the same level, so a record
    located only at country level never enters region-level flows, and a
    move between two regions of one country is not a country-level
    migration.
    """

    snapshot_year: int
    window_years: int
    births: dict
    deaths: dict
    immigrants: dict
    emigrants: dict

    def flow(self, name: str) -> dict:
        if name not in FLOWS:
            raise ValidationError(f"unknown flow '{name}'")
        return getattr(self, name)

    def members(self, location_id: str) -> frozenset:
        out = frozenset()
        for name in FLOWS:
            out |= self.flow(name).get(location_id, frozenset())
        return out


def _open_csv(path, expected_header, what):
    path = Path(path)
    if not path.exists():
        raise InputError(f"{what} file not found: {path}")
    handle = path.open(newline="", encoding="utf-8")
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        handle.close()
        raise InputError(f"{path}: empty file, expected header {expected_header}")
    header = [h.strip() for h in header]
    if header != expected_header:
        handle.close()
        missing = [c for c in expected_header if c not in header]
        raise InputError(
            f"{path}: header mismatch (missing columns {missing})"
            if missing
            else f"{path}: header order must be {expected_header}"
        )
    return handle, reader


def _parse_int(text, what, path, line):
    text = text.strip()
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        raise ValidationError(f"{path}:{line}: unparseable {what} '{text}'") from None


def load_biographies(path) -> tuple[list[BiographyRecord], list[RejectedRow]]:
    """Parse biographies.csv; returns (records, rejected rows)."""
    handle, reader = _open_csv(path, BIOGRAPHY_HEADER, "biographies")
    records: list[BiographyRecord] = []
    rejects: list[RejectedRow] = []
    seen: set[str] = set()
    with handle:
        for line, row in enumerate(reader, start=2):
            if len(row) != len(BIOGRAPHY_HEADER):
                rejects.append(RejectedRow(line, row[0] if row else "", "wrong field count"))
                continue
            (pid, name, by, dy, bloc, dloc, occ, views, langs) = [c.strip() for c in row]
            if not pid:
                rejects.append(RejectedRow(line, "", "missing person_id"))
                continue
            if pid in seen:
                rejects.append(RejectedRow(line, pid, "duplicate person_id"))
                continue
            birth_year = _parse_int(by, "birth_year", path, line)
            death_year = _parse_int(dy, "death_year", path, line)
            pageviews = _parse_int(views, "pageviews", path, line)
            language_editions = _parse_int(langs, "language_editions", path, line)
            if birth_year is None:
                rejects.append(RejectedRow(line, pid, "missing birth_year"))
                continue
            if death_year is not None and death_year < birth_year:
                rejects.append(RejectedRow(line, pid, "negative lifespan"))
                continue
            if pageviews is None or pageviews < 0:
                rejects.append(RejectedRow(line, pid, "missing or negative pageviews"))
                continue
            if language_editions is None or language_editions < 1:
                rejects.append(RejectedRow(line, pid, "missing or non-positive language_editions"))
                continue
            seen.add(pid)
            records.append(
                BiographyRecord(
                    person_id=pid,
                    name=name,
                    birth_year=birth_year,
                    death_year=death_year,
                    birth_location=bloc or None,
                    death_location=dloc or None,
                    occupation=occ.casefold().strip(),
                    pageviews=pageviews,
                    language_editions=language_editions,
                )
            )
    if not records and not rejects:
        warnings.warn(f"{path}: no biography rows found", stacklevel=2)
    return records, rejects


def load_locations(path) -> LocationTable:
    """Parse locations.csv into a validated LocationTable."""
    handle, reader = _open_csv(path, LOCATION_HEADER, "locations")
    entries = []
    with handle:
        for line, row in enumerate(reader, start=2):
            if len(row) != len(LOCATION_HEADER):
                raise ValidationError(f"{path}:{line}: wrong field count")
            lid, name, level, parent, supra = [c.strip() for c in row]
            if not lid:
                raise ValidationError(f"{path}:{line}: missing location_id")
            entries.append(
                Location(
                    location_id=lid,
                    name=name,
                    level=level,
                    parent_country=parent or None,
                    supranational_region=supra,
                )
            )
    return LocationTable(entries)


def load_gdp(path, locations: LocationTable) -> tuple[list[GdpObservation], list[RejectedRow]]:
    """Parse gdp.csv; rows violating the observation invariants are rejected."""
    handle, reader = _open_csv(path, GDP_HEADER, "gdp")
    observations: list[GdpObservation] = []
    rejects: list[RejectedRow] = []
    seen: set[tuple[str, int]] = set()
    with handle:
        for line, row in enumerate(reader, start=2):
            if len(row) != len(GDP_HEADER):
                rejects.append(RejectedRow(line, row[0] if row else "", "wrong field count"))
                continue
            lid, year_s, gdp_s, source = [c.strip() for c in row]
            year = _parse_int(year_s, "year", path, line)
            if year is None or year not in SNAPSHOT_YEARS:
                rejects.append(RejectedRow(line, lid, f"year not on the 50-year grid: '{year_s}'"))
                continue
            try:
                gdp = float(gdp_s)
            except ValueError:
                rejects.append(RejectedRow(line, lid, f"unparseable gdp_pc '{gdp_s}'"))
                continue
            if not gdp > 0:
                rejects.append(RejectedRow(line, lid, "non-positive gdp_pc"))
                continue
            if lid not in locations:
                rejects.append(RejectedRow(line, lid, "unknown location"))
                continue
            if (lid, year) in seen:
                rejects.append(RejectedRow(line, lid, f"duplicate observation for year {year}"))
                continue
            seen.add((lid, year))
            observations.append(GdpObservation(lid, year, gdp, source))
    return observations, rejects


def filter_eligible(records, locations: LocationTable, min_birth_year: int = 1100):
    """Keep records usable for feature construction.

    Requires at least two language editions, a non-empty occupation, a
    birth year at or after the cutoff, and at least one location that
    exists in the location table.
    """
    kept = []
    for r in records:
        if r.language_editions < 2:
            continue
        if not r.occupation:
            continue
        if r.birth_year < min_birth_year:
            continue
        has_birth = r.birth_location is not None and r.birth_location in locations
        has_death = r.death_location is not None and r.death_location in locations
        if not (has_birth or has_death):
            continue
        kept.append(r)
    return kept


def _point_at_level(location_id, locations: LocationTable, level: str):
    if location_id is None or location_id not in locations:
        return None
    loc = locations.get(location_id)
    if loc.level == level:
        return location_id
    if level == "country" and loc.level == "region":
        return loc.parent_country
    return None


def assign_flows(records, locations: LocationTable, snapshot_year: int, window_years: int = 150) -> FlowAssignment:
    """Assign individuals born within the window to location flows.

    Includes exactly the records with
    ``snapshot_year - window_years <= birth_year <= snapshot_year``.
    """
    if window_years <= 0:
        raise ValidationError(f"window_years must be positive, got {window_years}")
    births: dict[str, set] = {}
    deaths: dict[str, set] = {}
    immigrants: dict[str, set] = {}
    emigrants: dict[str, set] = {}

    def add(table, key, pid):
        table.setdefault(key, set()).add(pid)

    for r in records:
        if not (snapshot_year - window_years <= r.birth_year <= snapshot_year):
            continue
        for level in ("country", "region"):
            b = _point_at_level(r.birth_location, locations, level)
            d = _point_at_level(r.death_location, locations, level)
            if b is not None:
                add(births, b, r.person_id)
            if d is not None:
                add(deaths, d, r.person_id)
            if b is not None and d is not None and b != d:
                add(emigrants, b, r.person_id)
                add(immigrants, d, r.person_id)

    freeze = lambda table: {k: frozenset(v) for k, v in table.items()}
    return FlowAssignment(
        snapshot_year=snapshot_year,
        window_years=window_years,
        births=freeze(births),
        deaths=freeze(deaths),
        immigrants=freeze(immigrants),
        emigrants=freeze(emigrants),
    )


@dataclass
class Dataset:
    """Validated inputs plus the indexes the pipeline needs."""

    records: list
    locations: LocationTable
    gdp: list
    rejects: list = field(default_factory=list)

    def __post_init__(self):
        self.source_levels = {(o.location_id, o.year): o.gdp_pc for o in self.gdp}
        self.by_person = {r.person_id: r for r in self.records}
        self.occupations = sorted({r.occupation for r in self.records})


def load_dataset(
    biographies_path,
    locations_path,
    gdp_path,
    *,
    min_birth_year: int = 1100,
    max_reject_fraction: float = 0.10,
) -> Dataset:
    """Load and cross-validate all three inputs.

    Aborts when more than ``max_reject_fraction`` of a file's rows are
    rejected; otherwise rejects are carried on the dataset for reporting.
    """
    locations = load_locations(locations_path)
    raw_records, bio_rejects = load_biographies(biographies_path)
    gdp, gdp_rejects = load_gdp(gdp_path, locations)

    for what, n_ok, rejected in (
        ("biographies", len(raw_records), bio_rejects),
        ("gdp", len(gdp), gdp_rejects),
    ):
        total = n_ok + len(rejected)
        if total and len(rejected) / total > max_reject_fraction:
            err = ValidationError(
                f"{what}: {len(rejected)} of {total} rows rejected "
                f"(> {max_reject_fraction:.0%}); first: {rejected[0].reason}"
            )
            err.rejects = list(bio_rejects) + list(gdp_rejects)
            raise err

    eligible = filter_eligible(raw_records, locations, min_birth_year=min_birth_year)
    return Dataset(
        records=eligible,
        locations=locations,
        gdp=gdp,
        rejects=list(bio_rejects) + list(gdp_rejects),
    )


def write_rejects_report(rejects, path):
    """Write the rejects report CSV next to the run outputs."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["line_number", "key", "reason"])
        for r in rejects:
            writer.writerow([r.line_number, r.key, r.reason])
