"""Run configuration: defaults, JSON config files, and flag overrides.

Precedence is flag > config file > default.  The resolved configuration is
echoed into every run report so a run can be reproduced from its outputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import InputError, ValidationError

DEFAULT_ALPHA_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
DEFAULT_GATING_THRESHOLDS = ((1600, 3), (1950, 5), (2000, 10))


@dataclass
class RunConfig:
    # input/output paths
    biographies: str | None = None
    locations: str | None = None
    gdp: str | None = None
    proxies: str | None = None
    output_dir: str = "."
    # feature construction
    window_years: int = 150
    scale: str = "log10p1"  # log10p1 | asinh
    reference_year_for_age: int = 2023
    min_birth_year: int = 1100
    max_reject_fraction: float = 0.10
    # elastic net
    alpha_grid: tuple = DEFAULT_ALPHA_GRID
    n_lambda: int = 100
    lambda_ratio: float = 1e-4
    k_folds: int = 10
    cv_selection_rule: str = "min_mean"  # min_mean | fold_average
    # evaluation
    n_splits: int = 500
    test_fraction: float = 0.2
    # bootstrap
    bootstrap_samples: int = 200
    ci_level: float = 0.90
    bootstrap_unit: str = "row"  # row | country
    # gating
    gating_rule: str = "both"  # both | either | sum
    gating_thresholds: tuple = DEFAULT_GATING_THRESHOLDS
    # reproducibility
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.alpha_grid = tuple(float(a) for a in self.alpha_grid)
        self.gating_thresholds = tuple(
            (int(y), int(t)) for y, t in self.gating_thresholds
        )
        if self.scale not in ("log10p1", "asinh"):
            raise ValidationError(f"unknown scale '{self.scale}'")
        if self.cv_selection_rule not in ("min_mean", "fold_average"):
            raise ValidationError(f"unknown cv_selection_rule '{self.cv_selection_rule}'")
        if self.bootstrap_unit not in ("row", "country"):
            raise ValidationError(f"unknown bootstrap_unit '{self.bootstrap_unit}'")
        if self.gating_rule not in ("both", "either", "sum"):
            raise ValidationError(f"unknown gating_rule '{self.gating_rule}'")
        if not 0.0 < self.ci_level < 1.0:
            raise ValidationError(f"ci_level must lie in (0, 1), got {self.ci_level}")
        if not all(0.0 <= a <= 1.0 for a in self.alpha_grid):
            raise ValidationError("alpha_grid values must lie in [0, 1]")
        years = [y for y, _ in self.gating_thresholds]
        thresholds = [t for _, t in self.gating_thresholds]
        if years != sorted(years) or any(t <= 0 for t in thresholds):
            raise ValidationError("gating thresholds must be positive with ascending year caps")
        if thresholds != sorted(thresholds):
            raise ValidationError("gating thresholds must be non-decreasing in year")

    def echo(self) -> dict:
        doc = asdict(self)
        doc["alpha_grid"] = list(self.alpha_grid)
        doc["gating_thresholds"] = [list(p) for p in self.gating_thresholds]
        return doc


_FIELD_NAMES = {f.name for f in fields(RunConfig)}


def config_from_sources(file_path=None, overrides=None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus flag overrides.

    The config file uses flat keys mirroring the flag names.  Unknown keys
    are rejected so typos surface immediately.
    """
    merged: dict = {}
    if file_path is not None:
        path = Path(file_path)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise ValidationError(f"{path}: invalid JSON ({err})") from None
        if not isinstance(loaded, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        unknown = set(loaded) - _FIELD_NAMES
        if unknown:
            raise ValidationError(f"{path}: unknown config keys {sorted(unknown)}")
        merged.update(loaded)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_NAMES:
            raise ValidationError(f"unknown config override '{key}'")
        merged[key] = value
    return RunConfig(**merged)
