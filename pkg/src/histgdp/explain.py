"""Shapley-value feature attribution for fitted models.

For the linear elastic-net model the Shapley value of feature i at an
instance has the closed form ``beta_i * (x_i - mean_i)`` in standardized
space, with absent features represented by their background mean (the
independence convention).  A model-agnostic permutation-sampling estimator
cross-validates the closed form and covers any prediction function.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .elasticnet import EnModel
from .errors import ValidationError
from .features import FeatureMatrix
from .numerics import Matrix

MIN_PERMUTATIONS = 10


@dataclass(frozen=True)
class Attribution:
    """Per-feature contributions for one instance; satisfies
    ``base + sum(phi) == prediction`` (efficiency)."""

    key: tuple
    feature_names: tuple
    phi: np.ndarray
    base: float
    prediction: float
    se: np.ndarray | None = None


def _columns(source):
    if isinstance(source, FeatureMatrix):
        return source.values, source.columns
    if isinstance(source, Matrix):
        if source.col_labels is None:
            raise ValidationError("background matrix needs column labels")
        return source.values, source.col_labels
    raise ValidationError("background must be a FeatureMatrix or labeled Matrix")


def _align(values, names, wanted):
    index = {n: j for j, n in enumerate(names)}
    cols = []
    for name in wanted:
        if name not in index:
            raise ValidationError(f"background is missing model column '{name}'")
        cols.append(index[name])
    return values[:, cols]


def shapley_linear_exact(model: EnModel, x_row, background, key=("", 0)) -> Attribution:
    """Exact Shapley values for a linear model on standardized features.

    ``x_row`` is a raw-scale feature mapping (dict) or vector aligned with
    the model's features; ``background`` supplies the reference
    distribution (typically the period's training matrix).
    """
    bg_values, bg_names = _columns(background)
    if bg_values.shape[0] < 1:
        raise ValidationError("background must contain at least one row")
    bg = _align(bg_values, bg_names, model.feature_names)
    if isinstance(x_row, dict):
        try:
            x = np.array([float(x_row[n]) for n in model.feature_names])
        except KeyError as err:
            raise ValidationError(f"instance is missing model column {err}") from None
    else:
        x = np.asarray(x_row, dtype=float)
        if x.shape != (len(model.feature_names),):
            raise ValidationError("instance vector length does not match the model")

    bg_std_mean = ((bg - model.means) / model.sds).mean(axis=0)
    x_std = (x - model.means) / model.sds
    phi = model.coefficients * (x_std - bg_std_mean)
    base = model.intercept + float(model.coefficients @ bg_std_mean)
    prediction = model.intercept + float(model.coefficients @ x_std)
    return Attribution(
        key=tuple(key),
        feature_names=model.feature_names,
        phi=phi,
        base=base,
        prediction=prediction,
    )


def shapley_permutation(
    predict_fn,
    x,
    background,
    n_permutations: int = 1000,
    seed: int = 0,
    feature_names=None,
    key=("", 0),
    enumerate_all: bool = False,
) -> Attribution:
    """Permutation-sampling Shapley estimate for any prediction function.

    Each sampled permutation walks the features in order, switching them
    from a sampled background row to the instance value and crediting the
    marginal prediction change.  Uniform random permutations realize the
    ``|S|! (|F|-|S|-1)! / |F|!`` coalition weights; ``enumerate_all``
    replaces sampling with the full factorial sweep (small feature counts
    only).  Reports a Monte-Carlo standard error per feature.
    """
    x = np.asarray(x, dtype=float)
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    p = x.size
    if bg.shape[1] != p:
        raise ValidationError("background width does not match the instance")
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(p))
    rng = np.random.default_rng(seed)
    if enumerate_all:
        perms = list(itertools.permutations(range(p)))
    else:
        if n_permutations < MIN_PERMUTATIONS:
            raise ValidationError(
                f"need at least {MIN_PERMUTATIONS} permutations, got {n_permutations}"
            )
        perms = [rng.permutation(p) for _ in range(n_permutations)]

    contributions = np.zeros((len(perms), p))
    base_values = np.zeros(len(perms))
    for t, perm in enumerate(perms):
        row = bg[int(rng.integers(bg.shape[0]))]
        z = row.copy()
        prev = float(predict_fn(z))
        base_values[t] = prev
        for j in perm:
            z[j] = x[j]
            cur = float(predict_fn(z))
            contributions[t, j] = cur - prev
            prev = cur

    phi = contributions.mean(axis=0)
    if len(perms) > 1:
        se = contributions.std(axis=0, ddof=1) / math.sqrt(len(perms))
    else:
        se = np.zeros(p)
    return Attribution(
        key=tuple(key),
        feature_names=tuple(feature_names),
        phi=phi,
        base=float(base_values.mean()),
        prediction=float(predict_fn(x.copy())),
        se=se,
    )


def attribute_rows(model: EnModel, fm: FeatureMatrix, background=None) -> list[Attribution]:
    """Exact attributions for every row of a feature matrix."""
    if background is None:
        background = fm
    bg_values, bg_names = _columns(background)
    bg = _align(bg_values, bg_names, model.feature_names)
    rows = _align(*_columns(fm), model.feature_names)
    bg_std_mean = ((bg - model.means) / model.sds).mean(axis=0)
    out = []
    for key, raw in zip(fm.row_keys, rows):
        x_std = (raw - model.means) / model.sds
        phi = model.coefficients * (x_std - bg_std_mean)
        base = model.intercept + float(model.coefficients @ bg_std_mean)
        out.append(
            Attribution(
                key=tuple(key),
                feature_names=model.feature_names,
                phi=phi,
                base=base,
                prediction=model.intercept + float(model.coefficients @ x_std),
            )
        )
    return out


def rank_features(attributions) -> list[tuple[str, float]]:
    """Features ordered by mean absolute Shapley value, descending.

    Ties break alphabetically.
    """
    attributions = list(attributions)
    if not attributions:
        raise ValidationError("rank_features needs at least one attribution")
    names = attributions[0].feature_names
    for a in attributions[1:]:
        if a.feature_names != names:
            raise ValidationError("attributions carry different feature sets")
    mean_abs = np.mean([np.abs(a.phi) for a in attributions], axis=0)
    return sorted(zip(names, mean_abs.tolist()), key=lambda kv: (-kv[1], kv[0]))


def write_shapley_csv(attributions, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["location_id", "year", "feature", "phi", "se"])
        for a in attributions:
            lid, year = a.key
            se = a.se if a.se is not None else np.zeros(len(a.feature_names))
            for name, phi, err in zip(a.feature_names, a.phi, se):
                writer.writerow([lid, year, name, f"{phi:.6g}", f"{err:.6g}"])


def write_importance_csv(ranking, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "mean_abs_phi"])
        for name, value in ranking:
            writer.writerow([name, f"{value:.6g}"])


def run_explain(dataset, config) -> dict:
    """Train the per-period models and attribute every labeled row.

    Returns {period_id: (attributions, ranking)} with the period's own
    labeled feature rows as the background distribution.
    """
    from .pipeline import run_full

    models: dict = {}
    run_full(dataset, config, with_bootstrap=False, model_sink=models)
    out = {}
    for period_id, (tpm, fm) in models.items():
        labeled = fm.subset(list(tpm.training_keys))
        attributions = attribute_rows(tpm.model, labeled, background=labeled)
        out[period_id] = (attributions, rank_features(attributions))
    return out
