"""Self-contained linear algebra and statistics kernel.

Everything downstream (feature construction, penalized regression, the
estimation pipeline, evaluation) builds on the routines here: a one-sided
Jacobi SVD, least squares through the SVD pseudo-inverse, column
standardization, interpolated quantiles, the Kruskal-Wallis rank test with
its chi-square survival function, and the two fit metrics used throughout.

All functions are pure; none mutate their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError

# One-sided Jacobi settings: matrices in this package are small
# (hundreds of rows by tens of columns), so a plain sweep strategy with a
# tight rotation tolerance is both simple and accurate.
_JACOBI_MAX_SWEEPS = 100
_JACOBI_TOL = 1e-12


def _as_array(m) -> np.ndarray:
    values = m.values if isinstance(m, Matrix) else np.asarray(m, dtype=float)
    if values.ndim != 2:
        raise ValidationError(f"expected a 2-d matrix, got ndim={values.ndim}")
    return values


@dataclass(frozen=True)
class Matrix:
    """A dense float matrix with optional row/column labels.

    Values are stored row-major.  Construction validates that every entry
    is finite and that label lengths match the shape.
    """

    values: np.ndarray
    row_labels: tuple | None = None
    col_labels: tuple | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValidationError(f"matrix must be 2-d, got ndim={values.ndim}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("matrix contains non-finite values")
        object.__setattr__(self, "values", values)
        if self.row_labels is not None:
            object.__setattr__(self, "row_labels", tuple(self.row_labels))
            if len(self.row_labels) != values.shape[0]:
                raise ValidationError("row label count does not match row count")
        if self.col_labels is not None:
            object.__setattr__(self, "col_labels", tuple(self.col_labels))
            if len(self.col_labels) != values.shape[1]:
                raise ValidationError("column label count does not match column count")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD: ``a = u @ diag(s) @ v.T`` with ``r = min(rows, cols)``.

    Columns of ``u`` and ``v`` are orthonormal, ``s`` is non-negative and
    descending.  Sign convention: the largest-magnitude entry of each
    ``u`` column is positive.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


def svd(m, name: str = "matrix") -> SvdResult:
    """One-sided Jacobi singular value decomposition.

    Orthogonalizes the columns of the input by plane rotations; singular
    values are the resulting column norms.  Deterministic up to the sign
    convention fixed below.

    Raises
    ------
    ValidationError
        If the input is empty or contains non-finite values.
    NumericalError
        If rotations have not converged after the sweep cap.
    """
    a = _as_array(m)
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValidationError(f"{name}: cannot decompose an empty matrix")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name}: non-finite values in SVD input")

    transposed = a.shape[0] < a.shape[1]
    w = (a.T if transposed else a).copy()
    n = w.shape[1]
    v = np.eye(n)

    converged = False
    for _ in range(_JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                wp = w[:, p]
                wq = w[:, q]
                app = float(wp @ wp)
                aqq = float(wq @ wq)
                apq = float(wp @ wq)
                # sqrt factors kept separate so the product cannot underflow
                if apq == 0.0 or abs(apq) <= _JACOBI_TOL * math.sqrt(app) * math.sqrt(aqq):
                    continue
                zeta = (aqq - app) / (2.0 * apq)
                if math.isfinite(zeta):
                    t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                else:
                    t = 0.0  # rotation angle below floating-point resolution
                cs = 1.0 / math.hypot(1.0, t)
                sn = cs * t
                if sn == 0.0:
                    continue
                rotated = True
                w[:, p], w[:, q] = cs * wp - sn * wq, sn * wp + cs * wq
                vp = v[:, p].copy()
                v[:, p] = cs * vp - sn * v[:, q]
                v[:, q] = sn * vp + cs * v[:, q]
        if not rotated:
            converged = True
            break
    if not converged:
        raise NumericalError(
            f"{name}: one-sided Jacobi SVD did not converge within "
            f"{_JACOBI_MAX_SWEEPS} sweeps on a {a.shape[0]}x{a.shape[1]} matrix"
        )

    s = np.sqrt(np.sum(w * w, axis=0))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    w = w[:, order]
    v = v[:, order]

    u = np.zeros_like(w)
    nonzero = s > 0
    u[:, nonzero] = w[:, nonzero] / s[nonzero]
    # Complete zero-norm columns to an orthonormal basis so U'U = I holds
    # even for rank-deficient inputs (the reconstruction is unaffected).
    for j in np.flatnonzero(~nonzero):
        u[:, j] = _orthonormal_completion(u, j)

    # Sign convention: largest-magnitude entry of each u column positive.
    for j in range(u.shape[1]):
        k = int(np.argmax(np.abs(u[:, j])))
        if u[k, j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]

    if transposed:
        u, v = v, u
    return SvdResult(u=u, s=s, v=v)


def _orthonormal_completion(u: np.ndarray, col: int) -> np.ndarray:
    # Gram-Schmidt a standard basis vector against the existing columns.
    m = u.shape[0]
    for k in range(m):
        cand = np.zeros(m)
        cand[k] = 1.0
        cand -= u @ (u.T @ cand)
        norm = float(np.linalg.norm(cand))
        if norm > 1e-8:
            return cand / norm
    raise NumericalError("could not complete orthonormal basis")


@dataclass(frozen=True)
class OlsResult:
    """Least-squares fit with intercept; minimum-norm on rank deficiency."""

    intercept: float
    coefficients: np.ndarray
    rank_deficient: bool

    def predict(self, x) -> np.ndarray:
        return self.intercept + _as_array(x) @ self.coefficients


def ols_fit(x, y) -> OlsResult:
    """Ordinary least squares of ``y`` on ``x`` plus an intercept column.

    Solved through the SVD pseudo-inverse, so rank-deficient designs yield
    the minimum-norm solution and are flagged instead of failing.
    """
    a = _as_array(x)
    yv = np.asarray(y, dtype=float)
    if yv.ndim != 1 or a.shape[0] != yv.shape[0]:
        raise ValidationError("ols_fit: x rows and y length must match")
    if a.shape[0] <= a.shape[1]:
        raise ValidationError("ols_fit: need more rows than columns")
    design = np.hstack([np.ones((a.shape[0], 1)), a])
    dec = svd(design, name="ols design")
    smax = dec.s[0] if dec.s.size else 0.0
    cutoff = max(design.shape) * np.finfo(float).eps * smax
    keep = dec.s > cutoff
    inv_s = np.where(keep, 1.0 / np.where(keep, dec.s, 1.0), 0.0)
    beta = dec.v @ (inv_s * (dec.u.T @ yv))
    return OlsResult(
        intercept=float(beta[0]),
        coefficients=beta[1:],
        rank_deficient=bool(np.any(~keep)),
    )


@dataclass(frozen=True)
class StandardizeResult:
    matrix: Matrix
    means: np.ndarray
    sds: np.ndarray
    dropped: tuple = field(default_factory=tuple)


def standardize(m) -> StandardizeResult:
    """Center and scale columns to mean 0, population sd 1.

    Constant columns carry no information for a penalized regression and
    are dropped; their names are recorded so callers can report them.
    """
    if isinstance(m, Matrix):
        values, labels = m.values, m.col_labels
    else:
        values = _as_array(m)
        labels = None
    if labels is None:
        labels = tuple(f"col_{j}" for j in range(values.shape[1]))
    means = values.mean(axis=0)
    sds = values.std(axis=0)  # population (ddof=0)
    keep = sds > 0
    dropped = tuple(labels[j] for j in np.flatnonzero(~keep))
    std = (values[:, keep] - means[keep]) / sds[keep]
    kept_labels = tuple(labels[j] for j in np.flatnonzero(keep))
    return StandardizeResult(
        matrix=Matrix(std, col_labels=kept_labels),
        means=means[keep],
        sds=sds[keep],
        dropped=dropped,
    )


def quantile(values, p: float) -> float:
    """Linear-interpolation quantile: index ``p * (n - 1)`` into the sorted sample."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValidationError("quantile of an empty sample")
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"quantile probability {p} outside [0, 1]")
    v = np.sort(v)
    h = p * (v.size - 1)
    lo = int(math.floor(h))
    hi = int(math.ceil(h))
    return float(v[lo] + (h - lo) * (v[hi] - v[lo]))


def _midranks(pooled: np.ndarray) -> np.ndarray:
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(pooled.size, dtype=float)
    sorted_vals = pooled[order]
    i = 0
    while i < pooled.size:
        j = i
        while j + 1 < pooled.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def kruskal_wallis(groups) -> tuple[float, float]:
    """Kruskal-Wallis H test on two or more groups.

    Uses pooled mid-ranks with the tie correction
    ``1 - sum(t^3 - t) / (N^3 - N)``; the p-value comes from the
    chi-square survival function with ``len(groups) - 1`` degrees of
    freedom.  All values identical is treated as no separation
    (H = 0, p = 1).
    """
    gs = [np.asarray(g, dtype=float) for g in groups]
    if len(gs) < 2:
        raise ValidationError("kruskal_wallis needs at least two groups")
    if any(g.size == 0 for g in gs):
        raise ValidationError("kruskal_wallis groups must be non-empty")
    pooled = np.concatenate(gs)
    n_total = pooled.size
    if np.all(pooled == pooled[0]):
        return 0.0, 1.0
    ranks = _midranks(pooled)
    h = 0.0
    start = 0
    for g in gs:
        r = ranks[start : start + g.size]
        h += r.sum() ** 2 / g.size
        start += g.size
    h = 12.0 / (n_total * (n_total + 1)) * h - 3.0 * (n_total + 1)
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts.astype(float) ** 3 - counts))
    correction = 1.0 - tie_term / (n_total**3 - n_total)
    h = h / correction
    p = chi2_sf(h, len(gs) - 1)
    return float(h), float(p)


def chi2_sf(x: float, df: int) -> float:
    """Chi-square survival function via the regularized incomplete gamma.

    Series expansion below ``x = df + 1``, Lentz continued fraction above;
    absolute error is well inside 1e-10 over the ranges used here.
    """
    if df < 1:
        raise ValidationError(f"chi2_sf: df must be >= 1, got {df}")
    if x <= 0.0:
        return 1.0
    a = 0.5 * df
    xg = 0.5 * x
    if x < df + 1.0:
        return 1.0 - _gamma_p_series(a, xg)
    return _gamma_q_contfrac(a, xg)


def _gamma_p_series(a: float, x: float) -> float:
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_n x^n / ((a+1)...(a+n))
    term = 1.0 / a
    total = term
    denom = a
    for _ in range(1000):
        denom += 1.0
        term *= x / denom
        total += term
        if abs(term) < abs(total) * 1e-16:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise NumericalError("incomplete gamma series did not converge")


def _gamma_q_contfrac(a: float, x: float) -> float:
    # Q(a, x) by the Lentz modified continued fraction.
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    f = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            return f * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise NumericalError("incomplete gamma continued fraction did not converge")


def r2_log(predicted, observed) -> float:
    """Out-of-sample R-squared, ``1 - SSE/SST``; may be negative."""
    pred = np.asarray(predicted, dtype=float)
    obs = np.asarray(observed, dtype=float)
    if pred.shape != obs.shape or pred.ndim != 1 or pred.size < 2:
        raise ValidationError("r2_log: need equal-length vectors of size >= 2")
    sst = float(np.sum((obs - obs.mean()) ** 2))
    if sst == 0.0:
        raise ValidationError("r2_log: observed values have zero variance")
    sse = float(np.sum((pred - obs) ** 2))
    return 1.0 - sse / sst


def mae_relative(predicted_level, observed_level) -> float:
    """Mean absolute error divided by the mean observed level."""
    pred = np.asarray(predicted_level, dtype=float)
    obs = np.asarray(observed_level, dtype=float)
    if pred.shape != obs.shape or pred.ndim != 1 or pred.size == 0:
        raise ValidationError("mae_relative: need equal-length non-empty vectors")
    if np.any(obs <= 0):
        raise ValidationError("mae_relative: observed levels must be positive")
    return float(np.mean(np.abs(pred - obs)) / np.mean(obs))


def pearson(x, y) -> float:
    """Pearson correlation coefficient."""
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    if xv.shape != yv.shape or xv.size < 2:
        raise ValidationError("pearson: need equal-length vectors of size >= 2")
    xd = xv - xv.mean()
    yd = yv - yv.mean()
    denom = math.sqrt(float(xd @ xd) * float(yd @ yd))
    if denom == 0.0:
        raise ValidationError("pearson: zero variance input")
    return float(xd @ yd) / denom


def spearman(x, y) -> float:
    """Spearman rank correlation (Pearson on mid-ranks)."""
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    return pearson(_midranks(xv), _midranks(yv))
