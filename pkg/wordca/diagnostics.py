"""Extreme values and inertia contributions.

Tukey fences f1 = q1 - 1.5 IQR and f3 = q3 + 1.5 IQR are computed over the
cells in the support of the co-occurrence matrix only; the structural zeros
of the PMI family are ignored, and the same mask is applied to the CA
residual matrices so counts are comparable.
"""

import logging
from collections.abc import Sequence

import numpy as np
from scipy import sparse

from wordca.errors import DegenerateInputError, InsufficientDataError
from wordca.factorize import Factorization
from wordca.matrix_utils import QuartileRule
from wordca.misc_data import ContributionReport, FenceReport
from wordca.transforms import ProportionTable, TransformedMatrix, fitting_function

logger = logging.getLogger(__name__)

FENCE_FACTOR = 1.5
# Extreme entries kept in a FenceReport
DEFAULT_TOP = 100


def _fences(
    values: np.ndarray,
    rows: np.ndarray,
    cols: np.ndarray,
    rule: QuartileRule,
    top_m: int,
) -> FenceReport:
    if len(values) == 0:
        raise InsufficientDataError("No values inside the mask; quartiles are undefined")
    method = 'linear' if rule == QuartileRule.LINEAR else 'inverted_cdf'
    q1, q3 = (float(q) for q in np.quantile(values, [0.25, 0.75], method=method))
    iqr = q3 - q1
    f1 = q1 - FENCE_FACTOR * iqr
    f3 = q3 + FENCE_FACTOR * iqr

    low = values < f1
    high = values > f3
    # Distance beyond the nearer fence, 0 inside the fences
    extremeness = np.where(low, f1 - values, np.where(high, values - f3, 0.0))
    extreme = np.flatnonzero(low | high)
    ranked = extreme[np.argsort(-extremeness[extreme], kind='stable')]
    order = ranked[:top_m]

    return FenceReport(
        q1, q3, f1, f3, int(low.sum()), int(high.sum()),
        rows[order].astype(np.int64), cols[order].astype(np.int64), values[order].astype(np.float64),
        len(values), rows[ranked].astype(np.int64),
    )


def tukey_fences(
    values: np.ndarray | Sequence[float],
    mask: np.ndarray | None = None,
    rule: QuartileRule = QuartileRule.LINEAR,
    top_m: int = DEFAULT_TOP,
) -> FenceReport:
    """Tukey fences over the masked values.

    Args:
        values: 1-D values or a 2-D matrix
        mask: Boolean array of the same shape selecting the values to use (all when None)
        rule: Quartile rule, linear interpolation or nearest rank
        top_m: Number of most extreme entries to keep, most extreme first

    Returns:
        FenceReport; for 1-D input top_rows holds positions and top_cols is 0
    """
    arr = np.asarray(values, dtype=np.float64)
    if mask is None:
        mask = np.ones(arr.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != arr.shape:
        raise ValueError(f"Mask shape {mask.shape} does not match values {arr.shape}")
    if arr.ndim == 1:
        rows = np.flatnonzero(mask)
        cols = np.zeros(len(rows), dtype=np.int64)
    elif arr.ndim == 2:
        rows, cols = np.nonzero(mask)
    else:
        raise ValueError(f"Expected 1-D or 2-D values, got shape {arr.shape}")
    return _fences(arr[mask], rows, cols, rule, top_m)


def _same_pattern(a: sparse.csr_matrix, b: sparse.csr_matrix) -> bool:
    return (a.shape == b.shape and a.nnz == b.nnz
            and np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices))


def masked_values(m: TransformedMatrix, mask: sparse.spmatrix | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(rows, cols, values) of m on the mask cells, row-major; the support of m when mask is None."""
    if mask is None:
        return m.support_values()
    mask = sparse.csr_matrix(mask, dtype=bool)
    mask.eliminate_zeros()
    mask.sort_indices()
    if mask.shape != m.shape:
        raise ValueError(f"Mask shape {mask.shape} does not match the matrix {m.shape}")
    if _same_pattern(mask, m.base):
        return m.support_values()
    rows = np.repeat(np.arange(mask.shape[0]), np.diff(mask.indptr))
    cols = mask.indices
    values = np.asarray(m.base[rows, cols], dtype=np.float64).ravel()
    if m.is_centered:
        values = values - m.row_offset[rows] * m.col_offset[cols]
    return rows, cols, values


def matrix_fences(
    m: TransformedMatrix,
    mask: sparse.spmatrix | None = None,
    rule: QuartileRule = QuartileRule.LINEAR,
    top_m: int = DEFAULT_TOP,
) -> FenceReport:
    """Tukey fences over the cells of m inside the mask (the co-occurrence support)."""
    rows, cols, values = masked_values(m, mask)
    report = _fences(values, rows, cols, rule, top_m)
    logger.info("%s fences [%.6g, %.6g] over %d cells: %d low, %d high",
                m.spec.header(), report.f1, report.f3, report.n_values, report.count_lt_f1, report.count_gt_f3)
    return report


def top_extreme_rows(fr: FenceReport, m: int) -> list[int]:
    """Distinct rows of the m most extreme entries, in order of extremeness.

    Uses every extreme entry, not only the top_m kept for reporting. A report
    without the full ranking falls back to its top entries.
    """
    ranked = fr.extreme_rows if len(fr.extreme_rows) == fr.total else fr.top_rows
    rows: list[int] = []
    for i in ranked[:m]:
        if int(i) not in rows:
            rows.append(int(i))
    return rows


def cell_inertia_contribution(m: TransformedMatrix) -> ContributionReport:
    """Share of each cell in the sum of squared entries.

    Shares are stored on the support; for centered matrices the cells outside
    the support carry off_support_share.
    """
    total = m.frobenius_sq()
    if total <= 0:
        raise DegenerateInputError(f"{m.spec.header()} matrix is all zeros; contributions are undefined")
    rows, cols, values = m.support_values()
    shares = m.base.copy()
    shares.data = values * values / total

    off_support = 0.0
    if m.is_centered:
        on_support = m.row_offset[rows] * m.col_offset[cols]
        off_support = (float(m.row_offset @ m.row_offset) * float(m.col_offset @ m.col_offset)
                       - float(on_support @ on_support)) / total
    return ContributionReport(total, shares, max(off_support, 0.0))


def top_cells(report: ContributionReport, n: int) -> list[tuple[int, int, float]]:
    """The n support cells with the largest inertia share, largest first."""
    shares = report.cell_shares
    if shares is None:
        return []
    shares = sparse.csr_matrix(shares)
    rows = np.repeat(np.arange(shares.shape[0]), np.diff(shares.indptr))
    order = np.argsort(-shares.data, kind='stable')[:n]
    return [(int(rows[o]), int(shares.indices[o]), float(shares.data[o])) for o in order]


def dimension_contributions(
    f: Factorization,
    rows: Sequence[int] | np.ndarray | None = None,
    k_max: int | None = None,
    cols: Sequence[int] | np.ndarray | None = None,
) -> ContributionReport:
    """u_ik^2 for the requested rows (v_jk^2 for columns) over dimensions 1..k_max.

    Raises:
        IndexError: a row or column index is out of range
    """
    k_max = f.k_max if k_max is None else k_max
    if not 1 <= k_max <= f.k_max:
        raise ValueError(f"k_max must lie in [1, {f.k_max}], got {k_max}")

    def select(index: Sequence[int] | np.ndarray | None, n: int) -> np.ndarray:
        if index is None:
            return np.arange(n)
        idx = np.asarray(index, dtype=np.int64)
        bad = idx[(idx < 0) | (idx >= n)]
        if len(bad):
            raise IndexError(f"Index {int(bad[0])} out of range for {n} rows")
        return idx

    row_idx = select(rows, f.u.shape[0])
    col_idx = select(cols, f.v.shape[0])
    return ContributionReport(
        total_inertia=float(np.dot(f.sigma, f.sigma)),
        rows=row_idx,
        row_shares=f.u[row_idx, :k_max] ** 2,
        cols=col_idx,
        col_shares=f.v[col_idx, :k_max] ** 2,
    )


def top_fitting_cells(t: ProportionTable, n: int) -> list[tuple[int, int, float]]:
    """The n support cells with the largest fitting function p_ij / (p_i+ p_+j) - 1, largest first."""
    fit = sparse.csr_matrix(fitting_function(t))
    rows = np.repeat(np.arange(fit.shape[0]), np.diff(fit.indptr))
    order = np.argsort(-fit.data, kind='stable')[:n]
    if len(order):
        logger.info("Largest fitting function value %.6g", float(fit.data[order[0]]))
    return [(int(rows[o]), int(fit.indices[o]), float(fit.data[o])) for o in order]
