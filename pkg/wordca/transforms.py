"""Matrices derived from a co-occurrence table.

Every transform works on the proportion table p_ij = x_ij / x_++ and its
margins. The CA family (TTEST and the power-delta residuals) is dense by
nature; it is held as a sparse part minus a rank-one term,

    (p_ij - p_i+ p_+j) / sqrt(p_i+ p_+j) = p_ij / sqrt(p_i+ p_+j) - sqrt(p_i+) sqrt(p_+j)

so the support entries and matrix-vector products never need the full
I x J array. The PMI family and STRATOS keep zeros outside the support.
"""

import logging
from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator

from wordca.cooccur import CooccurrenceMatrix
from wordca.errors import DegenerateInputError, SingularityError
from wordca.matrix_utils import TransformKind, is_centered, validate_delta
from wordca.misc_data import TransformSpec

logger = logging.getLogger(__name__)

MatrixLike = CooccurrenceMatrix | sparse.spmatrix | sparse.sparray | np.ndarray

# Rows materialized at once when a dense view is needed
ROW_BLOCK = 1024


@dataclass(frozen=True)
class ProportionTable:
    p: sparse.csr_matrix
    row_margins: np.ndarray
    col_margins: np.ndarray
    grand_total: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.p.shape

    def support_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Row and column index of every stored cell, in storage order."""
        rows = np.repeat(np.arange(self.p.shape[0]), np.diff(self.p.indptr))
        return rows, self.p.indices


@dataclass(frozen=True)
class TransformedMatrix:
    spec: TransformSpec
    # Values on the support of X; the pattern of `base` is the support mask
    base: sparse.csr_matrix
    # Centered matrices subtract outer(row_offset, col_offset) everywhere
    row_offset: np.ndarray | None = None
    col_offset: np.ndarray | None = None
    # Margins of the table the residuals were taken from (CA family only)
    row_margins: np.ndarray | None = None
    col_margins: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.base.shape

    @property
    def is_centered(self) -> bool:
        return self.row_offset is not None and self.col_offset is not None

    def support_mask(self) -> sparse.csr_matrix:
        n = self.base.nnz
        return sparse.csr_matrix((np.ones(n, dtype=bool), self.base.indices, self.base.indptr), shape=self.shape)

    def support_values(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(rows, cols, values) of every support cell, row-major."""
        rows = np.repeat(np.arange(self.shape[0]), np.diff(self.base.indptr))
        cols = self.base.indices
        values = self.base.data.astype(np.float64, copy=True)
        if self.is_centered:
            values -= self.row_offset[rows] * self.col_offset[cols]
        return rows, cols, values

    def row(self, i: int) -> np.ndarray:
        start, end = self.base.indptr[i], self.base.indptr[i + 1]
        out = np.zeros(self.shape[1])
        out[self.base.indices[start:end]] = self.base.data[start:end]
        if self.is_centered:
            out -= self.row_offset[i] * self.col_offset
        return out

    def iter_row_blocks(self, block_rows: int = ROW_BLOCK) -> Iterator[tuple[int, np.ndarray]]:
        for start in range(0, self.shape[0], block_rows):
            stop = min(start + block_rows, self.shape[0])
            block = self.base[start:stop].toarray()
            if self.is_centered:
                block -= np.outer(self.row_offset[start:stop], self.col_offset)
            yield start, block

    def to_dense(self) -> np.ndarray:
        out = np.empty(self.shape)
        for start, block in self.iter_row_blocks():
            out[start:start + block.shape[0]] = block
        return out

    def frobenius_sq(self) -> float:
        """Sum of squared entries over every cell (total inertia for CA residuals)."""
        if not self.is_centered:
            return float(np.dot(self.base.data, self.base.data))
        return float(sum(np.einsum('ij,ij->', b, b) for _, b in self.iter_row_blocks()))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.base @ x
        if self.is_centered:
            y = y - np.multiply.outer(self.row_offset, self.col_offset @ x)
        return y

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        x = self.base.T @ y
        if self.is_centered:
            x = x - np.multiply.outer(self.col_offset, self.row_offset @ y)
        return x

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator(
            self.shape, matvec=self.matvec, rmatvec=self.rmatvec,
            matmat=self.matvec, rmatmat=self.rmatvec, dtype=np.float64,
        )

    def row_sums(self) -> np.ndarray:
        return self.matvec(np.ones(self.shape[1]))

    def col_sums(self) -> np.ndarray:
        return self.rmatvec(np.ones(self.shape[0]))

    def centering_residuals(self) -> tuple[np.ndarray, np.ndarray]:
        """Row and column sums of the unstandardized residuals p_ij - p_i+ p_+j.

        Both are zero for CA residual matrices; this is what caps their rank at
        min(I - 1, J - 1).
        """
        if self.row_margins is None or self.col_margins is None:
            raise ValueError(f"{self.spec.header()} matrix carries no margins")
        sr = np.sqrt(self.row_margins)
        sc = np.sqrt(self.col_margins)
        return sr * self.matvec(sc), sc * self.rmatvec(sr)


def _as_csr(x: MatrixLike) -> sparse.csr_matrix:
    if isinstance(x, CooccurrenceMatrix):
        m = x.matrix
    elif sparse.issparse(x):
        m = x
    else:
        m = np.asarray(x, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError(f"Expected a 2-D table, got shape {m.shape}")
    m = sparse.csr_matrix(m, dtype=np.float64)
    m.eliminate_zeros()
    m.sort_indices()
    if m.nnz and m.data.min() < 0:
        raise ValueError("Co-occurrence counts must be non-negative")
    return m


def proportions(x: MatrixLike) -> ProportionTable:
    """Joint proportions p_ij = x_ij / x_++ with exact margin sums."""
    m = _as_csr(x)
    total = float(m.data.sum())
    if total <= 0:
        raise DegenerateInputError("Co-occurrence matrix is all zeros; proportions are undefined")
    p = sparse.csr_matrix((m.data / total, m.indices.copy(), m.indptr.copy()), shape=m.shape)
    row_margins = np.asarray(p.sum(axis=1)).ravel()
    col_margins = np.asarray(p.sum(axis=0)).ravel()
    return ProportionTable(p, row_margins, col_margins, total)


def _check_margins(t: ProportionTable) -> None:
    zero_rows = np.flatnonzero(t.row_margins <= 0)
    if len(zero_rows):
        raise SingularityError('row', int(zero_rows[0]))
    zero_cols = np.flatnonzero(t.col_margins <= 0)
    if len(zero_cols):
        raise SingularityError('column', int(zero_cols[0]))


def _on_support(t: ProportionTable, values: np.ndarray) -> sparse.csr_matrix:
    """Sparse matrix with the support pattern of t, explicit zeros kept."""
    return sparse.csr_matrix((values, t.p.indices.copy(), t.p.indptr.copy()), shape=t.shape)


def _contingency_ratios(t: ProportionTable) -> np.ndarray:
    rows, cols = t.support_coords()
    return t.p.data / (t.row_margins[rows] * t.col_margins[cols])


def ttest_matrix(t: ProportionTable, spec: TransformSpec | None = None) -> TransformedMatrix:
    """Standardized residuals (p_ij - p_i+ p_+j) / sqrt(p_i+ p_+j)."""
    _check_margins(t)
    rows, cols = t.support_coords()
    sr = np.sqrt(t.row_margins)
    sc = np.sqrt(t.col_margins)
    base = _on_support(t, t.p.data / (sr[rows] * sc[cols]))
    return TransformedMatrix(
        spec if spec is not None else TransformSpec(TransformKind.TTEST),
        base, sr, sc, t.row_margins, t.col_margins,
    )


def power_ca_matrix(x: MatrixLike, delta: float) -> TransformedMatrix:
    """Standardized residuals of the table with entries x_ij^delta.

    delta=1 gives the residuals of X itself (RAW-CA), 0.5 ROOT-CA and 0.25
    ROOTROOT-CA.
    """
    errors = validate_delta(delta)
    if errors:
        raise ValueError(errors[0])
    m = _as_csr(x)
    y = m if delta == 1.0 else m.power(delta)
    return ttest_matrix(proportions(y), TransformSpec(TransformKind.POWER_CA, delta))


def pmi_matrix(t: ProportionTable) -> TransformedMatrix:
    """log(p_ij / (p_i+ p_+j)) on the support, 0 where p_ij = 0."""
    _check_margins(t)
    return TransformedMatrix(TransformSpec(TransformKind.PMI), _on_support(t, np.log(_contingency_ratios(t))))


def ppmi_matrix(t: ProportionTable) -> TransformedMatrix:
    """PMI with negative values set to 0."""
    pmi = pmi_matrix(t)
    return TransformedMatrix(TransformSpec(TransformKind.PPMI), _on_support(t, np.maximum(pmi.base.data, 0.0)))


def wpmi_matrix(t: ProportionTable) -> TransformedMatrix:
    """sqrt(p_i+ p_+j) * PMI, the matrix decomposed by PMI-GSVD."""
    _check_margins(t)
    rows, cols = t.support_coords()
    weights = np.sqrt(t.row_margins[rows] * t.col_margins[cols])
    return TransformedMatrix(TransformSpec(TransformKind.WPMI), _on_support(t, weights * np.log(_contingency_ratios(t))))


def stratos_matrix(t: ProportionTable) -> TransformedMatrix:
    """sqrt(p_ij / sqrt(p_i+ p_+j)), the uncentered ROOT-CCA matrix."""
    _check_margins(t)
    rows, cols = t.support_coords()
    values = np.sqrt(t.p.data / np.sqrt(t.row_margins[rows] * t.col_margins[cols]))
    return TransformedMatrix(TransformSpec(TransformKind.STRATOS), _on_support(t, values))


def fitting_function(t: ProportionTable) -> sparse.csr_matrix:
    """The CA fitting function p_ij / (p_i+ p_+j) - 1 on the support (it is -1 elsewhere)."""
    _check_margins(t)
    return _on_support(t, _contingency_ratios(t) - 1.0)


def transform(x: MatrixLike, spec: TransformSpec) -> TransformedMatrix:
    """Build the matrix described by spec from the co-occurrence counts."""
    if spec.kind == TransformKind.POWER_CA:
        return power_ca_matrix(x, spec.delta)
    t = proportions(x)
    builders = {
        TransformKind.TTEST: ttest_matrix,
        TransformKind.PMI: pmi_matrix,
        TransformKind.PPMI: ppmi_matrix,
        TransformKind.WPMI: wpmi_matrix,
        TransformKind.STRATOS: stratos_matrix,
    }
    result = builders[spec.kind](t)
    logger.info("Built %s matrix %dx%d (%s)", spec.header(), *result.shape,
                "centered" if is_centered(spec.kind) else f"{result.base.nnz} stored cells")
    return result
