import logging
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, svds

from wordca.errors import ConvergenceError, RankWarning, UnsupportedCoordinatesError
from wordca.matrix_utils import CoordinateSystem, EmbeddingSide, SvdSolver, TransformKind, is_centered, method_name
from wordca.misc_data import EmbeddingSpec, TransformSpec
from wordca.transforms import ProportionTable, TransformedMatrix

logger = logging.getLogger(__name__)

# The AUTO solver materializes matrices up to this many rows/columns
DENSE_MAX_DIM = 3000
SVD_TOL = 1e-10
SVD_MAXITER = 1000
# Singular values below this fraction of sigma_1 count as zero
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class Factorization:
    sigma: np.ndarray      # k, non-increasing
    u: np.ndarray          # I x k
    v: np.ndarray          # J x k
    spec: TransformSpec
    gsvd: bool = False
    # Margins used by the standard and principal CA coordinates
    row_margins: np.ndarray | None = None
    col_margins: np.ndarray | None = None
    rank: int = 0

    @property
    def k_max(self) -> int:
        return len(self.sigma)

    @property
    def method(self) -> str:
        return method_name(self.spec.kind, self.spec.delta)

    @property
    def is_ca(self) -> bool:
        return is_centered(self.spec.kind) and self.row_margins is not None and self.col_margins is not None

    def reconstruct(self, k: int | None = None) -> np.ndarray:
        """U_k diag(sigma_k) V_k^T."""
        k = self.k_max if k is None else k
        return (self.u[:, :k] * self.sigma[:k]) @ self.v[:, :k].T


@dataclass(frozen=True)
class EmbeddingSet:
    terms: tuple[str, ...]
    vectors: np.ndarray     # len(terms) x k
    coordinates: CoordinateSystem = CoordinateSystem.ALTERNATIVE
    p: float = 0.0
    side: EmbeddingSide = EmbeddingSide.TARGET
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.vectors.shape[0] != len(self.terms):
            raise ValueError(f"{len(self.terms)} terms but {self.vectors.shape[0]} vectors")
        object.__setattr__(self, 'index', {t: i for i, t in enumerate(self.terms)})

    @property
    def k(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: object) -> bool:
        return term in self.index

    def vector(self, term: str) -> np.ndarray:
        return self.vectors[self.index[term]]


@dataclass(frozen=True)
class MatrixRows:
    """Rows of a transformed matrix used directly as word vectors (no SVD)."""
    matrix: TransformedMatrix
    terms: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.matrix.shape[0] != len(self.terms):
            raise ValueError(f"{len(self.terms)} terms but the matrix has {self.matrix.shape[0]} rows")
        object.__setattr__(self, 'index', {t: i for i, t in enumerate(self.terms)})

    def __contains__(self, term: object) -> bool:
        return term in self.index

    def vector(self, term: str) -> np.ndarray:
        return self.matrix.row(self.index[term])


def matrix_rows(m: TransformedMatrix, terms: Sequence[str]) -> MatrixRows:
    return MatrixRows(m, tuple(terms))


def _canonical_signs(u: np.ndarray, v: np.ndarray) -> None:
    """Flip component pairs in place so the first significant coordinate of each u column is positive."""
    for k in range(u.shape[1]):
        col = u[:, k]
        scale = np.abs(col).max()
        if scale == 0:
            continue
        first = int(np.flatnonzero(np.abs(col) > 1e-8 * scale)[0])
        if col[first] < 0:
            u[:, k] *= -1
            v[:, k] *= -1


def _dense_svd(m: TransformedMatrix, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    u, s, vt = scipy.linalg.svd(m.to_dense(), full_matrices=False, lapack_driver='gesdd')
    return u[:, :k], s[:k], vt[:k].T


def _arpack_svd(m: TransformedMatrix, k: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(min(m.shape))
    try:
        u, s, vt = svds(m.as_linear_operator(), k=k, v0=v0, tol=SVD_TOL, maxiter=SVD_MAXITER, solver='arpack')
    except ArpackNoConvergence as e:
        raise ConvergenceError(
            f"ARPACK did not converge for k={k} within {SVD_MAXITER} iterations "
            f"({len(e.eigenvalues)} of {k} components converged)"
        ) from e
    return u, s, vt.T


def truncated_svd(
    m: TransformedMatrix,
    k: int,
    seed: int = 0,
    solver: SvdSolver = SvdSolver.AUTO,
) -> Factorization:
    """Best rank-k approximation of m.

    Components are ordered by non-increasing singular value and their signs
    canonicalized (first significant coordinate of u positive), so results
    are reproducible for a fixed seed. If the numerical rank r is below k the
    trailing k - r singular values are set to 0 and a RankWarning is issued.

    Args:
        m: Matrix to decompose
        k: Number of components, at most min(I, J)
        seed: Seed of the ARPACK start vector
        solver: Dense LAPACK, ARPACK, or AUTO to choose by size

    Returns:
        Factorization carrying the CA margins of m when it is a residual matrix
    """
    n_min = min(m.shape)
    if not 1 <= k <= n_min:
        raise ValueError(f"k must lie in [1, {n_min}] for a {m.shape[0]}x{m.shape[1]} matrix, got {k}")

    if solver == SvdSolver.AUTO:
        solver = SvdSolver.DENSE if n_min <= DENSE_MAX_DIM or k >= n_min // 2 else SvdSolver.ARPACK
    if solver == SvdSolver.ARPACK and k >= n_min:
        logger.info("ARPACK needs k < %d; falling back to the dense solver", n_min)
        solver = SvdSolver.DENSE

    if solver == SvdSolver.DENSE:
        u, s, v = _dense_svd(m, k)
    else:
        u, s, v = _arpack_svd(m, k, seed)

    order = np.argsort(-s, kind='stable')
    u = np.ascontiguousarray(u[:, order])
    v = np.ascontiguousarray(v[:, order])
    s = np.maximum(s[order], 0.0)
    _canonical_signs(u, v)

    tol = RANK_RTOL * (s[0] if len(s) else 0.0)
    rank = int((s > tol).sum()) if len(s) and s[0] > 0 else 0
    if rank < k:
        s[rank:] = 0.0
        msg = f"{m.spec.header()} matrix has numerical rank {rank} < k={k}; trailing singular values set to 0"
        logger.warning(msg)
        warnings.warn(msg, RankWarning, stacklevel=2)

    logger.info("Computed %d singular values of %s (%s), sigma_1=%.6g",
                k, m.spec.header(), solver.value, s[0] if len(s) else 0.0)
    return Factorization(s, u, v, m.spec, False, m.row_margins, m.col_margins, rank)


def gsvd_factorize(
    t: ProportionTable,
    base: TransformedMatrix,
    k: int,
    seed: int = 0,
    solver: SvdSolver = SvdSolver.AUTO,
) -> Factorization:
    """PMI-GSVD: truncated SVD of sqrt(p_i+ p_+j) * PMI."""
    if base.spec.kind != TransformKind.PMI:
        raise ValueError(f"PMI-GSVD needs a PMI matrix, got {base.spec.header()}")
    if base.shape != t.shape:
        raise ValueError(f"PMI matrix shape {base.shape} does not match the table {t.shape}")
    rows, cols, values = base.support_values()
    weighted = base.base.copy()
    weighted.data = np.sqrt(t.row_margins[rows] * t.col_margins[cols]) * values
    wpmi = TransformedMatrix(TransformSpec(TransformKind.WPMI), weighted)
    f = truncated_svd(wpmi, k, seed, solver)
    return Factorization(f.sigma, f.u, f.v, f.spec, True, None, None, f.rank)


def embeddings(
    f: Factorization,
    spec: EmbeddingSpec,
    terms: Sequence[str] | None = None,
) -> EmbeddingSet:
    """Word vectors from a factorization.

    Alternative coordinates are u_ik * sigma_k^p. Standard CA coordinates
    divide row i by sqrt(p_i+) (column j by sqrt(p_+j) on the context side);
    principal coordinates are standard coordinates with p = 1.
    """
    if spec.k > f.k_max:
        raise ValueError(f"Requested k={spec.k} but the factorization has only {f.k_max} components")
    context = spec.side == EmbeddingSide.CONTEXT
    vecs = f.v if context else f.u
    p = 1.0 if spec.coordinates == CoordinateSystem.PRINCIPAL else spec.p
    out = vecs[:, :spec.k] * f.sigma[:spec.k] ** p

    if spec.coordinates != CoordinateSystem.ALTERNATIVE:
        if not f.is_ca:
            raise UnsupportedCoordinatesError(
                f"{spec.coordinates.value} coordinates need a CA factorization, got {f.spec.header()}"
                + (" (GSVD)" if f.gsvd else "")
            )
        margins = f.col_margins if context else f.row_margins
        out = out / np.sqrt(margins)[:, None]

    if terms is None:
        terms = [str(i) for i in range(out.shape[0])]
    return EmbeddingSet(tuple(terms), out, spec.coordinates, p, spec.side)
