import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from wordca.corpus import TokenStream, Vocabulary
from wordca.errors import ConfigurationError
from wordca.matrix_utils import OovMode, Weighting, validate_window
from wordca.misc_data import ProgressCallback

logger = logging.getLogger(__name__)

# Token positions handled by one counting worker
BATCH_TOKENS = 1 << 22


@dataclass(frozen=True)
class CooccurrenceMatrix:
    matrix: sparse.csr_matrix
    vocab_hash: str = ''
    window: int = 0
    weighting: Weighting | None = None

    @classmethod
    def from_dense(cls, values: object, vocab_hash: str = '') -> 'CooccurrenceMatrix':
        """Wrap a small dense table of counts, mainly for tests and examples."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"Expected a 2-D table, got shape {arr.shape}")
        if (arr < 0).any():
            raise ValueError("Co-occurrence counts must be non-negative")
        m = sparse.csr_matrix(arr)
        m.eliminate_zeros()
        m.sort_indices()
        return cls(m, vocab_hash)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @property
    def total(self) -> float:
        """Grand total x_++."""
        return float(self.matrix.sum())

    def support(self) -> sparse.csr_matrix:
        """Boolean pattern of the cells with x_ij > 0."""
        mask = self.matrix > 0
        return sparse.csr_matrix(mask)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


def window_scale(window: int, weighting: Weighting) -> int:
    """Common denominator making every weight 1/d (d <= window) an integer."""
    if weighting == Weighting.UNIFORM:
        return 1
    return math.lcm(*range(1, window + 1))


def _count_batch(args: tuple[np.ndarray, np.ndarray, int, int, int]) -> list[sparse.csr_matrix]:
    """Count left-to-right pairs whose left position lies in the first n_left tokens.

    Returns one matrix of unit pair counts per distance 1..window.
    Helper for parallel counting (module level so executors can use it).
    """
    ids, seg, n_left, dim, window = args
    per_distance = []
    for d in range(1, window + 1):
        m = min(n_left, len(ids) - d)
        if m <= 0:
            per_distance.append(sparse.csr_matrix((dim, dim), dtype=np.int64))
            continue
        left = ids[:m]
        right = ids[d:d + m]
        valid = (left >= 0) & (right >= 0) & (seg[:m] == seg[d:d + m])
        coo = sparse.coo_matrix(
            (np.ones(int(valid.sum()), dtype=np.int64), (left[valid], right[valid])),
            shape=(dim, dim), dtype=np.int64,
        )
        per_distance.append(coo.tocsr())
    return per_distance


def _combine_distances(per_distance: list[sparse.csr_matrix], scale: int, weighting: Weighting) -> sparse.csr_matrix:
    """Sum the symmetric per-distance counts with weights scale/d, divided once by scale.

    Each entry is the correctly rounded value of its exact rational sum.
    """
    dim = per_distance[0].shape[0]
    symmetric = []
    for c in per_distance:
        s = (c + c.T).tocsr()
        s.sum_duplicates()
        s.eliminate_zeros()
        symmetric.append(s)

    pattern = sparse.csr_matrix((dim, dim), dtype=np.int64)
    for s in symmetric:
        pattern = pattern + s
    pattern = pattern.tocsr()
    pattern.sum_duplicates()
    pattern.eliminate_zeros()
    pattern.sort_indices()
    pattern.data[:] = 1

    # Every per-distance pattern lies inside the union, so the data arrays line up
    aligned = []
    for s in symmetric:
        a = (s + pattern).tocsr()
        a.sum_duplicates()
        a.sort_indices()
        aligned.append(a.data - 1)

    multipliers = [scale // d if weighting == Weighting.HARMONIC else 1 for d in range(1, len(per_distance) + 1)]
    bound = sum(int(c.max(initial=0)) * w for c, w in zip(aligned, multipliers))
    if bound < 2**53 and scale < 2**53:
        numerator = np.zeros(pattern.nnz, dtype=np.int64)
        for c, w in zip(aligned, multipliers):
            numerator += c * w
        data = numerator.astype(np.float64) / float(scale)
    else:
        logger.debug("Co-occurrence numerators exceed 2**53, combining with exact integers")
        numerator = np.zeros(pattern.nnz, dtype=object)
        for c, w in zip(aligned, multipliers):
            numerator = numerator + c.astype(object) * w
        # int / int is correctly rounded for arbitrary sizes
        data = np.array([n / scale for n in numerator], dtype=np.float64)

    matrix = sparse.csr_matrix((data, pattern.indices.copy(), pattern.indptr.copy()), shape=(dim, dim))
    matrix.eliminate_zeros()
    matrix.sort_indices()
    return matrix


def count_cooccurrences(
    stream: TokenStream,
    vocab: Vocabulary,
    window: int,
    weighting: Weighting = Weighting.HARMONIC,
    oov: OovMode = OovMode.DELETE,
    progress: ProgressCallback | None = None,
) -> CooccurrenceMatrix:
    """Build the symmetric word-context matrix X.

    Every in-vocabulary token is paired with the in-vocabulary tokens at
    distance d <= window on both sides within its segment, each pair adding
    1/d (harmonic) or 1 (uniform). Windows are truncated at segment edges.
    """
    errors = validate_window(window)
    if errors:
        raise ValueError(errors[0])
    if stream.rules_hash != vocab.rules_hash:
        raise ConfigurationError(
            f"Token stream was preprocessed with rules {stream.rules_hash or '<none>'} "
            f"but the vocabulary was built with rules {vocab.rules_hash or '<none>'}"
        )

    dim = len(vocab)
    index = vocab.index
    ids = np.fromiter((index.get(t, -1) for t in stream.tokens), dtype=np.int64, count=len(stream.tokens))
    seg = np.zeros(len(ids), dtype=np.int64)
    if stream.segment_boundaries:
        seg[np.asarray(stream.segment_boundaries, dtype=np.int64)] = 1
        seg = np.cumsum(seg)

    if oov == OovMode.DELETE:
        keep = ids >= 0
        ids = ids[keep]
        seg = seg[keep]

    # Each batch owns the pairs whose left token it holds; it sees `window` extra tokens on the right
    tasks = []
    for start in range(0, len(ids), BATCH_TOKENS):
        stop = min(start + BATCH_TOKENS, len(ids))
        tasks.append((ids[start:stop + window], seg[start:stop + window], stop - start, dim, window))

    per_distance = [sparse.csr_matrix((dim, dim), dtype=np.int64) for _ in range(window)]
    if progress is not None:
        progress.emit(len(tasks))
    if len(tasks) > 1:
        with ThreadPoolExecutor() as executor:
            partials = executor.map(_count_batch, tasks)
            for done, partial in enumerate(partials):
                per_distance = [acc + p for acc, p in zip(per_distance, partial)]
                if progress is not None:
                    progress.emit(done + 1)
    else:
        for t in tasks:
            per_distance = [acc + p for acc, p in zip(per_distance, _count_batch(t))]
            if progress is not None:
                progress.emit(1)

    matrix = _combine_distances(per_distance, window_scale(window, weighting), weighting)

    logger.info("Co-occurrence matrix %dx%d with %d non-zero cells, window %d (%s)",
                dim, dim, matrix.nnz, window, weighting.value)
    return CooccurrenceMatrix(matrix, vocab.fingerprint(), window, weighting)


def drop_empty(x: CooccurrenceMatrix) -> tuple[CooccurrenceMatrix, np.ndarray, np.ndarray]:
    """Remove all-zero rows and columns.

    Returns:
        (reduced matrix, original row indices kept, original column indices kept)
    """
    m = x.matrix
    row_index = np.flatnonzero(np.asarray(m.sum(axis=1)).ravel() > 0)
    col_index = np.flatnonzero(np.asarray(m.sum(axis=0)).ravel() > 0)
    if len(row_index) == m.shape[0] and len(col_index) == m.shape[1]:
        return x, row_index, col_index
    logger.info("Dropping %d empty rows and %d empty columns",
                m.shape[0] - len(row_index), m.shape[1] - len(col_index))
    reduced = sparse.csr_matrix(m[row_index][:, col_index])
    reduced.sort_indices()
    return CooccurrenceMatrix(reduced, x.vocab_hash, x.window, x.weighting), row_index, col_index
