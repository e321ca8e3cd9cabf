import hashlib
import string
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from wordca.matrix_utils import CoordinateSystem, EmbeddingSide, TransformKind, validate_delta


class ProgressCallback(Protocol):
    """Protocol for progress callback objects."""
    def emit(self, value: int) -> None:
        """Emit progress update; the first call announces the total."""
        ...


@dataclass(frozen=True)
class TokenizeRules:
    encoding: str = 'utf-8'
    lowercase: bool = True
    strip_punct: bool = True
    strip_digits: bool = True
    extra_strip: str = ''
    segment_lines: bool = False

    def strip_chars(self) -> str:
        chars = self.extra_strip
        if self.strip_punct:
            chars += string.punctuation
        if self.strip_digits:
            chars += string.digits
        return ''.join(sorted(set(chars)))

    def fingerprint(self) -> str:
        key = f"{self.encoding}|{self.lowercase}|{self.strip_chars()}|{self.segment_lines}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TransformSpec:
    kind: TransformKind
    delta: float = 1.0

    def __post_init__(self) -> None:
        errors = validate_delta(self.delta)
        if errors:
            raise ValueError(errors[0])

    def header(self) -> str:
        if self.kind == TransformKind.POWER_CA:
            return f"{self.kind.value} delta={self.delta:g}"
        return self.kind.value


@dataclass(frozen=True)
class EmbeddingSpec:
    k: int
    p: float = 0.0
    coordinates: CoordinateSystem = CoordinateSystem.ALTERNATIVE
    side: EmbeddingSide = EmbeddingSide.TARGET

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"Embedding dimension k must be at least 1, got {self.k}")
        if self.p < 0:
            raise ValueError(f"Singular value exponent p must be non-negative, got {self.p}")


@dataclass(frozen=True)
class SimilarityDataset:
    name: str
    pairs: tuple[tuple[str, str, float], ...] = ()

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class EvalReport:
    dataset: str
    transform: str
    k: int | None        # None for matrix rows without an SVD
    p: float | None
    pairs_used: int
    rho: float
    pairs_skipped: int = 0


@dataclass
class FenceReport:
    q1: float
    q3: float
    f1: float
    f3: float
    count_lt_f1: int
    count_gt_f3: int
    # The most extreme masked entries, most extreme first
    top_rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    top_cols: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    top_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    n_values: int = 0
    # Rows of every extreme entry, most extreme first
    extreme_rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def total(self) -> int:
        return self.count_lt_f1 + self.count_gt_f3

    def top_entries(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(v)) for i, j, v in zip(self.top_rows, self.top_cols, self.top_values)]


@dataclass
class ContributionReport:
    total_inertia: float = 0.0
    # Cell shares on the support (sparse, same pattern as the matrix); the
    # remaining share sits in cells outside the support
    cell_shares: object | None = None
    off_support_share: float = 0.0
    rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    row_shares: np.ndarray | None = None   # len(rows) x k, u_ik^2
    cols: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    col_shares: np.ndarray | None = None   # len(cols) x k, v_jk^2


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    stage: str
    params: str
    sha256: str
