import logging
import math
from collections.abc import Container, Sequence
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.stats import rankdata

from wordca.errors import DatasetParseError, DegenerateInputError, InsufficientDataError, UndefinedSimilarityError
from wordca.factorize import EmbeddingSet, Factorization, embeddings
from wordca.matrix_utils import CoordinateSystem, EmbeddingSide
from wordca.misc_data import EmbeddingSpec, EvalReport, SimilarityDataset

logger = logging.getLogger(__name__)


class VectorSource(Protocol):
    """Anything that maps a term to a vector: EmbeddingSet or MatrixRows."""
    def __contains__(self, term: object) -> bool:
        ...

    def vector(self, term: str) -> np.ndarray:
        ...


def _parse_score(text: str) -> float | None:
    try:
        value = float(text)
    except ValueError:
        return None
    return value


def load_dataset(
    path: str | Path,
    name: str | None = None,
    score_column: int = 2,
    lowercase: bool = True,
) -> SimilarityDataset:
    """Read a word-similarity benchmark.

    Each record is `word1 word2 score`, tab- or whitespace-separated. The
    score is taken from field score_column (0-based) so multi-column files
    such as SimLex-999 can be read directly. A first line whose score field
    is not numeric is treated as a header; lines starting with '#' are
    comments. A repeated unordered pair keeps its first occurrence.

    Raises:
        DatasetParseError: a record has too few fields or a bad score
    """
    path = Path(path)
    if name is None:
        name = path.stem
    pairs: list[tuple[str, str, float]] = []
    seen: set[frozenset[str]] = set()
    duplicates = 0
    first_record = True

    with open(path, encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            fields = line.split('\t') if '\t' in line else line.split()
            if len(fields) <= max(score_column, 1):
                raise DatasetParseError(str(path), line_number,
                                        f"expected at least {max(score_column, 1) + 1} fields, got {len(fields)}")
            score = _parse_score(fields[score_column])
            is_first, first_record = first_record, False
            if score is None:
                if is_first:
                    continue  # header
                raise DatasetParseError(str(path), line_number, f"score '{fields[score_column]}' is not a number")
            if not math.isfinite(score):
                raise DatasetParseError(str(path), line_number, f"score {score} is not finite")

            w1, w2 = fields[0].strip(), fields[1].strip()
            if lowercase:
                w1, w2 = w1.lower(), w2.lower()
            key = frozenset((w1, w2))
            if key in seen:
                duplicates += 1
                continue
            seen.add(key)
            pairs.append((w1, w2, score))

    if duplicates:
        logger.warning("%s: ignored %d repeated pairs", path, duplicates)
    logger.info("Loaded %d pairs from %s", len(pairs), path)
    return SimilarityDataset(name, tuple(pairs))


def filter_oov(d: SimilarityDataset, vocab: Container[str]) -> SimilarityDataset:
    """Keep the pairs whose two words are both in vocab."""
    kept = tuple(pair for pair in d.pairs if pair[0] in vocab and pair[1] in vocab)
    return SimilarityDataset(d.name, kept)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"Vectors differ in length: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise UndefinedSimilarityError("Cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def spearman(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"Score lists differ in length: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise InsufficientDataError(f"Spearman correlation needs at least 2 values, got {len(a)}")
    ra = rankdata(a, method='average')
    rb = rankdata(b, method='average')
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(np.dot(ra, ra)) * float(np.dot(rb, rb)))
    if denom == 0:
        raise DegenerateInputError("Spearman correlation is undefined for a constant list (zero rank variance)")
    return float(np.clip(np.dot(ra, rb) / denom, -1.0, 1.0))


def evaluate(
    e: VectorSource,
    d: SimilarityDataset,
    vocab: Container[str] | None = None,
    transform: str = '',
    k: int | None = None,
    p: float | None = None,
) -> EvalReport:
    """Spearman rho between model cosines and human scores.

    Pairs with an out-of-vocabulary word are removed first; pairs where a
    vector is all zeros are skipped and counted in pairs_skipped.
    """
    if isinstance(e, EmbeddingSet):
        k = e.k if k is None else k
        p = e.p if p is None else p
    filtered = filter_oov(d, vocab if vocab is not None else e)

    model_scores: list[float] = []
    human_scores: list[float] = []
    skipped = 0
    for w1, w2, score in filtered.pairs:
        if w1 not in e or w2 not in e:
            raise KeyError(f"No vector for '{w1 if w1 not in e else w2}'; embeddings must cover the vocabulary")
        try:
            sim = cosine(e.vector(w1), e.vector(w2))
        except UndefinedSimilarityError:
            skipped += 1
            continue
        model_scores.append(sim)
        human_scores.append(score)

    if skipped:
        logger.warning("%s: skipped %d pairs with a zero vector", d.name, skipped)
    if len(model_scores) < 2:
        raise InsufficientDataError(f"{d.name}: only {len(model_scores)} usable pairs, need at least 2")

    rho = spearman(model_scores, human_scores)
    logger.debug("%s %s k=%s p=%s: rho=%.4f over %d pairs", d.name, transform, k, p, rho, len(model_scores))
    return EvalReport(d.name, transform, k, p, len(model_scores), rho, skipped)


def rho_curve(
    f: Factorization,
    datasets: Sequence[SimilarityDataset],
    terms: Sequence[str],
    k_grid: Sequence[int],
    p: float = 0.0,
    coordinates: CoordinateSystem = CoordinateSystem.ALTERNATIVE,
    side: EmbeddingSide = EmbeddingSide.TARGET,
) -> list[EvalReport]:
    """rho on every dataset for each k of the grid that the factorization covers."""
    reports = []
    vocab = set(terms)
    for k in k_grid:
        if k > f.k_max:
            logger.info("Skipping k=%d beyond the %d computed components", k, f.k_max)
            continue
        e = embeddings(f, EmbeddingSpec(k, p, coordinates, side), terms)
        for d in datasets:
            reports.append(evaluate(e, d, vocab, f.method, k, e.p))
    return reports
