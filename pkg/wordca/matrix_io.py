"""Text formats for every artifact wordca writes.

All numeric values are printed with 17 significant digits so that a file
read back reproduces the in-memory doubles exactly. Header lines start
with '%'.
"""

import logging
import warnings
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import TextIO

import numpy as np
from scipy import sparse

from wordca.cooccur import CooccurrenceMatrix
from wordca.corpus import Vocabulary
from wordca.errors import ConfigurationError
from wordca.factorize import EmbeddingSet, Factorization
from wordca.matrix_utils import CoordinateSystem, EmbeddingSide, TransformKind, Weighting
from wordca.misc_data import ContributionReport, EvalReport, FenceReport, TransformSpec
from wordca.transforms import TransformedMatrix

logger = logging.getLogger(__name__)

FLOAT_FMT = '%.17g'
REPORT_COLUMNS = ('dataset', 'transform', 'k', 'p', 'pairs_used', 'rho', 'pairs_skipped')


def fmt(x: float) -> str:
    return FLOAT_FMT % x


def _vector_line(tag: str, values: np.ndarray) -> str:
    return f"%{tag} " + ' '.join(fmt(v) for v in values) + '\n'


def _read_headers(path: Path) -> dict[str, str]:
    """Leading '%key rest' lines of a file."""
    headers: dict[str, str] = {}
    with open(path, encoding='utf-8') as f:
        for line in f:
            if not line.startswith('%'):
                break
            key, _, rest = line[1:].rstrip('\n').partition(' ')
            headers[key] = rest
    return headers


def _load_numeric(path: Path, columns: int) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', UserWarning)  # empty data section
        data = np.loadtxt(path, comments='%', delimiter='\t', dtype=np.float64, ndmin=2)
    if data.size == 0:
        return np.empty((0, columns))
    if data.shape[1] != columns:
        raise ValueError(f"{path}: expected {columns} columns, got {data.shape[1]}")
    return data


# --- Vocabulary ---

def write_vocabulary(path: str | Path, vocab: Vocabulary) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(f"%rules {vocab.rules_hash}\n")
        for term, count in zip(vocab.terms, vocab.counts):
            f.write(f"{term}\t{count}\n")


def read_vocabulary(path: str | Path) -> Vocabulary:
    path = Path(path)
    terms: list[str] = []
    counts: list[int] = []
    rules_hash = ''
    with open(path, encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip('\n')
            if line.startswith('%rules'):
                rules_hash = line.partition(' ')[2].strip()
                continue
            if not line:
                continue
            term, sep, count = line.partition('\t')
            if not sep:
                raise ValueError(f"{path}:{line_number}: expected 'term<TAB>count'")
            terms.append(term)
            counts.append(int(count))
    return Vocabulary(tuple(terms), tuple(counts), rules_hash)


# --- Sparse triplets ---

def _write_triplets(f: TextIO, m: sparse.csr_matrix) -> None:
    coo = m.tocoo()
    if coo.nnz == 0:
        return
    # csr with sorted indices yields (i, j) order
    np.savetxt(f, np.column_stack([coo.row, coo.col, coo.data]),
               fmt=['%d', '%d', FLOAT_FMT], delimiter='\t')


def _read_triplets(path: Path, shape: tuple[int, int]) -> sparse.csr_matrix:
    data = _load_numeric(path, 3)
    rows = data[:, 0].astype(np.int64)
    cols = data[:, 1].astype(np.int64)
    m = sparse.csr_matrix((data[:, 2], (rows, cols)), shape=shape)
    m.sort_indices()
    return m


def _parse_dim(headers: dict[str, str], path: Path) -> tuple[int, int]:
    if 'dim' not in headers:
        raise ValueError(f"{path}: missing '%dim' header")
    i, j = headers['dim'].split()
    return int(i), int(j)


def write_triplets(path: str | Path, x: CooccurrenceMatrix) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(f"%dim {x.shape[0]} {x.shape[1]}\n")
        if x.vocab_hash:
            f.write(f"%vocab {x.vocab_hash}\n")
        if x.weighting is not None:
            f.write(f"%window {x.window} {x.weighting.value}\n")
        _write_triplets(f, x.matrix)


def read_triplets(path: str | Path) -> CooccurrenceMatrix:
    path = Path(path)
    headers = _read_headers(path)
    m = _read_triplets(path, _parse_dim(headers, path))
    m.eliminate_zeros()
    window, weighting = 0, None
    if 'window' in headers:
        w, name = headers['window'].split()
        window, weighting = int(w), Weighting(name)
    return CooccurrenceMatrix(m, headers.get('vocab', ''), window, weighting)


def parse_transform_header(text: str) -> TransformSpec:
    """Inverse of TransformSpec.header(): 'PMI' or 'POWER_CA delta=0.25'."""
    parts = text.split()
    if not parts:
        raise ValueError("Empty transform header")
    kind = TransformKind(parts[0])
    delta = 1.0
    for part in parts[1:]:
        key, _, value = part.partition('=')
        if key == 'delta':
            delta = float(value)
    return TransformSpec(kind, delta)


def write_transformed(path: str | Path, m: TransformedMatrix) -> None:
    """Triplets of the sparse part; centered matrices also record the rank-one
    term (entries are triplet value minus row_offset_i * col_offset_j everywhere)."""
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(f"%dim {m.shape[0]} {m.shape[1]}\n")
        f.write(f"%transform {m.spec.header()}\n")
        for tag in ('row_offset', 'col_offset', 'row_margins', 'col_margins'):
            values = getattr(m, tag)
            if values is not None:
                f.write(_vector_line(tag, values))
        _write_triplets(f, m.base)


def read_transformed(path: str | Path) -> TransformedMatrix:
    path = Path(path)
    headers = _read_headers(path)
    if 'transform' not in headers:
        raise ValueError(f"{path}: missing '%transform' header")
    shape = _parse_dim(headers, path)
    base = _read_triplets(path, shape)
    vectors = {tag: np.array([float(v) for v in headers[tag].split()]) if tag in headers else None
               for tag in ('row_offset', 'col_offset', 'row_margins', 'col_margins')}
    return TransformedMatrix(parse_transform_header(headers['transform']), base, **vectors)


# --- Embeddings and factorizations ---

def write_embeddings(path: str | Path, e: EmbeddingSet) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(f"%embeddings k={e.k} p={e.p:g} coords={e.coordinates.value} side={e.side.value}\n")
        for term, vec in zip(e.terms, e.vectors):
            f.write(term + '\t' + '\t'.join(fmt(v) for v in vec) + '\n')


def read_embeddings(path: str | Path) -> EmbeddingSet:
    path = Path(path)
    headers = _read_headers(path)
    if 'embeddings' not in headers:
        raise ValueError(f"{path}: missing '%embeddings' header")
    meta = dict(part.split('=', 1) for part in headers['embeddings'].split())
    k = int(meta['k'])
    terms: list[str] = []
    rows: list[list[float]] = []
    with open(path, encoding='utf-8') as f:
        for line in f:
            if line.startswith('%') or not line.strip():
                continue
            fields = line.rstrip('\n').split('\t')
            terms.append(fields[0])
            rows.append([float(v) for v in fields[1:]])
    vectors = np.array(rows, dtype=np.float64).reshape(len(terms), k)
    return EmbeddingSet(
        tuple(terms), vectors, CoordinateSystem(meta.get('coords', 'alternative')),
        float(meta.get('p', 0.0)), EmbeddingSide(meta.get('side', 'target')),
    )


def write_factorization(directory: str | Path, f: Factorization) -> list[Path]:
    """sigma.tsv, u.tsv, v.tsv (and margins.tsv for CA) in directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = f"factorization rank={f.rank} gsvd={int(f.gsvd)} transform={f.spec.header()}"
    paths = [directory / 'sigma.tsv', directory / 'u.tsv', directory / 'v.tsv']
    np.savetxt(paths[0], f.sigma[None, :], fmt=FLOAT_FMT, delimiter='\t', header=header, comments='%')
    np.savetxt(paths[1], f.u, fmt=FLOAT_FMT, delimiter='\t')
    np.savetxt(paths[2], f.v, fmt=FLOAT_FMT, delimiter='\t')
    if f.row_margins is not None and f.col_margins is not None:
        margins = directory / 'margins.tsv'
        with open(margins, 'w', encoding='utf-8', newline='\n') as out:
            out.write(_vector_line('row_margins', f.row_margins))
            out.write(_vector_line('col_margins', f.col_margins))
        paths.append(margins)
    return paths


def read_factorization(directory: str | Path) -> Factorization:
    directory = Path(directory)
    headers = _read_headers(directory / 'sigma.tsv')
    if 'factorization' not in headers:
        raise ValueError(f"{directory / 'sigma.tsv'}: missing '%factorization' header")
    before, _, transform = headers['factorization'].partition('transform=')
    meta = dict(part.split('=', 1) for part in before.split())
    sigma = np.loadtxt(directory / 'sigma.tsv', comments='%', delimiter='\t', ndmin=1)
    k = len(sigma)
    u = np.loadtxt(directory / 'u.tsv', delimiter='\t', ndmin=2).reshape(-1, k)
    v = np.loadtxt(directory / 'v.tsv', delimiter='\t', ndmin=2).reshape(-1, k)
    row_margins = col_margins = None
    if (directory / 'margins.tsv').exists():
        m = _read_headers(directory / 'margins.tsv')
        row_margins = np.array([float(x) for x in m['row_margins'].split()])
        col_margins = np.array([float(x) for x in m['col_margins'].split()])
    return Factorization(sigma, u, v, parse_transform_header(transform), bool(int(meta['gsvd'])),
                         row_margins, col_margins, int(meta['rank']))


# --- Reports ---

def _opt(x: float | int | None) -> str:
    if x is None:
        return ''
    return str(x) if isinstance(x, int) else f"{x:g}"


def write_reports(path: str | Path, reports: Iterable[EvalReport]) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write('\t'.join(REPORT_COLUMNS) + '\n')
        for r in reports:
            f.write('\t'.join([r.dataset, r.transform, _opt(r.k), _opt(r.p),
                               str(r.pairs_used), fmt(r.rho), str(r.pairs_skipped)]) + '\n')


def read_reports(path: str | Path) -> list[EvalReport]:
    path = Path(path)
    reports: list[EvalReport] = []
    with open(path, encoding='utf-8') as f:
        header = f.readline().rstrip('\n').split('\t')
        if tuple(header[:6]) != REPORT_COLUMNS[:6]:
            raise ConfigurationError(f"{path} is not a report file (header {header})")
        for line in f:
            if not line.strip():
                continue
            fields = line.rstrip('\n').split('\t')
            skipped = int(fields[6]) if len(fields) > 6 else 0
            reports.append(EvalReport(
                fields[0], fields[1],
                int(fields[2]) if fields[2] else None,
                float(fields[3]) if fields[3] else None,
                int(fields[4]), float(fields[5]), skipped,
            ))
    return reports


def write_summary(path: str | Path, rows: Sequence[Sequence[str]]) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for row in rows:
            f.write('\t'.join(row) + '\n')


# --- Diagnostics ---

def write_fences(path: str | Path, named_reports: Iterable[tuple[str, FenceReport]]) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write('matrix\tq1\tq3\tf1\tf3\tlt_f1\tgt_f3\ttotal\tn_values\n')
        for name, r in named_reports:
            f.write('\t'.join([name, fmt(r.q1), fmt(r.q3), fmt(r.f1), fmt(r.f3),
                               str(r.count_lt_f1), str(r.count_gt_f3), str(r.total), str(r.n_values)]) + '\n')


def write_extremes(path: str | Path, r: FenceReport, terms: Sequence[str]) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write('row_term\tcol_term\tvalue\n')
        for i, j, v in r.top_entries():
            f.write(f"{terms[i]}\t{terms[j]}\t{fmt(v)}\n")


def write_top_cells(
    path: str | Path,
    cells: Iterable[tuple[int, int, float]],
    terms: Sequence[str],
    value_name: str = 'share',
) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(f'row_term\tcol_term\t{value_name}\n')
        for i, j, value in cells:
            f.write(f"{terms[i]}\t{terms[j]}\t{fmt(value)}\n")


def write_contributions(path: str | Path, report: ContributionReport, terms: Sequence[str]) -> None:
    """Plot data: row_term, dimension (1-based), share u_ik^2."""
    if report.row_shares is None:
        raise ValueError("Report has no row contributions")
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write('row_term\tdimension\tshare\n')
        for i, shares in zip(report.rows, report.row_shares):
            for k, share in enumerate(shares, start=1):
                f.write(f"{terms[i]}\t{k}\t{fmt(share)}\n")
