import hashlib
import logging
import zipfile
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from wordca.errors import CorpusDecodeError
from wordca.misc_data import TokenizeRules

logger = logging.getLogger(__name__)

# Characters per tokenization chunk, and tokens per counting shard
CHUNK_CHARS = 1 << 22
SHARD_TOKENS = 1 << 20


@dataclass(frozen=True)
class TokenStream:
    tokens: tuple[str, ...] = ()
    # Token offsets where a new segment starts; windows never cross them
    segment_boundaries: tuple[int, ...] = ()
    rules_hash: str = ''

    def __len__(self) -> int:
        return len(self.tokens)

    def segments(self) -> list[tuple[int, int]]:
        """(start, end) token ranges of the segments, in order."""
        edges = [0, *self.segment_boundaries, len(self.tokens)]
        return [(s, e) for s, e in zip(edges[:-1], edges[1:]) if e > s]


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...] = ()
    counts: tuple[int, ...] = ()
    rules_hash: str = ''
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.terms) != len(self.counts):
            raise ValueError(f"Vocabulary has {len(self.terms)} terms but {len(self.counts)} counts")
        index = {t: i for i, t in enumerate(self.terms)}
        if len(index) != len(self.terms):
            raise ValueError("Vocabulary terms must be distinct")
        object.__setattr__(self, 'index', index)

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: object) -> bool:
        return term in self.index

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.rules_hash.encode())
        for t in self.terms:
            h.update(t.encode())
            h.update(b'\0')
        return h.hexdigest()[:16]


def _decode(raw: bytes, encoding: str) -> str:
    try:
        return raw.decode(encoding)
    except UnicodeDecodeError as e:
        raise CorpusDecodeError(e.start, encoding, e.reason) from e


def _split_at_whitespace(text: str, chunk_chars: int) -> list[str]:
    """Split text into chunks of roughly chunk_chars that only break on whitespace."""
    chunks = []
    start = 0
    n = len(text)
    while start < n:
        end = min(start + chunk_chars, n)
        while end < n and not text[end].isspace():
            end += 1
        chunks.append(text[start:end])
        start = end
    return chunks


def _tokenize_chunk(args: tuple[str, dict[int, None], bool]) -> list[str]:
    """Helper for parallel tokenization (module level so executors can use it)."""
    chunk, table, lowercase = args
    if lowercase:
        chunk = chunk.lower()
    return [t for t in chunk.translate(table).split() if t]


def tokenize(raw_text: bytes | str, rules: TokenizeRules | None = None) -> TokenStream:
    """Turn raw corpus text into a token stream.

    Lowercases, deletes the configured punctuation/digit characters and splits
    on whitespace. With rules.segment_lines every line becomes its own segment.

    Args:
        raw_text: Corpus bytes in rules.encoding (or an already decoded string)
        rules: Preprocessing rules, defaults to TokenizeRules()

    Returns:
        TokenStream tagged with the rules fingerprint
    """
    if rules is None:
        rules = TokenizeRules()
    text = _decode(raw_text, rules.encoding) if isinstance(raw_text, bytes | bytearray) else raw_text
    table: dict[int, None] = dict.fromkeys(map(ord, rules.strip_chars()))

    if rules.segment_lines:
        chunks = text.splitlines()
    else:
        chunks = _split_at_whitespace(text, CHUNK_CHARS)

    tasks = [(c, table, rules.lowercase) for c in chunks]
    if len(tasks) > 1:
        with ThreadPoolExecutor() as executor:
            results = list(executor.map(_tokenize_chunk, tasks))
    else:
        results = [_tokenize_chunk(t) for t in tasks]

    tokens: list[str] = []
    boundaries: list[int] = []
    for chunk_tokens in results:
        if rules.segment_lines and tokens and chunk_tokens:
            boundaries.append(len(tokens))
        tokens.extend(chunk_tokens)

    logger.info("Tokenized %d tokens in %d segments", len(tokens), len(boundaries) + 1 if tokens else 0)
    return TokenStream(tuple(tokens), tuple(boundaries), rules.fingerprint())


def read_corpus(path: str | Path, rules: TokenizeRules | None = None) -> TokenStream:
    """Read and tokenize a corpus file; a zip archive with a single member (e.g. text8.zip) is read transparently."""
    path = Path(path)
    if zipfile.is_zipfile(path):
        with zipfile.ZipFile(path) as zf:
            members = [m for m in zf.namelist() if not m.endswith('/')]
            if len(members) != 1:
                raise ValueError(f"{path} must contain exactly one corpus file, found {len(members)}")
            raw = zf.read(members[0])
    else:
        raw = path.read_bytes()
    return tokenize(raw, rules)


def _count_shard(tokens: tuple[str, ...]) -> Counter[str]:
    return Counter(tokens)


def build_vocabulary(stream: TokenStream, min_count: int) -> Vocabulary:
    """Keep the terms occurring at least min_count times.

    Terms are ordered by descending frequency, ties broken lexicographically.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be at least 1, got {min_count}")

    shards = [stream.tokens[i:i + SHARD_TOKENS] for i in range(0, len(stream.tokens), SHARD_TOKENS)]
    counts: Counter[str] = Counter()
    if len(shards) > 1:
        with ThreadPoolExecutor() as executor:
            for shard_counts in executor.map(_count_shard, shards):
                counts.update(shard_counts)
    elif shards:
        counts = _count_shard(shards[0])

    kept = sorted(((t, c) for t, c in counts.items() if c >= min_count), key=lambda tc: (-tc[1], tc[0]))
    logger.info("Vocabulary: %d of %d distinct terms occur at least %d times", len(kept), len(counts), min_count)
    return Vocabulary(tuple(t for t, _ in kept), tuple(c for _, c in kept), stream.rules_hash)
