"""End-to-end experiments: corpus -> matrix -> transforms -> SVD -> evaluation.

Every artifact is written under the output directory and recorded in
manifest.json with the stage that produced it, the stage parameters and
the sha256 of its content. A stage is skipped when a cache sidecar shows
that its inputs and parameters hash to the same key as before and its
outputs are still on disk unchanged.
"""

import hashlib
import json
import logging
import os
import tempfile
import tomllib
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, TypeVar

from wordca.cooccur import CooccurrenceMatrix, count_cooccurrences, drop_empty
from wordca.corpus import TokenStream, Vocabulary, build_vocabulary, read_corpus
from wordca.diagnostics import (
    cell_inertia_contribution,
    dimension_contributions,
    matrix_fences,
    top_cells,
    top_extreme_rows,
)
from wordca.errors import ConfigurationError, StageError
from wordca.evaluation import evaluate, load_dataset, rho_curve
from wordca.factorize import Factorization, gsvd_factorize, matrix_rows, truncated_svd
from wordca.matrix_io import (
    read_factorization,
    read_reports,
    read_transformed,
    read_triplets,
    read_vocabulary,
    write_contributions,
    write_extremes,
    write_factorization,
    write_fences,
    write_reports,
    write_summary,
    write_top_cells,
    write_transformed,
    write_triplets,
    write_vocabulary,
)
from wordca.matrix_utils import (
    DEFAULT_DIMENSION_GRID,
    CoordinateSystem,
    EmbeddingSide,
    OovMode,
    QuartileRule,
    SvdSolver,
    TransformKind,
    Weighting,
    dimension_grid,
    matrix_name,
    method_name,
    parse_method,
    validate_delta,
    validate_grids,
    validate_window,
)
from wordca.misc_data import EvalReport, ManifestEntry, ProgressCallback, SimilarityDataset, TokenizeRules, TransformSpec
from wordca.transforms import TransformedMatrix, pmi_matrix, proportions, transform

__version__ = "1.0"

logger = logging.getLogger(__name__)

CACHE_DIR_ENV = 'WORDCA_CACHE_DIR'
DEFAULT_METHODS = ('RAW-CA', 'ROOT-CA', 'ROOTROOT-CA', 'PMI-SVD', 'PPMI-SVD', 'ROOT-CCA')
_RULE_KEYS = ('encoding', 'lowercase', 'strip_punct', 'strip_digits', 'extra_strip', 'segment_lines')
_PATH_KEYS = ('corpus', 'output_dir')

T = TypeVar('T')


class CancelObject:
    cancelled: bool = False


@dataclass
class ExperimentConfig:
    corpus: str = ''
    output_dir: str = 'wordca-out'
    rules: TokenizeRules = field(default_factory=TokenizeRules)
    min_count: int = 100
    window: int = 2
    weighting: Weighting = Weighting.HARMONIC
    oov: OovMode = OovMode.DELETE
    transforms: list[str] = field(default_factory=lambda: list(DEFAULT_METHODS))
    gsvd: bool = True                 # Also run PMI-GSVD
    k_grid: list[int] = field(default_factory=lambda: list(DEFAULT_DIMENSION_GRID))
    p_grid: list[float] = field(default_factory=lambda: [0.0, 0.5])
    datasets: list[str] = field(default_factory=lambda: [])
    score_columns: list[int] = field(default_factory=lambda: [])   # Per dataset, default 2
    matrix_rows: bool = False         # Also evaluate the rows of each matrix without SVD
    coordinates: CoordinateSystem = CoordinateSystem.ALTERNATIVE
    side: EmbeddingSide = EmbeddingSide.TARGET
    solver: SvdSolver = SvdSolver.AUTO
    diagnose: bool = False
    diagnose_top: int = 10
    diagnose_dims: int = 100
    quartile_rule: QuartileRule = QuartileRule.LINEAR
    seed: int = 0
    workers: int = 1

    def methods(self) -> list[str]:
        """Transform names to run, PMI-GSVD appended when gsvd is set."""
        names = list(self.transforms)
        if self.gsvd and 'PMI-GSVD' not in {n.upper() for n in names}:
            names.append('PMI-GSVD')
        return names

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for key, value in asdict(self).items():
            if key == 'rules':
                out.update(value)
            elif isinstance(value, Enum):
                out[key] = value.value
            else:
                out[key] = value
        return out


_ENUM_KEYS: dict[str, type[Enum]] = {
    'weighting': Weighting,
    'oov': OovMode,
    'coordinates': CoordinateSystem,
    'side': EmbeddingSide,
    'solver': SvdSolver,
    'quartile_rule': QuartileRule,
}


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    """Build a config from flat key-value pairs.

    Raises:
        ConfigurationError: unknown key or a value that does not parse
    """
    known = set(ExperimentConfig.__dataclass_fields__) - {'rules'} | set(_RULE_KEYS)
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"Unknown configuration keys: {', '.join(unknown)}")

    values: dict[str, Any] = {}
    rule_values: dict[str, Any] = {}
    for key, value in data.items():
        if key in _RULE_KEYS:
            rule_values[key] = value
        elif key in _ENUM_KEYS:
            try:
                values[key] = _ENUM_KEYS[key](value)
            except ValueError as e:
                choices = ', '.join(m.value for m in _ENUM_KEYS[key])
                raise ConfigurationError(f"Invalid {key} '{value}' (choose from {choices})") from e
        elif key == 'k_grid':
            values[key] = [int(k) for k in value]
        elif key == 'p_grid':
            values[key] = [float(p) for p in value]
        elif key in ('transforms', 'datasets'):
            values[key] = [str(v) for v in value]
        elif key == 'score_columns':
            values[key] = [int(v) for v in value]
        else:
            values[key] = value
    try:
        return ExperimentConfig(rules=TokenizeRules(**rule_values), **values)
    except TypeError as e:
        raise ConfigurationError(str(e)) from e


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read a TOML config; relative paths in the file are taken relative to it.

    overrides (from the command line) replace file values and are used as given.
    """
    path = Path(path)
    try:
        with open(path, 'rb') as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"{path}: {e}") from e

    base = path.parent
    for key in _PATH_KEYS:
        if key in data:
            data[key] = str(base / data[key])
    if 'datasets' in data:
        data['datasets'] = [str(base / d) for d in data['datasets']]
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_dict(data)


def validate_config(cfg: ExperimentConfig) -> list[str]:
    errors: list[str] = []
    if not cfg.corpus:
        errors.append("No corpus given")
    elif not Path(cfg.corpus).is_file():
        errors.append(f"Corpus not found: {cfg.corpus}")
    errors.extend(f"Dataset not found: {d}" for d in cfg.datasets if not Path(d).is_file())
    if cfg.score_columns and len(cfg.score_columns) != len(cfg.datasets):
        errors.append(f"{len(cfg.score_columns)} score columns for {len(cfg.datasets)} datasets")
    if cfg.min_count < 1:
        errors.append(f"min_count must be at least 1, got {cfg.min_count}")
    errors.extend(validate_window(cfg.window))
    errors.extend(validate_grids(cfg.k_grid, cfg.p_grid))
    if not cfg.methods():
        errors.append("No transforms selected")
    for name in cfg.methods():
        try:
            _, delta, _ = parse_method(name)
        except ValueError as e:
            errors.append(str(e))
            continue
        errors.extend(validate_delta(delta))
    if cfg.workers < 1:
        errors.append(f"workers must be at least 1, got {cfg.workers}")
    return errors


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 20), b''):
            h.update(block)
    return h.hexdigest()


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(',', ':'))


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix='.tmp_', suffix=path.suffix)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunManifest:
    config: dict[str, Any]
    entries: list[ManifestEntry] = field(default_factory=lambda: [])

    def to_json(self) -> str:
        data = {
            'version': __version__,
            'config': self.config,
            'artifacts': [asdict(e) for e in self.entries],
        }
        return json.dumps(data, indent=2, sort_keys=True) + '\n'

    def paths(self) -> list[str]:
        return [e.path for e in self.entries]


class StageCache:
    """Key sidecars: one JSON file per stage with its input key and output hashes."""

    def __init__(self, cache_dir: Path, out_dir: Path) -> None:
        self.cache_dir = cache_dir
        self.out_dir = out_dir
        cache_dir.mkdir(parents=True, exist_ok=True)

    def _sidecar(self, stage: str) -> Path:
        return self.cache_dir / f"{stage}.key.json"

    def lookup(self, stage: str, key: str) -> dict[str, str] | None:
        sidecar = self._sidecar(stage)
        if not sidecar.exists():
            return None
        try:
            record = json.loads(sidecar.read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError):
            return None
        if record.get('key') != key:
            return None
        outputs: dict[str, str] = record.get('outputs', {})
        for rel, digest in outputs.items():
            p = self.out_dir / rel
            if not p.is_file() or sha256_file(p) != digest:
                return None
        return outputs

    def store(self, stage: str, key: str, outputs: dict[str, str]) -> None:
        _write_atomic(self._sidecar(stage), _canonical({'key': key, 'outputs': outputs}) + '\n')


class _Run:
    def __init__(self, cfg: ExperimentConfig, progress: ProgressCallback | None,
                 cancel_object: CancelObject | None) -> None:
        self.cfg = cfg
        self.out_dir = Path(cfg.output_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        cache_dir = os.environ.get(CACHE_DIR_ENV) or str(self.out_dir / '.cache')
        self.cache = StageCache(Path(cache_dir), self.out_dir)
        self.progress = progress
        self.cancel_object = cancel_object
        self.manifest = RunManifest(cfg.to_dict())
        self._stream: TokenStream | None = None

    def rel(self, p: Path) -> str:
        return p.relative_to(self.out_dir).as_posix()

    def tick(self) -> None:
        if self.progress is not None:
            self.progress.emit(1)

    def stream(self) -> TokenStream:
        if self._stream is None:
            self._stream = read_corpus(self.cfg.corpus, self.cfg.rules)
        return self._stream

    def stage(
        self,
        stage: str,
        params: dict[str, Any],
        inputs: dict[str, str],
        outputs: list[Path],
        compute: Callable[[], T],
        load: Callable[[], T],
    ) -> tuple[T, list[ManifestEntry]]:
        """Run or reuse one stage; returns its result and manifest entries."""
        if self.cancel_object is not None and self.cancel_object.cancelled:
            raise StageError(stage, RuntimeError("cancelled"), list(self.manifest.entries))
        key = hashlib.sha256(_canonical({'stage': stage, 'params': params, 'inputs': inputs}).encode()).hexdigest()
        hashes = self.cache.lookup(stage, key)
        try:
            if hashes is None:
                for p in outputs:
                    p.parent.mkdir(parents=True, exist_ok=True)
                result = compute()
                hashes = {self.rel(p): sha256_file(p) for p in outputs}
                self.cache.store(stage, key, hashes)
            else:
                logger.info("Reusing cached stage %s", stage)
                result = load()
        except StageError:
            raise
        except Exception as e:
            raise StageError(stage, e, list(self.manifest.entries)) from e
        self.tick()
        params_text = _canonical(params)
        # Sidecars store outputs with sorted keys; entries follow the declared output order
        return result, [ManifestEntry(self.rel(p), stage, params_text, hashes[self.rel(p)]) for p in outputs]


def _stage_count(cfg: ExperimentConfig, datasets: Sequence[SimilarityDataset]) -> int:
    n = 3  # vocab, cooccur, summary
    for name in cfg.methods():
        _, _, reduced = parse_method(name)
        n += 1
        if not reduced or cfg.matrix_rows:
            n += 1 if datasets else 0
        if reduced:
            n += 1 + (1 if datasets else 0)
        if cfg.diagnose:
            n += 1
    return n


def _run_method(
    run: _Run,
    name: str,
    x: CooccurrenceMatrix,
    x_hash: str,
    terms: Vocabulary,
    terms_hash: str,
    datasets: Sequence[SimilarityDataset],
    dataset_hashes: dict[str, str],
) -> tuple[list[ManifestEntry], list[EvalReport]]:
    cfg = run.cfg
    kind, delta, reduced = parse_method(name)
    spec = TransformSpec(kind, delta)
    label = method_name(kind, delta) if reduced else matrix_name(kind, delta)
    entries: list[ManifestEntry] = []
    reports: list[EvalReport] = []
    vocab_set = set(terms.terms)

    matrix_path = run.out_dir / 'transforms' / f"{label}.tsv"

    def compute_matrix() -> TransformedMatrix:
        m = transform(x, spec)
        write_transformed(matrix_path, m)
        return m

    m, produced = run.stage(f"transform-{label}", {'transform': spec.header()}, {'cooccur': x_hash},
                            [matrix_path], compute_matrix, lambda: read_transformed(matrix_path))
    entries += produced
    matrix_hash = produced[0].sha256

    if datasets and (not reduced or cfg.matrix_rows):
        rows_name = matrix_name(kind, delta)
        rows_path = run.out_dir / 'reports' / f"{rows_name}.rows.tsv"

        def compute_rows() -> list[EvalReport]:
            source = matrix_rows(m, terms.terms)
            out = [evaluate(source, d, vocab_set, rows_name) for d in datasets]
            write_reports(rows_path, out)
            return out

        rows_reports, produced = run.stage(
            f"rows-{rows_name}", {}, {'matrix': matrix_hash, 'terms': terms_hash, **dataset_hashes},
            [rows_path], compute_rows, lambda: read_reports(rows_path))
        entries += produced
        reports += rows_reports

    f: Factorization | None = None
    if reduced:
        k_list = dimension_grid(min(m.shape), tuple(sorted(set(cfg.k_grid))))
        k_max = k_list[-1]
        fact_dir = run.out_dir / 'factorizations' / label
        fact_files = [fact_dir / 'sigma.tsv', fact_dir / 'u.tsv', fact_dir / 'v.tsv']
        if kind in (TransformKind.TTEST, TransformKind.POWER_CA):
            fact_files.append(fact_dir / 'margins.tsv')

        def compute_factorization() -> Factorization:
            if label == 'PMI-GSVD':
                t = proportions(x)
                result = gsvd_factorize(t, pmi_matrix(t), k_max, cfg.seed, cfg.solver)
            else:
                result = truncated_svd(m, k_max, cfg.seed, cfg.solver)
            write_factorization(fact_dir, result)
            return result

        f, produced = run.stage(
            f"factorize-{label}", {'k': k_max, 'seed': cfg.seed, 'solver': cfg.solver.value},
            {'matrix': matrix_hash}, fact_files, compute_factorization, lambda: read_factorization(fact_dir))
        entries += produced
        fact_hashes = {e.path: e.sha256 for e in produced}

        if datasets:
            report_path = run.out_dir / 'reports' / f"{label}.tsv"

            def compute_reports() -> list[EvalReport]:
                out: list[EvalReport] = []
                for p in cfg.p_grid:
                    out += rho_curve(f, datasets, terms.terms, k_list, p, cfg.coordinates, cfg.side)
                write_reports(report_path, out)
                return out

            eval_params = {'k_grid': k_list, 'p_grid': cfg.p_grid,
                           'coordinates': cfg.coordinates.value, 'side': cfg.side.value}
            svd_reports, produced = run.stage(
                f"evaluate-{label}", eval_params, {**fact_hashes, 'terms': terms_hash, **dataset_hashes},
                [report_path], compute_reports, lambda: read_reports(report_path))
            entries += produced
            reports += svd_reports

    if cfg.diagnose:
        diag_dir = run.out_dir / 'diagnostics'
        fences_path = diag_dir / f"{label}.fences.tsv"
        extremes_path = diag_dir / f"{label}.extremes.tsv"
        cells_path = diag_dir / f"{label}.cells.tsv"
        contrib_path = diag_dir / f"{label}.contributions.tsv"
        diag_outputs = [fences_path, extremes_path, cells_path] + ([contrib_path] if f is not None else [])

        def compute_diagnostics() -> None:
            fences = matrix_fences(m, x.support(), cfg.quartile_rule, max(cfg.diagnose_top, 100))
            write_fences(fences_path, [(label, fences)])
            write_extremes(extremes_path, fences, terms.terms)
            write_top_cells(cells_path, top_cells(cell_inertia_contribution(m), cfg.diagnose_top), terms.terms)
            if f is not None:
                rows = top_extreme_rows(fences, cfg.diagnose_top)
                contrib = dimension_contributions(f, rows, min(cfg.diagnose_dims, f.k_max))
                write_contributions(contrib_path, contrib, terms.terms)

        _, produced = run.stage(
            f"diagnose-{label}",
            {'rule': cfg.quartile_rule.value, 'top': cfg.diagnose_top, 'dims': cfg.diagnose_dims},
            {'matrix': matrix_hash, 'cooccur': x_hash, **({'factorization': fact_hashes[run.rel(fact_files[0])]} if f is not None else {})},
            diag_outputs, compute_diagnostics, lambda: None)
        entries += produced

    return entries, reports


def run_pipeline(
    cfg: ExperimentConfig,
    progress: ProgressCallback | None = None,
    cancel_object: CancelObject | None = None,
) -> RunManifest:
    """Run every stage of an experiment and write manifest.json.

    Raises:
        ConfigurationError: the config does not validate
        StageError: a stage failed; manifest.partial.json lists what was written before it
    """
    errors = validate_config(cfg)
    if errors:
        raise ConfigurationError('; '.join(errors))

    run = _Run(cfg, progress, cancel_object)
    out = run.out_dir
    try:
        score_columns = [cfg.score_columns[i] if cfg.score_columns else 2 for i in range(len(cfg.datasets))]
        datasets = [load_dataset(path, score_column=col) for path, col in zip(cfg.datasets, score_columns)]
        # Stage keys cover the score column as well as the file contents
        dataset_hashes = {f"dataset:{Path(p).name}": f"{sha256_file(p)}:column{col}"
                          for p, col in zip(cfg.datasets, score_columns)}
        corpus_hash = sha256_file(cfg.corpus)
        if progress is not None:
            progress.emit(_stage_count(cfg, datasets))

        vocab_path = out / 'vocab.tsv'

        def compute_vocab() -> Vocabulary:
            v = build_vocabulary(run.stream(), cfg.min_count)
            write_vocabulary(vocab_path, v)
            return v

        rules_params = {k: getattr(cfg.rules, k) for k in _RULE_KEYS}
        vocab, produced = run.stage('vocab', {**rules_params, 'min_count': cfg.min_count},
                                    {'corpus': corpus_hash}, [vocab_path], compute_vocab,
                                    lambda: read_vocabulary(vocab_path))
        run.manifest.entries += produced
        vocab_hash = produced[0].sha256

        x_path = out / 'cooccur.tsv'
        terms_path = out / 'terms.tsv'

        def compute_cooccur() -> tuple[CooccurrenceMatrix, Vocabulary]:
            full = count_cooccurrences(run.stream(), vocab, cfg.window, cfg.weighting, cfg.oov)
            x, row_index, _ = drop_empty(full)
            kept = Vocabulary(tuple(vocab.terms[i] for i in row_index),
                              tuple(vocab.counts[i] for i in row_index), vocab.rules_hash)
            write_triplets(x_path, x)
            write_vocabulary(terms_path, kept)
            return x, kept

        (x, terms), produced = run.stage(
            'cooccur', {'window': cfg.window, 'weighting': cfg.weighting.value, 'oov': cfg.oov.value},
            {'corpus': corpus_hash, 'vocab': vocab_hash}, [x_path, terms_path], compute_cooccur,
            lambda: (read_triplets(x_path), read_vocabulary(terms_path)))
        run.manifest.entries += produced
        x_hash, terms_hash = produced[0].sha256, produced[1].sha256
        if x.nnz == 0:
            raise StageError('cooccur', ValueError("No co-occurrences; corpus too small for min_count/window"),
                             list(run.manifest.entries))

        methods = cfg.methods()

        def one(name: str) -> tuple[list[ManifestEntry], list[EvalReport]]:
            return _run_method(run, name, x, x_hash, terms, terms_hash, datasets, dataset_hashes)

        if cfg.workers > 1 and len(methods) > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
                results = list(executor.map(one, methods))
        else:
            results = [one(name) for name in methods]

        all_reports: list[EvalReport] = []
        for entries, reports in results:
            run.manifest.entries += entries
            all_reports += reports

        reports_path = out / 'reports.tsv'
        summary_path = out / 'summary.tsv'

        def compute_summary() -> None:
            write_reports(reports_path, all_reports)
            write_summary(summary_path, emit_summary(all_reports))

        _, produced = run.stage('summary', {}, {e.path: e.sha256 for e in run.manifest.entries},
                                [reports_path, summary_path], compute_summary, lambda: None)
        run.manifest.entries += produced
    except StageError as e:
        _write_atomic(out / 'manifest.partial.json', RunManifest(run.manifest.config, list(e.partial_manifest or [])).to_json())
        logger.error("%s", e)
        raise

    _write_atomic(out / 'manifest.json', run.manifest.to_json())
    logger.info("Wrote %d artifacts to %s", len(run.manifest.entries), out)
    return run.manifest


def emit_summary(reports: Sequence[EvalReport]) -> list[list[str]]:
    """Best k per (method, p, dataset) and a Total block summing those rho values.

    Ties on rho across k go to the smallest k; Total rows with equal sums are
    ordered by method name.
    """
    best: dict[tuple[str, float, str], EvalReport] = {}
    for r in reports:
        key = (r.transform, r.p if r.p is not None else -1.0, r.dataset)
        current = best.get(key)
        if (current is None or r.rho > current.rho
                or (r.rho == current.rho and (r.k or 0) < (current.k or 0))):
            best[key] = r

    def p_text(p: float) -> str:
        return '' if p < 0 else f"{p:g}"

    rows = [['method', 'p', 'dataset', 'k', 'rho', 'pairs_used']]
    for (method, p, dataset), r in sorted(best.items(), key=lambda item: (item[0][2], item[0][0], item[0][1])):
        rows.append([method, p_text(p), dataset, '' if r.k is None else str(r.k), f"{r.rho:.3f}", str(r.pairs_used)])

    totals: dict[tuple[str, float], float] = {}
    for (method, p, _), r in best.items():
        totals[(method, p)] = totals.get((method, p), 0.0) + r.rho
    for (method, p), total in sorted(totals.items(), key=lambda item: (item[0][0], item[0][1])):
        rows.append([method, p_text(p), 'Total', '', f"{total:.3f}", ''])
    return rows
