import argparse
import logging
import sys
from pathlib import Path
from typing import Any

from tqdm import tqdm

from wordca.cooccur import count_cooccurrences, drop_empty
from wordca.corpus import Vocabulary, build_vocabulary, read_corpus
from wordca.diagnostics import (
    cell_inertia_contribution,
    dimension_contributions,
    matrix_fences,
    top_cells,
    top_extreme_rows,
    top_fitting_cells,
)
from wordca.errors import WordcaError
from wordca.evaluation import evaluate, load_dataset, rho_curve
from wordca.factorize import embeddings, matrix_rows, truncated_svd
from wordca.matrix_io import (
    read_embeddings,
    read_factorization,
    read_reports,
    read_transformed,
    read_triplets,
    read_vocabulary,
    write_contributions,
    write_embeddings,
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
    CoordinateSystem,
    EmbeddingSide,
    OovMode,
    QuartileRule,
    SvdSolver,
    Weighting,
    matrix_name,
    method_name,
    parse_method,
)
from wordca.misc_data import EmbeddingSpec, EvalReport, SimilarityDataset, TokenizeRules, TransformSpec
from wordca.pipeline import __version__, emit_summary, load_config, run_pipeline
from wordca.transforms import proportions, transform

logger = logging.getLogger(__name__)


class Progress:
    def __init__(self) -> None:
        self.first_call = True
        self.tqdm: tqdm | None = None

    def emit(self, value: int) -> None:
        if self.first_call:
            self.first_call = False
            self.tqdm = tqdm(total=value)
            return
        if self.tqdm is not None:
            self.tqdm.update(1)

    def close(self) -> None:
        if self.tqdm is not None:
            self.tqdm.close()


def parse_int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(',') if v.strip()]


def parse_float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(',') if v.strip()]


def parse_str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(',') if v.strip()]


def add_tokenize_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--encoding', default='utf-8', help="Corpus encoding (default: %(default)s)")
    parser.add_argument('--lowercase', action=argparse.BooleanOptionalAction, default=True,
                        help="Lowercase tokens (default: on)")
    parser.add_argument('--strip-punct', action=argparse.BooleanOptionalAction, default=True,
                        help="Delete ASCII punctuation (default: on)")
    parser.add_argument('--strip-digits', action=argparse.BooleanOptionalAction, default=True,
                        help="Delete digits (default: on)")
    parser.add_argument('--extra-strip', default='', metavar='CHARS',
                        help="Additional characters to delete")
    parser.add_argument('--segment-lines', action='store_true',
                        help="Treat every line as a segment that context windows do not cross")


def tokenize_rules(args: argparse.Namespace) -> TokenizeRules:
    return TokenizeRules(args.encoding, args.lowercase, args.strip_punct, args.strip_digits,
                         args.extra_strip, args.segment_lines)


def load_datasets(paths: list[str]) -> list[SimilarityDataset]:
    """Dataset paths, optionally suffixed with '@<score column>' (0-based)."""
    datasets: list[SimilarityDataset] = []
    for spec in paths:
        path, sep, column = spec.rpartition('@')
        if sep and column.isdigit():
            datasets.append(load_dataset(path, score_column=int(column)))
        else:
            datasets.append(load_dataset(spec))
    return datasets


def cmd_vocab(args: argparse.Namespace) -> None:
    stream = read_corpus(args.corpus, tokenize_rules(args))
    vocab = build_vocabulary(stream, args.min_count)
    write_vocabulary(args.output, vocab)
    print(f"{len(vocab)} terms with at least {args.min_count} occurrences written to {args.output}")


def cmd_cooccur(args: argparse.Namespace) -> None:
    stream = read_corpus(args.corpus, tokenize_rules(args))
    vocab = read_vocabulary(args.vocab)
    progress = Progress()
    x = count_cooccurrences(stream, vocab, args.window, Weighting(args.weighting), OovMode(args.oov), progress)
    progress.close()
    x, row_index, _ = drop_empty(x)
    terms_out = args.terms_out or str(Path(args.output).with_suffix('.terms.tsv'))
    kept = Vocabulary(tuple(vocab.terms[i] for i in row_index), tuple(vocab.counts[i] for i in row_index),
                      vocab.rules_hash)
    write_triplets(args.output, x)
    write_vocabulary(terms_out, kept)
    print(f"{x.shape[0]}x{x.shape[1]} matrix with {x.nnz} non-zero cells written to {args.output} "
          f"(terms in {terms_out})")


def cmd_transform(args: argparse.Namespace) -> None:
    kind, delta, _ = parse_method(args.method)
    x = read_triplets(args.cooccur)
    m = transform(x, TransformSpec(kind, delta))
    write_transformed(args.output, m)
    print(f"{m.spec.header()} matrix written to {args.output}")


def cmd_factorize(args: argparse.Namespace) -> None:
    m = read_transformed(args.matrix)
    f = truncated_svd(m, args.k, args.seed, SvdSolver(args.solver))
    write_factorization(args.output, f)
    print(f"{f.k_max} components of {f.method} written to {args.output}")
    if args.embeddings:
        terms = read_vocabulary(args.vocab).terms if args.vocab else None
        spec = EmbeddingSpec(args.k, args.p, CoordinateSystem(args.coords), EmbeddingSide(args.side))
        write_embeddings(args.embeddings, embeddings(f, spec, terms))
        print(f"Embeddings written to {args.embeddings}")


def cmd_evaluate(args: argparse.Namespace) -> None:
    terms = read_vocabulary(args.vocab).terms
    vocab_set = set(terms)
    datasets = load_datasets(args.datasets)
    reports: list[EvalReport] = []
    if args.factorization:
        f = read_factorization(args.factorization)
        k_grid = parse_int_list(args.k_grid) if args.k_grid else [f.k_max]
        for p in parse_float_list(args.p_grid):
            reports += rho_curve(f, datasets, terms, k_grid, p, CoordinateSystem(args.coords), EmbeddingSide(args.side))
    elif args.matrix:
        m = read_transformed(args.matrix)
        name = matrix_name(m.spec.kind, m.spec.delta)
        source = matrix_rows(m, terms)
        reports = [evaluate(source, d, vocab_set, name) for d in datasets]
    else:
        e = read_embeddings(args.embeddings)
        reports = [evaluate(e, d, vocab_set, args.name or '') for d in datasets]
    write_reports(args.output, reports)
    for r in reports:
        print(f"{r.dataset}\t{r.transform}\tk={r.k}\tp={r.p}\tpairs={r.pairs_used}\trho={r.rho:.3f}")


def cmd_diagnose(args: argparse.Namespace) -> None:
    m = read_transformed(args.matrix)
    counts = read_triplets(args.mask) if args.mask else None
    mask = counts.support() if counts is not None else None
    terms = read_vocabulary(args.vocab).terms
    name = matrix_name(m.spec.kind, m.spec.delta)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    fences = matrix_fences(m, mask, QuartileRule(args.quartiles), max(args.top, 100))
    write_fences(out / f"{name}.fences.tsv", [(name, fences)])
    write_extremes(out / f"{name}.extremes.tsv", fences, terms)
    write_top_cells(out / f"{name}.cells.tsv", top_cells(cell_inertia_contribution(m), args.top), terms)
    print(f"{name}: q1={fences.q1:.6g} q3={fences.q3:.6g} f1={fences.f1:.6g} f3={fences.f3:.6g} "
          f"LTf1={fences.count_lt_f1} GTf3={fences.count_gt_f3} total={fences.total}")

    if counts is not None:
        fitting = top_fitting_cells(proportions(counts), args.top)
        write_top_cells(out / "fitting.tsv", fitting, terms, value_name='fitting')
        if fitting:
            i, j, value = fitting[0]
            print(f"max fitting function {value:.6g} at ({terms[i]}, {terms[j]})")

    if args.factorization:
        f = read_factorization(args.factorization)
        rows = top_extreme_rows(fences, args.top)
        contrib = dimension_contributions(f, rows, min(args.dims, f.k_max))
        write_contributions(out / f"{method_name(f.spec.kind, f.spec.delta)}.contributions.tsv", contrib, terms)


def cmd_pipeline(args: argparse.Namespace) -> None:
    overrides: dict[str, Any] = {
        'corpus': args.corpus,
        'output_dir': args.output_dir,
        'seed': args.seed,
        'min_count': args.min_count,
        'window': args.window,
        'k_grid': parse_int_list(args.k_grid) if args.k_grid else None,
        'p_grid': parse_float_list(args.p_grid) if args.p_grid else None,
        'datasets': args.datasets,
        'transforms': parse_str_list(args.transforms) if args.transforms else None,
        'workers': args.workers,
    }
    cfg = load_config(args.config, overrides)
    progress = Progress()
    try:
        manifest = run_pipeline(cfg, progress)
    finally:
        progress.close()
    print(f"Pipeline completed: {len(manifest.entries)} artifacts, manifest in {Path(cfg.output_dir) / 'manifest.json'}")


def cmd_summary(args: argparse.Namespace) -> None:
    reports: list[EvalReport] = []
    for path in args.reports:
        reports += read_reports(path)
    rows = emit_summary(reports)
    if args.output:
        write_summary(args.output, rows)
    else:
        for row in rows:
            print('\t'.join(row))


def build_parser() -> argparse.ArgumentParser:
    description = (
        "wordca - word embeddings from co-occurrence matrices by correspondence analysis "
        "and PMI-family transforms, factorized with a truncated SVD and scored on "
        "word-similarity benchmarks."
    )

    epilog = """
examples:
  Build a vocabulary and the word-context matrix of Text8:
    wordca vocab text8.zip -o vocab.tsv --min-count 100
    wordca cooccur text8.zip --vocab vocab.tsv -o cooccur.tsv --window 2

  Transform, factorize and evaluate ROOT-CA:
    wordca transform cooccur.tsv --method ROOT-CA -o root-ca.tsv
    wordca factorize root-ca.tsv --k 1000 -o root-ca/
    wordca evaluate --factorization root-ca/ --vocab cooccur.terms.tsv \\
        --datasets ws353.txt simlex999.txt@3 --k-grid 50,100,200 --p-grid 0,0.5 -o reports.tsv

  Extreme values of the PMI matrix over the co-occurrence support:
    wordca diagnose --matrix pmi.tsv --mask cooccur.tsv --vocab cooccur.terms.tsv --top 10

  Run a whole experiment from a config file:
    wordca pipeline --config experiment.toml --seed 1

methods:
  RAW-CA, ROOT-CA, ROOTROOT-CA, PMI-SVD, PPMI-SVD, PMI-GSVD, ROOT-CCA (factorized)
  TTEST, ROOT-TTEST, ROOTROOT-TTEST, PMI, PPMI, WPMI, STRATOS-TTEST (matrix rows)
  POWER_CA:<delta> for any delta in (0, 1]
"""

    parser = argparse.ArgumentParser(
        prog='wordca',
        description=description,
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument('--log-level', choices=['debug', 'info', 'warning', 'error'],
                        default='warning', metavar='LEVEL',
                        help="Set logging verbosity level: debug, info, warning, error (default: %(default)s)")
    parser.add_argument('--version', action='version', version=f'wordca {__version__}')
    sub = parser.add_subparsers(dest='command', required=True, metavar='COMMAND')

    p = sub.add_parser('vocab', help="Build a frequency-thresholded vocabulary")
    p.add_argument('corpus', metavar='CORPUS', help="Corpus text file (or a zip holding one)")
    p.add_argument('-o', '--output', required=True, help="Vocabulary TSV to write")
    p.add_argument('--min-count', type=int, default=100, help="Minimum term frequency (default: %(default)s)")
    add_tokenize_args(p)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser('cooccur', help="Count windowed co-occurrences")
    p.add_argument('corpus', metavar='CORPUS')
    p.add_argument('--vocab', required=True, help="Vocabulary TSV from 'wordca vocab'")
    p.add_argument('-o', '--output', required=True, help="Sparse triplet file to write")
    p.add_argument('--terms-out', help="Vocabulary of the non-empty rows (default: <output>.terms.tsv)")
    p.add_argument('--window', type=int, default=2, help="Context window size (default: %(default)s)")
    p.add_argument('--weighting', choices=[w.value for w in Weighting], default='harmonic')
    p.add_argument('--oov', choices=[o.value for o in OovMode], default='delete',
                   help="Out-of-vocabulary tokens: delete before windowing or hold their position")
    add_tokenize_args(p)
    p.set_defaults(func=cmd_cooccur)

    p = sub.add_parser('transform', help="Apply a CA or PMI-family transform")
    p.add_argument('cooccur', metavar='COOCCUR', help="Sparse triplet file from 'wordca cooccur'")
    p.add_argument('--method', required=True, help="Matrix or method name, e.g. ROOT-CA, PPMI, POWER_CA:0.3")
    p.add_argument('-o', '--output', required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser('factorize', help="Truncated SVD of a transformed matrix")
    p.add_argument('matrix', metavar='MATRIX', help="Transformed matrix from 'wordca transform'")
    p.add_argument('--k', type=int, required=True, help="Number of components")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--solver', choices=[s.value for s in SvdSolver], default='auto')
    p.add_argument('-o', '--output', required=True, help="Directory for sigma.tsv, u.tsv, v.tsv")
    p.add_argument('--embeddings', help="Also write embeddings with k components to this file")
    p.add_argument('--vocab', help="Terms of the matrix rows (for --embeddings)")
    p.add_argument('--p', type=float, default=0.0, help="Singular value exponent (default: %(default)s)")
    p.add_argument('--coords', choices=[c.value for c in CoordinateSystem], default='alternative')
    p.add_argument('--side', choices=[s.value for s in EmbeddingSide], default='target')
    p.set_defaults(func=cmd_factorize)

    p = sub.add_parser('evaluate', help="Spearman rho on word-similarity datasets")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--factorization', help="Factorization directory")
    source.add_argument('--matrix', help="Transformed matrix, rows used without SVD")
    source.add_argument('--embeddings', help="Embedding file")
    p.add_argument('--vocab', required=True, help="Terms of the matrix rows")
    p.add_argument('--datasets', nargs='+', required=True,
                   help="Dataset files; append @N to read the score from column N (0-based)")
    p.add_argument('--k-grid', help="Comma-separated dimensions (default: all components)")
    p.add_argument('--p-grid', default='0', help="Comma-separated exponents (default: %(default)s)")
    p.add_argument('--coords', choices=[c.value for c in CoordinateSystem], default='alternative')
    p.add_argument('--side', choices=[s.value for s in EmbeddingSide], default='target')
    p.add_argument('--name', help="Method name recorded for --embeddings")
    p.add_argument('-o', '--output', required=True, help="Report TSV to write")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('diagnose', help="Tukey fences and inertia contributions")
    p.add_argument('--matrix', required=True)
    p.add_argument('--mask', help="Co-occurrence triplets whose support selects the cells (also gives fitting.tsv)")
    p.add_argument('--vocab', required=True)
    p.add_argument('--factorization', help="Factorization for per-dimension row contributions")
    p.add_argument('--top', type=int, default=10, help="Number of extreme entries/cells (default: %(default)s)")
    p.add_argument('--dims', type=int, default=100, help="Dimensions in the contribution table (default: %(default)s)")
    p.add_argument('--quartiles', choices=[q.value for q in QuartileRule], default='linear')
    p.add_argument('-o', '--output', default='diagnostics', help="Output directory (default: %(default)s)")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser('pipeline', help="Run a full experiment from a TOML config")
    p.add_argument('--config', required=True)
    p.add_argument('--corpus')
    p.add_argument('--output-dir')
    p.add_argument('--seed', type=int)
    p.add_argument('--min-count', type=int)
    p.add_argument('--window', type=int)
    p.add_argument('--k-grid')
    p.add_argument('--p-grid')
    p.add_argument('--datasets', nargs='+')
    p.add_argument('--transforms', help="Comma-separated method names")
    p.add_argument('--workers', type=int, help="Methods processed in parallel")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser('summary', help="Best-k table with a Total block")
    p.add_argument('reports', nargs='+', metavar='REPORTS')
    p.add_argument('-o', '--output', help="Summary TSV (default: print)")
    p.set_defaults(func=cmd_summary)

    return parser


def main(argv: list[str] | None = None) -> None:
    parser = build_parser()
    args = parser.parse_args(sys.argv[1:] if argv is None else argv)

    logging.basicConfig(level=getattr(logging, args.log_level.upper()),
                        format='[%(asctime)s] %(levelname)s - %(message)s')

    try:
        args.func(args)
    except WordcaError as e:
        logger.debug("Command failed", exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(1)


if __name__ == '__main__':
    main()
