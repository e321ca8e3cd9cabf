"""Enums, method presets and validation helpers for wordca.

Everything that names a matrix transformation, a coordinate system or a
counting mode lives here, together with the small helpers that translate
between the method names used in reports ("ROOT-CA", "PMI-GSVD", ...) and
the underlying transform settings.
"""

from enum import Enum


class TransformKind(Enum):
    """Matrices derived from the co-occurrence counts."""
    TTEST = "TTEST"          # Standardized residuals
    PMI = "PMI"
    PPMI = "PPMI"
    WPMI = "WPMI"            # PMI weighted by sqrt(p_i+ p_+j)
    STRATOS = "STRATOS"      # sqrt(p_ij / sqrt(p_i+ p_+j)), no centering
    POWER_CA = "POWER_CA"    # Residuals of x_ij^delta


class Weighting(Enum):
    """Weight given to a context word at distance d."""
    HARMONIC = "harmonic"    # 1/d
    UNIFORM = "uniform"      # 1


class OovMode(Enum):
    """What happens to out-of-vocabulary tokens before windowing."""
    DELETE = "delete"                # Removed, distances measured on the filtered stream
    HOLD_POSITION = "hold-position"  # Kept as gaps, distances measured on the raw stream


class CoordinateSystem(Enum):
    ALTERNATIVE = "alternative"  # u_ik * sigma_k^p
    STANDARD = "standard"        # p_i+^-1/2 * u_ik * sigma_k^p
    PRINCIPAL = "principal"      # p_i+^-1/2 * u_ik * sigma_k


class EmbeddingSide(Enum):
    TARGET = "target"    # rows, e_i
    CONTEXT = "context"  # columns, o_j


class SvdSolver(Enum):
    AUTO = "auto"      # Dense for small matrices or large k, ARPACK otherwise
    DENSE = "dense"    # LAPACK gesdd on the materialized matrix
    ARPACK = "arpack"  # Implicitly restarted Lanczos on a LinearOperator


class QuartileRule(Enum):
    LINEAR = "linear"              # Interpolate at 0.25(n-1) and 0.75(n-1)
    NEAREST_RANK = "nearest-rank"  # Order statistic at ceil(q n)


CENTERED_KINDS = (TransformKind.TTEST, TransformKind.POWER_CA)
PMI_KINDS = (TransformKind.PMI, TransformKind.PPMI, TransformKind.WPMI)

# Names for matrices used as they are, without an SVD
_MATRIX_NAMES: dict[str, tuple[TransformKind, float]] = {
    'TTEST': (TransformKind.TTEST, 1.0),
    'ROOT-TTEST': (TransformKind.POWER_CA, 0.5),
    'ROOTROOT-TTEST': (TransformKind.POWER_CA, 0.25),
    'PMI': (TransformKind.PMI, 1.0),
    'PPMI': (TransformKind.PPMI, 1.0),
    'WPMI': (TransformKind.WPMI, 1.0),
    'STRATOS-TTEST': (TransformKind.STRATOS, 1.0),
}

# Names for the SVD-based methods built on those matrices
_METHOD_NAMES: dict[str, tuple[TransformKind, float]] = {
    'RAW-CA': (TransformKind.TTEST, 1.0),
    'ROOT-CA': (TransformKind.POWER_CA, 0.5),
    'ROOTROOT-CA': (TransformKind.POWER_CA, 0.25),
    'PMI-SVD': (TransformKind.PMI, 1.0),
    'PPMI-SVD': (TransformKind.PPMI, 1.0),
    'PMI-GSVD': (TransformKind.WPMI, 1.0),
    'ROOT-CCA': (TransformKind.STRATOS, 1.0),
}

DEFAULT_DIMENSION_GRID: tuple[int, ...] = (
    2, 50, 100, 200, 300, 400, 500, 600, 700, 800, 900, 1000,
    2000, 3000, 4000, 5000, 6000, 7000, 8000, 9000, 10000,
)


def is_centered(kind: TransformKind) -> bool:
    """True for the transforms whose rows and columns sum to zero (CA residuals)."""
    return kind in CENTERED_KINDS


def normalize_method_name(name: str) -> str:
    n = name.strip().upper().replace('_', '-')
    if n == 'CA':
        return 'RAW-CA'
    if n in ('STRATOS', 'ROOT-CCA-TTEST'):
        return 'STRATOS-TTEST'
    return n


def parse_method(name: str) -> tuple[TransformKind, float, bool]:
    """Resolve a matrix or method name to its transform settings.

    Accepts the preset names ("ROOT-CA", "PPMI", "ROOTROOT-TTEST", ...) as
    well as the raw form "POWER_CA:0.3".

    Returns:
        (kind, delta, reduced) where reduced is True for SVD-based method names
    """
    n = normalize_method_name(name)
    if n in _METHOD_NAMES:
        kind, delta = _METHOD_NAMES[n]
        return kind, delta, True
    if n in _MATRIX_NAMES:
        kind, delta = _MATRIX_NAMES[n]
        return kind, delta, False
    if ':' in n:
        kind_name, delta_str = n.split(':', 1)
        kind_name = kind_name.replace('-', '_')
        try:
            kind = TransformKind(kind_name)
            delta = float(delta_str)
        except ValueError as e:
            raise ValueError(f"Unknown transform '{name}'") from e
        return kind, delta, True
    try:
        return TransformKind(n.replace('-', '_')), 1.0, True
    except ValueError as e:
        raise ValueError(f"Unknown transform '{name}'") from e


def matrix_name(kind: TransformKind, delta: float = 1.0) -> str:
    """Report name of a matrix evaluated without dimensionality reduction."""
    for name, (k, d) in _MATRIX_NAMES.items():
        if k == kind and d == delta:
            return name
    return f"POWER-TTEST({delta:g})" if kind == TransformKind.POWER_CA else kind.value


def method_name(kind: TransformKind, delta: float = 1.0) -> str:
    """Report name of the SVD-based method decomposing the given matrix."""
    if kind == TransformKind.POWER_CA and delta == 1.0:
        return 'RAW-CA'
    for name, (k, d) in _METHOD_NAMES.items():
        if k == kind and d == delta:
            return name
    return f"POWER-CA({delta:g})" if kind == TransformKind.POWER_CA else f"{kind.value}-SVD"


def dimension_grid(rank: int, grid: tuple[int, ...] = DEFAULT_DIMENSION_GRID) -> list[int]:
    """Dimensions of the grid that do not exceed the rank; the rank itself closes the grid when it falls between points."""
    if rank < 1:
        return []
    kept = [k for k in grid if k <= rank]
    if not kept or (kept[-1] < rank and rank < grid[-1]):
        kept.append(rank)
    return kept


# --- Validation helpers ---

def validate_window(window: int) -> list[str]:
    errors: list[str] = []
    if window < 1:
        errors.append(f"Window must be at least 1, got {window}")
    return errors


def validate_delta(delta: float) -> list[str]:
    errors: list[str] = []
    if not 0.0 < delta <= 1.0:
        errors.append(f"Power exponent delta must lie in (0, 1], got {delta}")
    return errors


def validate_grids(k_grid: list[int], p_grid: list[float]) -> list[str]:
    """Validate the dimension and exponent grids of an experiment.

    Returns a list of error strings if invalid.
    """
    errors: list[str] = []
    if not k_grid:
        errors.append("The k grid must not be empty")
    if not p_grid:
        errors.append("The p grid must not be empty")
    errors.extend(f"Dimension k must be at least 1, got {k}" for k in k_grid if k < 1)
    errors.extend(f"Exponent p must be non-negative, got {p}" for p in p_grid if p < 0)
    return errors
