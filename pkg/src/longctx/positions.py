"""Context-window extension strategies that reorganize or interpolate positions.

Grouped/recurrent position reuse, linear interpolation of learned position
tables, NTK frequency rescaling, SelfExtend relative-position remapping, and
the inference-time attention-logit scaling applied alongside them. Every
function here is pure; the encoder consumes these to build its per-token
position assignment.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError, DimensionError, PositionError

ROPE_BASE = 10000.0

# lambda per scaling factor, as published for the plug-and-play runs
NTK_LAMBDA_TABLE = {2: 3.0, 4: 5.0, 8: 10.0}

# (l_orig, l_target) -> (group size g, neighbor window w)
SE_PARAM_TABLE = {
    (512, 1024): (3, 256),
    (512, 2048): (5, 128),
    (512, 4096): (9, 64),
    (4096, 8192): (3, 2048),
    (4096, 16384): (5, 1024),
    (4096, 32768): (9, 512),
}

# published (l_orig, l_target) pairs; exhaustive range checks iterate these
EXTENSION_GRID = tuple(sorted(SE_PARAM_TABLE))


class Strategy(str, Enum):
    NONE = "none"
    PCW = "pcw"
    GP = "gp"
    RP = "rp"
    PI = "pi"
    NTK = "ntk"
    SE = "se"
    TUNED_PI = "tuned_pi"
    TUNED_RP = "tuned_rp"


# which strategies apply to which position mode
ABSOLUTE_STRATEGIES = frozenset(
    {Strategy.NONE, Strategy.PCW, Strategy.GP, Strategy.RP, Strategy.PI,
     Strategy.TUNED_PI, Strategy.TUNED_RP}
)
ROTARY_STRATEGIES = frozenset(
    {Strategy.NONE, Strategy.PCW, Strategy.GP, Strategy.PI, Strategy.NTK, Strategy.SE}
)


@dataclass(frozen=True)
class RoPEFrequencies:
    """Per-pair rotation frequencies theta_j for a head dimension."""

    base: float
    dim: int
    theta: np.ndarray  # (dim // 2,), strictly decreasing, theta[0] == 1

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2 != 0:
            raise DimensionError(f"head dimension must be positive and even, got {self.dim}")
        if self.theta.shape != (self.dim // 2,):
            raise DimensionError(
                f"expected {self.dim // 2} frequencies, got shape {self.theta.shape}"
            )


def standard_frequencies(dim: int, base: float = ROPE_BASE) -> RoPEFrequencies:
    """theta_j = base^(-2j/dim) for j in [0, dim/2)."""
    if dim < 2 or dim % 2 != 0:
        raise DimensionError(f"head dimension must be positive and even, got {dim}")
    j = np.arange(dim // 2, dtype=np.float64)
    theta = np.power(base, -2.0 * j / dim)
    return RoPEFrequencies(base=base, dim=dim, theta=theta)


def ntk_frequencies(dim: int, base: float, lam: float) -> RoPEFrequencies:
    """Frequencies with the rotary base inflated to base*lam.

    High frequencies (small j) are compressed less than low ones, spreading
    the interpolation pressure across dimensions.
    """
    if lam <= 0:
        raise ConfigurationError(f"NTK multiplier must be positive, got {lam}")
    return standard_frequencies(dim, base=base * lam)


def resolve_ntk_lambda(s: int) -> float:
    """Published multiplier for scaling factor s; falls back to s+1 off-table."""
    return NTK_LAMBDA_TABLE.get(s, float(s + 1))


def grouped_positions(pid, s: int):
    """floor(pid / s); accepts a scalar or an integer array."""
    if s < 1:
        raise ValueError(f"scaling factor must be >= 1, got {s}")
    if np.min(pid) < 0:
        raise ValueError("position ids must be non-negative")
    return pid // s


def recurrent_positions(pid, l_orig: int):
    """pid mod l_orig; accepts a scalar or an integer array."""
    if l_orig < 1:
        raise ValueError(f"original context must be >= 1, got {l_orig}")
    if np.min(pid) < 0:
        raise ValueError("position ids must be non-negative")
    return pid % l_orig


@dataclass(frozen=True)
class PositionEmbeddingMatrix:
    """Learned position rows plus a per-row frozen flag."""

    rows: np.ndarray  # (L, d) float64
    frozen: np.ndarray  # (L,) bool, True = not trainable

    def __post_init__(self):
        if self.rows.ndim != 2:
            raise DimensionError(f"rows must be 2-D, got shape {self.rows.shape}")
        if self.frozen.shape != (self.rows.shape[0],):
            raise DimensionError("frozen flags must have one entry per row")

    def __len__(self) -> int:
        return self.rows.shape[0]


def build_interpolated_matrix(matrix, s: int) -> PositionEmbeddingMatrix:
    """Extend a position table to l_orig*s rows by linear interpolation.

    Row i*s is the original row i, copied bitwise and flagged frozen. Rows
    between anchors i*s and (i+1)*s are the convex combination of the two
    anchors; rows past the last anchor repeat it (there is no right anchor
    to interpolate toward).
    """
    rows = matrix.rows if isinstance(matrix, PositionEmbeddingMatrix) else np.asarray(matrix, dtype=np.float64)
    if rows.ndim != 2:
        raise DimensionError(f"position table must be 2-D, got shape {rows.shape}")
    if s < 1:
        raise ConfigurationError(f"scaling factor must be >= 1, got {s}")
    l_orig = rows.shape[0]
    l_target = l_orig * s

    idx = np.arange(l_target)
    left = idx // s
    frac = (idx % s).astype(np.float64) / s
    right = np.minimum(left + 1, l_orig - 1)
    out = (1.0 - frac)[:, None] * rows[left] + frac[:, None] * rows[right]

    anchor = idx % s == 0
    out[anchor] = rows  # exact copies, not recomputed blends
    tail = left >= l_orig - 1
    out[tail & ~anchor] = rows[l_orig - 1]

    return PositionEmbeddingMatrix(rows=out, frozen=anchor)


def pi_position_map(token_index: int, input_len: int, spec: "ExtensionSpec") -> int:
    """Row index into the interpolated table for one token.

    Short inputs (within the original window) step through the anchor rows
    {0, s, 2s, ...} so behavior matches the unextended model exactly; longer
    inputs use the table densely.
    """
    if token_index >= spec.l_target:
        raise PositionError(
            f"token index {token_index} outside target window {spec.l_target}"
        )
    if not 0 <= token_index < input_len <= spec.l_target:
        raise ValueError(
            f"need 0 <= token_index < input_len <= l_target, "
            f"got index {token_index}, len {input_len}, target {spec.l_target}"
        )
    if input_len <= spec.l_orig:
        return token_index * spec.scale
    return token_index


def self_extend_relpos(i: int, j: int, g: int, w: int) -> int:
    """Remapped relative position between query i and key j.

    Exact within the neighbor window w; outside it, the excess distance is
    floor-grouped by g so the result never leaves the trained range.
    """
    if g < 1:
        raise ConfigurationError(f"group size must be >= 1, got {g}")
    if w < 0:
        raise ConfigurationError(f"neighbor window must be >= 0, got {w}")
    delta = i - j
    if abs(delta) <= w:
        return delta
    sign = 1 if delta > 0 else -1
    return sign * (w + (abs(delta) - w) // g)


def se_remap_deltas(delta: np.ndarray, g: int, w: int) -> np.ndarray:
    """Vectorized self_extend_relpos over an array of i-j deltas."""
    if g < 1:
        raise ConfigurationError(f"group size must be >= 1, got {g}")
    if w < 0:
        raise ConfigurationError(f"neighbor window must be >= 0, got {w}")
    delta = np.asarray(delta, dtype=np.int64)
    mag = np.abs(delta)
    grouped = w + (mag - w) // g
    return np.where(mag <= w, delta, np.sign(delta) * grouped)


def max_se_relpos(l_target: int, g: int, w: int) -> int:
    """Largest remapped |relative position| reachable in an l_target window."""
    if l_target < 1:
        raise ValueError(f"l_target must be >= 1, got {l_target}")
    return self_extend_relpos(l_target - 1, 0, g, w)


def se_params_feasible(l_orig: int, l_target: int, g: int, w: int) -> bool:
    """True when every remapped relative position stays within [-(l_orig-1), l_orig-1]."""
    return max_se_relpos(l_target, g, w) <= l_orig - 1


def resolve_se_params(l_orig: int, l_target: int) -> tuple[int, int]:
    """Published (g, w) when available, else the smallest feasible g with w = l_orig/8."""
    key = (l_orig, l_target)
    if key in SE_PARAM_TABLE:
        return SE_PARAM_TABLE[key]
    w = l_orig // 8
    for g in range(1, max(l_target, 2)):
        if se_params_feasible(l_orig, l_target, g, w):
            return g, w
    raise ConfigurationError(
        f"no feasible SelfExtend parameters for {l_orig} -> {l_target} with window {w}"
    )


def attention_scale(n: int, l_orig: int) -> float:
    """Length-dependent multiplier for pre-softmax attention logits.

    max(1, log n / log l_orig): identity within the trained window, growing
    logarithmically beyond it to keep attention entropy roughly stable.
    """
    if n < 1:
        raise ValueError(f"sequence length must be >= 1, got {n}")
    if l_orig < 2:
        raise ValueError(f"original context must be >= 2, got {l_orig}")
    return max(1.0, math.log(n) / math.log(l_orig))


@dataclass
class ExtensionSpec:
    """One extension strategy plus its parameters; the switchboard for encode().

    The scaling factor is always recomputed from (l_orig, l_target), never
    trusted from input. Optional parameters left as None are resolved from
    the published table (or its documented fallback) at encode time.
    """

    strategy: Strategy
    l_orig: int
    l_target: int | None = None
    ntk_lambda: float | None = None
    group_size: int | None = None
    window: int | None = None

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        if self.l_orig < 1:
            raise ConfigurationError(f"l_orig must be >= 1, got {self.l_orig}")
        if self.l_target is None:
            self.l_target = self.l_orig
        if self.strategy is Strategy.NONE and self.l_target != self.l_orig:
            raise ConfigurationError("strategy 'none' cannot change the context window")
        if self.l_target < self.l_orig:
            raise ConfigurationError(
                f"l_target {self.l_target} must be >= l_orig {self.l_orig}"
            )
        if self.ntk_lambda is not None and self.ntk_lambda <= 0:
            raise ConfigurationError(f"NTK multiplier must be positive, got {self.ntk_lambda}")
        if self.group_size is not None and self.group_size < 1:
            raise ConfigurationError(f"group size must be >= 1, got {self.group_size}")
        if self.window is not None and self.window < 0:
            raise ConfigurationError(f"neighbor window must be >= 0, got {self.window}")

    @property
    def scale(self) -> int:
        return math.ceil(self.l_target / self.l_orig)

    @classmethod
    def none(cls, l_orig: int) -> "ExtensionSpec":
        return cls(strategy=Strategy.NONE, l_orig=l_orig)


@dataclass(frozen=True)
class ResolvedExtension:
    """ExtensionSpec with every optional parameter filled in for one model mode."""

    spec: ExtensionSpec
    scale: int
    ntk_lambda: float | None
    group_size: int | None
    window: int | None
    notes: tuple[str, ...]

    @property
    def strategy(self) -> Strategy:
        return self.spec.strategy


def resolve_extension(spec: ExtensionSpec, position_mode: str) -> ResolvedExtension:
    """Validate a spec against a position mode and fill in strategy parameters.

    Fails fast (before any encoding) on mode/strategy mismatches and on
    infeasible SelfExtend parameters.
    """
    allowed = ABSOLUTE_STRATEGIES if position_mode == "absolute" else ROTARY_STRATEGIES
    if spec.strategy not in allowed:
        raise ConfigurationError(
            f"strategy {spec.strategy.value} does not apply to {position_mode}-mode models"
        )
    s = spec.scale
    notes: list[str] = []
    ntk_lambda = group_size = window = None

    if spec.strategy is Strategy.NTK:
        if spec.ntk_lambda is None:
            ntk_lambda = resolve_ntk_lambda(s)
            source = "table" if s in NTK_LAMBDA_TABLE else "fallback s+1"
            notes.append(f"ntk lambda {ntk_lambda:g} resolved via {source}")
        else:
            ntk_lambda = spec.ntk_lambda
        if ntk_lambda <= s:
            warnings.warn(
                f"NTK multiplier {ntk_lambda:g} should be slightly greater than "
                f"the scaling factor {s}",
                stacklevel=2,
            )

    if spec.strategy is Strategy.SE:
        if spec.group_size is None or spec.window is None:
            group_size, window = resolve_se_params(spec.l_orig, spec.l_target)
            source = "table" if (spec.l_orig, spec.l_target) in SE_PARAM_TABLE else "fallback w=l_orig/8"
            notes.append(f"se params (g={group_size}, w={window}) resolved via {source}")
        else:
            group_size, window = spec.group_size, spec.window
        if not se_params_feasible(spec.l_orig, spec.l_target, group_size, window):
            raise ConfigurationError(
                f"SelfExtend (g={group_size}, w={window}) infeasible for "
                f"{spec.l_orig} -> {spec.l_target}: max remapped relative position "
                f"{max_se_relpos(spec.l_target, group_size, window)} exceeds {spec.l_orig - 1}"
            )

    return ResolvedExtension(
        spec=spec, scale=s, ntk_lambda=ntk_lambda, group_size=group_size,
        window=window, notes=tuple(notes),
    )
