"""Bit-accurate simulation of fixed-point and block-floating-point grids.

Quantized values are ordinary float64 numbers constrained to lie on a grid;
no bit packing happens here.  A fixed-point grid is described by a word
width W and a fractional width F: the gap between neighbours is
``delta = 2**-F``, the largest representable value is
``2**(W-F-1) - 2**-F`` and the smallest is ``-2**(W-F-1)``.  Block
floating point keeps one shared power-of-two scale per block of elements
and a W-bit signed mantissa word per element.

Stochastic rounding draws exactly one uniform per element, in row-major
element order, so any seeded run replays bit-for-bit.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

__all__ = [
    "RoundingMode",
    "BlockAssignment",
    "FixedPointFormat",
    "BlockFloatFormat",
    "QuantizerSpec",
    "RngStream",
    "Grid",
    "RoundSplit",
    "fp_grid",
    "round_prob",
    "quantize_fixed",
    "shared_exponent",
    "partition_blocks",
    "quantize_bfp",
]


class RoundingMode(str, Enum):
    STOCHASTIC = "stochastic"
    NEAREST = "nearest"


class BlockAssignment(str, Enum):
    BIG_BLOCK = "big"        # one shared exponent per tensor
    SMALL_BLOCK = "small"    # one per matrix row; one per entire vector
    SCALAR_GRID = "scalar"   # fixed-point: a single global grid, no blocks


class RngStream:
    """Deterministic PCG64-backed stream of variates.

    Identical (algorithm, seed) pairs replay identical draws.  ``position``
    counts variates handed out, which together with the row-major fill
    order of the returned arrays pins down replayability of stochastic
    rounding (one uniform per element).
    """

    algorithm = "pcg64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.position = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniforms(self, n: int) -> np.ndarray:
        """n iid draws from U[0, 1), row-major order."""
        self.position += int(n)
        return self._gen.random(int(n))

    def normals(self, n: int) -> np.ndarray:
        """n iid standard-normal draws (ziggurat transform of the stream)."""
        self.position += int(n)
        return self._gen.standard_normal(int(n))

    def integers(self, lo: int, hi: int, n: int = 1) -> np.ndarray:
        """n iid integers in [lo, hi)."""
        self.position += int(n)
        return self._gen.integers(lo, hi, size=int(n))

    def permutation(self, n: int) -> np.ndarray:
        self.position += int(n)
        return self._gen.permutation(int(n))

    @classmethod
    def derive(cls, root_seed: int, *labels: object) -> "RngStream":
        """Child stream keyed by (root_seed, labels).

        Streams for distinct label tuples are statistically independent,
        so adding a new consumer never perturbs existing ones.
        """
        material = [int(root_seed) & 0xFFFFFFFFFFFFFFFF]
        for label in labels:
            digest = hashlib.sha256(str(label).encode("utf-8")).digest()
            material.append(int.from_bytes(digest[:8], "little"))
        seq = np.random.SeedSequence(material)
        stream = cls.__new__(cls)
        stream.seed = int(root_seed)
        stream.position = 0
        stream._gen = np.random.Generator(np.random.PCG64(seq))
        return stream

    def __repr__(self) -> str:
        return f"RngStream(algorithm={self.algorithm!r}, seed={self.seed}, position={self.position})"


@dataclass(frozen=True)
class FixedPointFormat:
    """W-bit word with F fractional bits (two's-complement style range)."""

    word_bits: int
    frac_bits: int

    def __post_init__(self):
        if self.word_bits < 2:
            raise ValueError(f"word_bits must be >= 2, got {self.word_bits}")
        if not 0 <= self.frac_bits <= self.word_bits - 1:
            raise ValueError(
                f"frac_bits must be in [0, word_bits-1], got {self.frac_bits}"
            )

    @property
    def delta(self) -> float:
        return math.ldexp(1.0, -self.frac_bits)

    @property
    def lo(self) -> float:
        return -math.ldexp(1.0, self.word_bits - self.frac_bits - 1)

    @property
    def hi(self) -> float:
        return math.ldexp(1.0, self.word_bits - self.frac_bits - 1) - self.delta


@dataclass(frozen=True)
class BlockFloatFormat:
    """Per-element W-bit mantissa word plus a shared exponent field."""

    word_bits: int
    exp_bits: int

    def __post_init__(self):
        if self.word_bits < 2:
            raise ValueError(f"word_bits must be >= 2, got {self.word_bits}")
        if self.exp_bits < 1:
            raise ValueError(f"exp_bits must be >= 1, got {self.exp_bits}")

    @property
    def exp_lo(self) -> int:
        return -(1 << (self.exp_bits - 1))

    @property
    def exp_hi(self) -> int:
        return (1 << (self.exp_bits - 1)) - 1


class Grid(NamedTuple):
    delta: float
    lo: float
    hi: float


class RoundSplit(NamedTuple):
    floor_val: float
    ceil_val: float
    p_ceil: float


def fp_grid(fmt: FixedPointFormat) -> Grid:
    """Gap and clip limits of a fixed-point format.

    (hi - lo) / delta == 2**W - 1 exactly.
    """
    return Grid(fmt.delta, fmt.lo, fmt.hi)


def round_prob(w: float, delta: float) -> RoundSplit:
    """Adjacent grid points of w and the probability of rounding up.

    Exposed so tests can check empirical rounding frequencies against the
    exact split.  No clipping is applied here.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if not math.isfinite(w):
        raise ValueError("non-finite input")
    z = w / delta
    f = math.floor(z)
    frac = z - f
    if frac == 0.0:
        return RoundSplit(w, w, 0.0)
    return RoundSplit(f * delta, (f + 1) * delta, frac)


def _require_finite(x: np.ndarray) -> None:
    if not np.isfinite(x).all():
        raise ValueError("non-finite input")


def _round_to_grid(
    x: np.ndarray,
    delta,
    lo,
    hi,
    mode: RoundingMode,
    rng: RngStream | None,
) -> np.ndarray:
    """Round x onto {k*delta} and clip to [lo, hi].

    delta/lo/hi may be scalars or arrays broadcastable against x (per-block
    grids).  Clipping each rounding branch separately, as the update rule
    is written, is equivalent to clipping the rounded value because the
    clip is monotone.
    """
    z = x / delta
    if mode == RoundingMode.STOCHASTIC:
        if rng is None:
            raise ValueError("stochastic rounding requires an RngStream")
        k = np.floor(z)
        u = rng.uniforms(x.size).reshape(x.shape)
        k += u < (z - k)  # ceil with probability z - floor(z); exact values never move
    else:
        k = np.rint(z)  # ties to even grid index
    return np.clip(k * delta, lo, hi)


def quantize_fixed(
    x: np.ndarray,
    fmt: FixedPointFormat,
    mode: RoundingMode = RoundingMode.STOCHASTIC,
    rng: RngStream | None = None,
) -> np.ndarray:
    """Quantize onto the fixed-point grid of fmt.

    Stochastic mode takes the lower neighbour with probability
    ``ceil(x/delta) - x/delta`` and the upper one otherwise, each clipped
    to [lo, hi]; nearest mode rounds half to even.  Consumes one uniform
    per element in row-major order.
    """
    x = np.asarray(x, dtype=np.float64)
    _require_finite(x)
    g = fp_grid(fmt)
    return _round_to_grid(x, g.delta, g.lo, g.hi, mode, rng)


def shared_exponent(block: np.ndarray, exp_bits: int) -> int:
    """Clipped floor of log2 of the block's largest magnitude.

    Uses exact binary-exponent extraction (frexp), so powers of two are
    handled bit-exactly.  An all-zero block returns the lower clip bound,
    which makes zero blocks round-trip.
    """
    block = np.asarray(block, dtype=np.float64)
    if block.size == 0:
        raise ValueError("empty block")
    _require_finite(block)
    lo = -(1 << (exp_bits - 1))
    hi = (1 << (exp_bits - 1)) - 1
    m = float(np.max(np.abs(block)))
    if m == 0.0:
        return lo
    _, e = math.frexp(m)  # m = mant * 2**e with mant in [0.5, 1)
    return int(min(max(e - 1, lo), hi))


def partition_blocks(shape: tuple[int, ...], assignment: BlockAssignment) -> list[np.ndarray]:
    """Row-major flat index arrays, one per block; every index exactly once.

    big_block: one block for the whole tensor.  small_block: one block per
    row of a matrix, one block for an entire vector.  scalar_grid has no
    blocks and is rejected here.
    """
    shape = tuple(int(s) for s in shape)
    if assignment == BlockAssignment.SCALAR_GRID:
        raise ValueError("scalar_grid carries no block structure")
    if len(shape) not in (1, 2):
        raise ValueError(f"unsupported tensor rank {len(shape)} (need 1 or 2)")
    n = int(np.prod(shape))
    if assignment == BlockAssignment.BIG_BLOCK or len(shape) == 1:
        return [np.arange(n)]
    rows, cols = shape
    return [np.arange(r * cols, (r + 1) * cols) for r in range(rows)]


def _block_deltas(
    maxabs: np.ndarray, fmt: BlockFloatFormat, literal_exponent: bool
) -> np.ndarray:
    """Per-block quantization gap from per-block max magnitudes.

    The gap is 2**(E - W + 2) so the largest block element always fits
    below the upper clip limit 2**(E+1) - gap.  The dimensionally odd
    literal form 2**(-E + W - 2) is kept behind a flag for comparison.
    """
    mant, exp = np.frexp(maxabs)
    e_raw = exp - 1  # floor(log2 maxabs), exact; garbage where maxabs == 0
    e = np.clip(e_raw, fmt.exp_lo, fmt.exp_hi).astype(np.int64)
    if literal_exponent:
        shift = -e + fmt.word_bits - 2
    else:
        shift = e - fmt.word_bits + 2
    # keep the gap a normal float so x / gap stays finite even for blocks
    # made entirely of subnormals
    shift = np.maximum(shift, -1022)
    return np.ldexp(1.0, shift.astype(np.int32))


def quantize_bfp(
    t: np.ndarray,
    fmt: BlockFloatFormat,
    assignment: BlockAssignment = BlockAssignment.BIG_BLOCK,
    mode: RoundingMode = RoundingMode.STOCHASTIC,
    rng: RngStream | None = None,
    literal_exponent: bool = False,
) -> np.ndarray:
    """Quantize a tensor onto per-block grids with a shared exponent each.

    Per block: E = shared_exponent, gap = 2**(E-W+2), symmetric limits
    +-(2**(W-1)-1)*gap, then elementwise rounding exactly as in the
    fixed-point rule.  The block's largest magnitude is below 2**(E+1) =
    (limit + gap) by construction, so it is never clipped.  Output shape
    equals input shape; all-zero blocks stay exactly zero.
    """
    t = np.asarray(t, dtype=np.float64)
    _require_finite(t)
    if t.ndim not in (1, 2):
        raise ValueError(f"unsupported tensor rank {t.ndim} (need 1 or 2)")

    if assignment == BlockAssignment.SMALL_BLOCK and t.ndim == 2:
        maxabs = np.max(np.abs(t), axis=1, keepdims=True)  # one block per row
    else:
        maxabs = np.max(np.abs(t)).reshape((1,) * t.ndim)

    delta = _block_deltas(maxabs, fmt, literal_exponent)
    half = 1 << (fmt.word_bits - 1)
    # symmetric limits: the extra negative code -2**(W-1)*gap is excluded,
    # otherwise an in-range element can round onto it, the re-derived
    # exponent grows by one, and quantization stops being idempotent
    out = _round_to_grid(t, delta, -(half - 1) * delta, (half - 1) * delta, mode, rng)
    # zero blocks would otherwise divide 0 by a (possibly underflowed) gap
    if (maxabs == 0.0).any():
        out = np.where(np.broadcast_to(maxabs == 0.0, t.shape), 0.0, out)
    return out


@dataclass(frozen=True)
class QuantizerSpec:
    """Named, reusable quantization policy.

    kind is one of "identity", "fixed" (scalar fixed-point grid) or "bfp"
    (block floating point with a block assignment).  Instances are pure
    functions of (input, RNG state) and serve as the weight / activation /
    gradient / error / momentum / average quantizers of a training run.
    """

    kind: str = "identity"
    fixed: FixedPointFormat | None = None
    bfp: BlockFloatFormat | None = None
    assignment: BlockAssignment = BlockAssignment.SCALAR_GRID
    mode: RoundingMode = RoundingMode.STOCHASTIC
    literal_exponent: bool = False

    def __post_init__(self):
        if self.kind not in ("identity", "fixed", "bfp"):
            raise ValueError(f"unknown quantizer kind {self.kind!r}")
        if self.kind == "fixed" and self.fixed is None:
            raise ValueError("fixed quantizer needs a FixedPointFormat")
        if self.kind == "bfp":
            if self.bfp is None:
                raise ValueError("bfp quantizer needs a BlockFloatFormat")
            if self.assignment == BlockAssignment.SCALAR_GRID:
                raise ValueError("bfp quantizer needs a block assignment")

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    def apply(self, x: np.ndarray, rng: RngStream | None = None) -> np.ndarray:
        if self.kind == "identity":
            return x
        if self.kind == "fixed":
            return quantize_fixed(x, self.fixed, self.mode, rng)
        return quantize_bfp(
            x, self.bfp, self.assignment, self.mode, rng, self.literal_exponent
        )

    @classmethod
    def identity(cls) -> "QuantizerSpec":
        return cls()

    @classmethod
    def fixed_point(
        cls, word: int, frac: int, mode: RoundingMode = RoundingMode.STOCHASTIC
    ) -> "QuantizerSpec":
        return cls(kind="fixed", fixed=FixedPointFormat(word, frac), mode=mode)

    @classmethod
    def block_float(
        cls,
        word: int,
        exp: int,
        assignment: BlockAssignment = BlockAssignment.SMALL_BLOCK,
        mode: RoundingMode = RoundingMode.STOCHASTIC,
        literal_exponent: bool = False,
    ) -> "QuantizerSpec":
        return cls(
            kind="bfp",
            bfp=BlockFloatFormat(word, exp),
            assignment=assignment,
            mode=mode,
            literal_exponent=literal_exponent,
        )

    def to_dict(self) -> dict:
        if self.kind == "identity":
            return {"kind": "identity"}
        if self.kind == "fixed":
            return {
                "kind": "fixed",
                "word": self.fixed.word_bits,
                "frac": self.fixed.frac_bits,
                "round": self.mode.value,
            }
        d = {
            "kind": "bfp",
            "word": self.bfp.word_bits,
            "exp": self.bfp.exp_bits,
            "block": self.assignment.value,
            "round": self.mode.value,
        }
        if self.literal_exponent:
            d["literal_exponent"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizerSpec":
        kind = d.get("kind", "identity")
        if kind == "identity":
            return cls.identity()
        mode = RoundingMode(d.get("round", "stochastic"))
        if kind == "fixed":
            return cls.fixed_point(int(d["word"]), int(d["frac"]), mode)
        if kind == "bfp":
            return cls.block_float(
                int(d["word"]),
                int(d["exp"]),
                BlockAssignment(d.get("block", "small")),
                mode,
                bool(d.get("literal_exponent", False)),
            )
        raise ValueError(f"unknown quantizer kind {kind!r}")
