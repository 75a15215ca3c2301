"""Lossy vector compressors and their on-the-wire bit-cost models.

Two primitives are provided: magnitude sparsification (keep the k largest
entries) and randomized norm-scaled quantization (unbiased rounding onto a
2**bits-level grid), plus their composition.  Compressed vectors stay dense
in memory; sparsity only shows up in the bit ledger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ParamVector

KINDS = ("identity", "topk", "quant", "topk_quant")


@dataclass(frozen=True)
class CompressorSpec:
    """Description of a compression operator plus its wire-cost parameters.

    density is the fraction of coordinates kept by the sparsifying kinds
    (density 0.3 keeps 30% of the parameters); bits is the grid resolution
    of the quantizing kinds.
    """

    kind: str = "identity"
    density: float = 1.0
    bits: int = 8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown compressor kind {self.kind!r}, expected one of {KINDS}")
        if not 0.0 < self.density <= 1.0:
            raise ValueError(f"density must be in (0, 1], got {self.density}")
        if not 1 <= self.bits <= 31:
            raise ValueError(f"bits must be in [1, 31], got {self.bits}")

    def k_for(self, d: int) -> int:
        """Coordinates kept at dimension d: max(1, round(density*d)), half-up."""
        return max(1, int(math.floor(self.density * d + 0.5)))


IDENTITY = CompressorSpec()


def top_k(x: ParamVector, k: int) -> ParamVector:
    """Keep the k largest-magnitude entries of x, zeroing the rest.

    Deterministic: ties keep the lowest index.  Kept entries are bit-identical
    to the input, so the result is the closest k-sparse vector to x.
    """
    d = x.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    if k == d:
        return x.copy()
    keep = np.argsort(-np.abs(x), kind="stable")[:k]
    out = np.zeros_like(x)
    out[keep] = x[keep]
    return out


def quantize(x: ParamVector, bits: int, rng: np.random.Generator) -> ParamVector:
    """Randomized rounding of x onto a norm-scaled grid with 2**bits levels.

    Component i becomes sign(x_i) * ||x|| * k/2**bits with k the floor or
    ceiling of 2**bits * |x_i|/||x||, the ceiling taken with the probability
    that makes the output unbiased.  The zero vector maps to itself without
    consuming randomness; otherwise one uniform draw is consumed per
    component, in index order.
    """
    if bits < 1:
        raise ValueError(f"bits must be >= 1, got {bits}")
    norm = np.linalg.norm(x)
    if norm == 0.0:
        return np.zeros_like(x)
    levels = float(2**bits)
    scaled = np.clip(np.abs(x) / norm, 0.0, 1.0) * levels
    low = np.floor(scaled)
    round_up = rng.random(x.shape[0]) < (scaled - low)
    grid = np.minimum(low + round_up, levels) / levels
    return norm * np.sign(x) * grid


def compose_topk_quant(x: ParamVector, k: int, bits: int, rng: np.random.Generator) -> ParamVector:
    """Sparsify to k entries, then quantize the surviving entries."""
    return quantize(top_k(x, k), bits, rng)


def compress(spec: CompressorSpec, x: ParamVector, rng: np.random.Generator | None = None) -> ParamVector:
    """Apply the operator described by spec; rng is consumed only by quantizing kinds."""
    if spec.kind == "identity":
        return x
    if spec.kind == "topk":
        return top_k(x, spec.k_for(x.shape[0]))
    if spec.kind == "quant":
        return quantize(x, spec.bits, rng)
    return compose_topk_quant(x, spec.k_for(x.shape[0]), spec.bits, rng)


def bit_cost(spec: CompressorSpec, d: int) -> int:
    """Bits on the wire for one compressed vector of dimension d.

    Values and the norm scalar cost 32 bits each, a kept index costs
    ceil(log2 d) bits, and a quantized entry costs 1 sign bit plus the grid
    bits.  Uncompressed vectors are d 32-bit floats.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    index_bits = (d - 1).bit_length()
    k = spec.k_for(d)
    if spec.kind == "identity":
        return 32 * d
    if spec.kind == "topk":
        return k * (32 + index_bits)
    if spec.kind == "quant":
        return 32 + d * (1 + spec.bits)
    return 32 + k * (1 + spec.bits + index_bits)
