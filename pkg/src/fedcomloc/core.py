"""Flat parameter vectors and deterministic random-number streams.

Model parameters, gradients, and control variates are all plain 1-D float64
arrays of a fixed length d; every vector op here assumes (and checks) matching
lengths.  Randomness is organized as independent sub-streams derived from a
single run seed, so that simulated actors (server, each client) own their own
reproducible generators.
"""

from __future__ import annotations

import hashlib

import numpy as np

ParamVector = np.ndarray


def as_param_vector(values) -> ParamVector:
    """Coerce to the canonical 1-D float64 layout."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"parameter vector must be 1-D, got shape {x.shape}")
    return x


def axpy(a: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """Return a*x + y componentwise."""
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if not np.isfinite(a):
        raise ValueError(f"scale must be finite, got {a!r}")
    return a * x + y


def l2_norm(x: ParamVector) -> float:
    """Euclidean norm of x."""
    return float(np.linalg.norm(x))


def derive_stream(seed: int, label: str) -> np.random.Generator:
    """Deterministic sub-stream keyed by (seed, label).

    The pair is hashed into the key of a counter-based generator, so equal
    pairs replay the same sequence on any platform and distinct labels give
    statistically independent streams.  Per-actor labels follow the
    "role/client-<i>" convention.
    """
    digest = hashlib.sha256(f"{seed}|{label}".encode()).digest()
    key = np.frombuffer(digest[:16], dtype="<u8")
    return np.random.Generator(np.random.Philox(key=key))
