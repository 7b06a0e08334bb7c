"""Multi-class log-odds vectors and their categorical-distribution duals.

A map cell's class distribution over C+1 categories (component 0 = free
space) is stored as the vector of log probability ratios against free space.
On normalized vectors (component 0 equal to 0) the softmax and the
log-odds transform are mutually inverse bijections.

All functions accept a single vector or a batch with vectors along the last
axis, and operate in float64.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError

# Component-wise floor applied to probabilities before any log transform.
PROB_FLOOR = 1e-6

# Magnitude clamp applied to log-odds after every update; keeps exp() finite
# and bounds the dynamic range of serialized payloads.
LOG_ODDS_LIMIT = 50.0


def _check_finite(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} must be finite, got {x!r}")
    return x


def softmax(h) -> np.ndarray:
    """Categorical probabilities exp(h[c]) / sum_k exp(h[k]), overflow-safe."""
    h = _check_finite(h, "log-odds vector")
    z = h - np.max(h, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(h) -> np.ndarray:
    """log of softmax(h), computed without forming the probabilities."""
    h = _check_finite(h, "log-odds vector")
    z = h - np.max(h, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def normalize(h) -> np.ndarray:
    """Shift h so component 0 is exactly 0; softmax is invariant to the shift."""
    h = _check_finite(h, "log-odds vector")
    return h - h[..., :1]


def from_distribution(p) -> np.ndarray:
    """Log-odds vector ln(p[c]/p[0]) of a categorical distribution.

    Probabilities are floored at PROB_FLOOR and renormalized first, so the
    result is always finite.  The output is normalized (component 0 == 0).
    """
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise InvalidInputError(f"distribution must be finite, got {p!r}")
    p = np.maximum(p, PROB_FLOOR)
    if np.any(p <= 0):
        raise InvalidInputError("distribution has non-positive mass after flooring")
    p = p / np.sum(p, axis=-1, keepdims=True)
    logp = np.log(p)
    return logp - logp[..., :1]


def squared_distance(h_a, h_b) -> float:
    """Squared Euclidean distance between two log-odds vectors."""
    a = np.asarray(h_a, dtype=np.float64)
    b = np.asarray(h_b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sum(d * d))


def clamp(h, limit: float = LOG_ODDS_LIMIT) -> np.ndarray:
    """Clip each component into [-limit, limit]."""
    return np.clip(np.asarray(h, dtype=np.float64), -limit, limit)
