"""Sinusoidal spatial encoder for patch grid coordinates.

Each axis of a 2-D grid coordinate gets half of the embedding: within an
axis block, frequency index j contributes an interleaved (sin, cos) pair
at angular rate 10000^(-4j/D).  Coordinates are patch grid indices, not
normalized positions, so the base frequency carries usable signal at desk
scale.
"""

from __future__ import annotations

import numpy as np

from .numerics import as_f64


def _rates(d: int) -> np.ndarray:
    if d % 4 != 0:
        raise ValueError(f"embedding dim must be divisible by 4, got {d}")
    j = np.arange(d // 4, dtype=np.float64)
    return 10000.0 ** (-4.0 * j / d)


def _encode_axis(c: np.ndarray, d: int) -> np.ndarray:
    """Encode scalar coordinates (N,) into the (N, D/2) axis block."""
    angles = c[:, None] * _rates(d)[None, :]
    block = np.empty((c.shape[0], d // 2))
    block[:, 0::2] = np.sin(angles)
    block[:, 1::2] = np.cos(angles)
    return block


def encode_position(coord, d: int) -> np.ndarray:
    """Embed one (x, y) grid coordinate into a length-D vector in [-1, 1]."""
    x, y = float(coord[0]), float(coord[1])
    return encode_positions(np.array([[x, y]]), d)[0]


def encode_positions(coords: np.ndarray, d: int) -> np.ndarray:
    """Vectorized form: (N, 2) grid coordinates -> (N, D) embeddings."""
    coords = as_f64(coords)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError(f"coords must be (N, 2), got {coords.shape}")
    return np.concatenate(
        [_encode_axis(coords[:, 0], d), _encode_axis(coords[:, 1], d)],
        axis=1)


def fuse(features: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
    """Element-wise sum of projected features and spatial embeddings."""
    features, embeddings = as_f64(features), as_f64(embeddings)
    if features.shape != embeddings.shape:
        raise ValueError(f"shape mismatch: features {features.shape} "
                         f"vs embeddings {embeddings.shape}")
    return features + embeddings
