"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .geometry import PolygonRing


def check_image_batch(X, grid_size: int | None = None) -> np.ndarray:
    """Coerce X to a float32 [N, 3, D, D] batch and validate it.

    Accepts an array of that shape or a sequence of [3, D, D] images.
    Values must be finite and inside [0, 1] (small float slack allowed).
    """
    if not isinstance(X, np.ndarray):
        X = np.stack([np.asarray(x) for x in X])
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != 3 or X.shape[2] != X.shape[3]:
        raise ValueError(f"expected images of shape (n, 3, d, d), got {X.shape}")
    if grid_size is not None and X.shape[2] != grid_size:
        raise ValueError(f"expected {grid_size}x{grid_size} images, got {X.shape[2]}x{X.shape[3]}")
    X = X.astype(np.float32, copy=False)
    if not np.isfinite(X).all():
        raise ValueError("images contain non-finite values")
    if X.min() < -1e-4 or X.max() > 1.0 + 1e-4:
        raise ValueError(f"pixel values outside [0, 1]: range [{X.min():.4f}, {X.max():.4f}]")
    return X


def check_rings(y, grid_size: int | None = None) -> list[PolygonRing]:
    """Coerce y to a list of rings; entries may be PolygonRing or (V, 2) arrays."""
    rings = []
    for i, item in enumerate(y):
        ring = item if isinstance(item, PolygonRing) else PolygonRing(item)
        if grid_size is not None:
            v = ring.vertices
            if v.min() < 0 or v.max() >= grid_size:
                raise ValueError(f"ring {i} has vertices outside [0, {grid_size}): "
                                 f"range [{v.min():.3f}, {v.max():.3f}]")
        rings.append(ring)
    return rings


def check_same_length(X, y) -> None:
    if len(X) != len(y):
        raise ValueError(f"X and y disagree on sample count: {len(X)} vs {len(y)}")
