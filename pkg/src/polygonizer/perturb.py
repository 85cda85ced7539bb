"""Input perturbations for robustness evaluation: erase, downsample, rotate.

Erase and downsample leave the ground-truth ring untouched (the object is
still where it was); rotation transforms image and ring by the same map.
Each perturbed sample draws from an RNG stream seeded by (spec seed, sample
index), so evaluation order cannot change results. The identity settings
(erase 0.0, downsample 1, rotate 0) return the input unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sklearn.base import BaseEstimator, TransformerMixin

from .geometry import PolygonRing, rotate_ring

KINDS = ("erase", "downsample", "rotate")


@dataclass(frozen=True)
class PerturbationSpec:
    """A named perturbation at a given level.

    kind='erase': level is the fraction of pixels to mask, in [0, 1].
    kind='downsample': level is the integer pooling factor (must divide D).
    kind='rotate': level is the rotation angle in degrees.
    """

    kind: str
    level: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "erase" and not 0.0 <= self.level <= 1.0:
            raise ValueError("erase fraction must be in [0, 1]")
        if self.kind == "downsample":
            if self.level != int(self.level) or self.level < 1:
                raise ValueError("downsample factor must be a positive integer")


def erase(image: np.ndarray, fraction: float, rng: np.random.Generator, fill=None) -> np.ndarray:
    """Mask random rectangles until at least ``fraction`` of pixels are erased.

    Rectangle aspect ratios are drawn from [0.3, 3.3] and each rectangle
    covers at most 1% of the image, so the total erased fraction lands in
    [fraction, fraction + 0.01]. ``fill`` is a per-channel value (defaults
    to the image's own per-channel mean).
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    image = np.asarray(image)
    out = image.copy()
    if fraction == 0.0:
        return out
    _, h, w = image.shape
    total = h * w
    need = math.ceil(fraction * total)
    if fill is None:
        fill = image.mean(axis=(1, 2))
    fill = np.broadcast_to(np.asarray(fill, dtype=image.dtype), (3,))

    max_area = max(int(0.01 * total), 1)
    erased = np.zeros((h, w), dtype=bool)
    count = 0
    while count < need:
        area = rng.uniform(0.25, 1.0) * max_area
        aspect = rng.uniform(0.3, 3.3)
        rh = int(np.clip(round(math.sqrt(area * aspect)), 1, h))
        rw = int(np.clip(round(area / rh), 1, w))
        while rh * rw > max_area:  # rounding can overshoot the per-rectangle cap
            if rw > 1:
                rw -= 1
            else:
                rh -= 1
        y0 = int(rng.integers(0, h - rh + 1))
        x0 = int(rng.integers(0, w - rw + 1))
        patch = erased[y0 : y0 + rh, x0 : x0 + rw]
        count += int(rh * rw - patch.sum())
        patch[:] = True
        out[:, y0 : y0 + rh, x0 : x0 + rw] = fill[:, None, None]
    return out


def downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool by ``factor`` then nearest-upsample back to the original size."""
    image = np.asarray(image)
    factor = int(factor)
    if factor == 1:
        return image.copy()
    c, h, w = image.shape
    if h % factor or w % factor:
        raise ValueError(f"factor {factor} does not divide image size {h}x{w}")
    pooled = image.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))
    return np.repeat(np.repeat(pooled, factor, axis=1), factor, axis=2).astype(image.dtype)


def rotate_image(image: np.ndarray, degrees: float, fill=0.0) -> np.ndarray:
    """Rotate image content by ``degrees`` counterclockwise about the image center.

    Bilinear interpolation; pixels sampled from outside the frame take
    ``fill`` (scalar or per-channel).
    """
    image = np.asarray(image)
    if degrees % 360.0 == 0.0:
        return image.copy()
    c, h, w = image.shape
    fill = np.broadcast_to(np.asarray(fill, dtype=np.float64), (c,))
    theta = math.radians(degrees)
    cos, sin = math.cos(theta), math.sin(theta)
    cx, cy = w / 2.0, h / 2.0
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    # inverse map: output pixel center -> source location (rotate by -theta)
    dx, dy = xs - cx, ys - cy
    sx = cx + cos * dx + sin * dy
    sy = cy - sin * dx + cos * dy

    u = sx - 0.5
    v = sy - 0.5
    u0 = np.floor(u).astype(np.intp)
    v0 = np.floor(v).astype(np.intp)
    fu = u - u0
    fv = v - v0
    out = np.zeros((c, h, w), dtype=np.float64)
    for dv, du, wgt in ((0, 0, (1 - fv) * (1 - fu)), (0, 1, (1 - fv) * fu),
                        (1, 0, fv * (1 - fu)), (1, 1, fv * fu)):
        yy = v0 + dv
        xx = u0 + du
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        yc = np.clip(yy, 0, h - 1)
        xc = np.clip(xx, 0, w - 1)
        for ch in range(c):
            vals = np.where(inside, image[ch, yc, xc], fill[ch])
            out[ch] += wgt * vals
    return out.astype(image.dtype)


def rotate_sample(image: np.ndarray, ring: PolygonRing, degrees: float, fill=0.0):
    """Rotate image and ring by the same transform; returns (image, ring, clipped).

    ``clipped`` is True when any rotated vertex leaves the image frame.
    """
    image = np.asarray(image)
    _, h, w = image.shape
    new_image = rotate_image(image, degrees, fill=fill)
    new_ring = rotate_ring(ring, degrees, center=(w / 2.0, h / 2.0))
    v = new_ring.vertices
    clipped = bool((v < 0).any() or (v[:, 0] > w).any() or (v[:, 1] > h).any())
    return new_image, new_ring, clipped


def apply_spec(spec: PerturbationSpec, image: np.ndarray, ring: PolygonRing, sample_index: int, fill=None):
    """Apply one perturbation to one sample; returns (image, ring)."""
    if spec.kind == "erase":
        rng = np.random.default_rng([spec.seed, sample_index])
        return erase(image, spec.level, rng, fill=fill), ring
    if spec.kind == "downsample":
        return downsample(image, int(spec.level)), ring
    new_image, new_ring, _ = rotate_sample(image, ring, spec.level, fill=0.0 if fill is None else fill)
    return new_image, new_ring


def dataset_mean(images) -> np.ndarray:
    """Per-channel mean over a collection of [3, H, W] images."""
    acc = np.zeros(3, dtype=np.float64)
    n = 0
    for im in images:
        acc += np.asarray(im, dtype=np.float64).mean(axis=(1, 2))
        n += 1
    return (acc / max(n, 1)).astype(np.float32)


def sweep(samples, params, config, specs, *, resolution=256, max_seq_len=None, progress=None):
    """Evaluate the model under each perturbation spec.

    Returns a list of (spec, MetricsReport). The erase fill is the dataset's
    per-channel mean, computed once over the clean images.
    """
    from .metrics import EvalPair, report
    from .network import greedy_infer
    from .parallel import map_samples

    fill = dataset_mean(s.image for s in samples)
    results = []
    for spec in specs:
        def eval_one(item):
            index, sample = item
            image, gt = apply_spec(spec, sample.image, sample.ring, index, fill=fill)
            res = greedy_infer(params, config, image, max_seq_len=max_seq_len)
            return EvalPair(pred=res.ring, gt=gt, sample_id=sample.id)
        pairs = map_samples(eval_one, list(enumerate(samples)))
        rep = report(pairs, resolution=resolution,
                     config={"kind": spec.kind, "level": spec.level, "seed": spec.seed})
        results.append((spec, rep))
        if progress:
            progress(spec, rep)
    return results


class ErasePixels(TransformerMixin, BaseEstimator):
    """Transformer that masks a random fraction of pixels with the fitted channel mean."""

    def __init__(self, fraction=0.1, seed=0):
        self.fraction = fraction
        self.seed = seed

    def fit(self, X, y=None):
        self.fill_ = dataset_mean(X)
        return self

    def transform(self, X):
        fill = getattr(self, "fill_", None)
        return np.stack([
            erase(x, self.fraction, np.random.default_rng([self.seed, i]), fill=fill)
            for i, x in enumerate(X)
        ])


class DownsampleResolution(TransformerMixin, BaseEstimator):
    """Transformer that average-pools and re-expands each image by a fixed factor."""

    def __init__(self, factor=2):
        self.factor = factor

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return np.stack([downsample(x, self.factor) for x in X])


class RotateScene(TransformerMixin, BaseEstimator):
    """Transformer that rotates images about their center (labels must be rotated separately)."""

    def __init__(self, degrees=0.0, fill=0.0):
        self.degrees = degrees
        self.fill = fill

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return np.stack([rotate_image(x, self.degrees, fill=self.fill) for x in X])
