"""Synthetic scene generation, dataset persistence, and COCO-style ingestion.

Synthetic samples are single rectilinear rings (a rectangle with 0-4 notched
corners, giving 4-12 vertices) rendered as a flat foreground intensity on a
flat background plus Gaussian noise. Each sample draws from its own RNG
stream seeded by (dataset seed, sample index), so generation order or
parallelism cannot change the result.

On disk a dataset is a directory of binary PPM images plus annotations.json:

    {"version": 1, "grid_size": D, "samples": [
        {"id": ..., "image": "images/<id>.ppm", "ring": [[x, y], ...],
         "provenance": "synthetic" | "ingested"}, ...]}
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .geometry import PolygonRing, DegenerateRingError, InvalidRingError, canonicalize

SCHEMA_VERSION = 1


class DatasetError(ValueError):
    """Unreadable or schema-incompatible dataset."""


@dataclass(frozen=True)
class SceneConfig:
    size: int = 64
    min_vertices: int = 4
    max_vertices: int = 12
    margin: int = 4
    rectilinear_prob: float = 1.0
    fg_range: tuple[float, float] = (0.55, 0.95)
    bg_range: tuple[float, float] = (0.05, 0.45)
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.size < 16:
            raise ValueError("size must be >= 16")
        if not (3 <= self.min_vertices <= self.max_vertices <= 12):
            raise ValueError("vertex range must satisfy 3 <= min <= max <= 12")
        if self.margin < 1 or 2 * self.margin + 8 > self.size:
            raise ValueError("margin leaves no room for a shape")
        if not 0.0 <= self.rectilinear_prob <= 1.0:
            raise ValueError("rectilinear_prob must be in [0, 1]")
        for name in ("fg_range", "bg_range"):
            lo, hi = getattr(self, name)
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi <= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class Sample:
    id: str
    image: np.ndarray  # float32 [3, D, D] in [0, 1]
    ring: PolygonRing
    provenance: str = "synthetic"


# Corner notch construction, corners walked in ring order (x0,y0)->(x1,y0)->(x1,y1)->(x0,y1).
# Each entry maps a corner to the three vertices that replace it for a notch (nw, nh).
def _notched_corner(corner: int, x0: int, y0: int, x1: int, y1: int, nw: int, nh: int):
    if corner == 0:
        return [(x0, y0 + nh), (x0 + nw, y0 + nh), (x0 + nw, y0)]
    if corner == 1:
        return [(x1 - nw, y0), (x1 - nw, y0 + nh), (x1, y0 + nh)]
    if corner == 2:
        return [(x1, y1 - nh), (x1 - nw, y1 - nh), (x1 - nw, y1)]
    return [(x0 + nw, y1), (x0 + nw, y1 - nh), (x0, y1 - nh)]


def gen_rectilinear_ring(rng: np.random.Generator, config: SceneConfig) -> PolygonRing:
    """Axis-aligned rectangle with notched corners, simple by construction.

    Vertices land on half-integer pixel coordinates (the centres of a
    size-by-size coordinate grid), so quantizing these scenes at their native
    resolution is lossless and evaluation against the stored rings measures
    the model rather than the codec.

    Shapes are deliberately wide (aspect ratio around 2:1 or more when the
    grid leaves room). An orientation-free distribution would be statistically
    unchanged by quarter-turn rotations, and rotation robustness sweeps
    against it would measure nothing; the wide prior makes orientation part
    of what the model learns.
    """
    lo, hi = config.margin, config.size - config.margin - 1
    even_counts = [v for v in range(config.min_vertices, config.max_vertices + 1) if v % 2 == 0 and v >= 4]
    if not even_counts:
        raise ValueError("no even vertex count in the configured range")
    target = int(rng.choice(even_counts))
    n_notches = (target - 4) // 2

    # every notch cut is >= 2 px and strictly less than half the span, so
    # opposite notches can never meet and no edge collapses
    min_span = 6 if n_notches else 4
    span = hi - lo
    w = int(rng.integers(max(min_span, math.ceil(0.6 * span)), span + 1))
    h = int(rng.integers(min_span, max(min_span, math.floor(0.45 * w)) + 1))
    x0 = int(rng.integers(lo, hi - w + 1))
    y0 = int(rng.integers(lo, hi - h + 1))
    x1, y1 = x0 + w, y0 + h

    corners = sorted(rng.choice(4, size=n_notches, replace=False).tolist())
    verts: list[tuple[float, float]] = []
    base = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    for c in range(4):
        if c in corners:
            nw = int(rng.integers(2, (w - 1) // 2 + 1))
            nh = int(rng.integers(2, (h - 1) // 2 + 1))
            verts.extend(_notched_corner(c, x0, y0, x1, y1, nw, nh))
        else:
            verts.append(base[c])
    ring = canonicalize(PolygonRing(np.asarray(verts, dtype=np.float64) + 0.5))
    assert len(ring) == target, f"notch construction produced {len(ring)} vertices, wanted {target}"
    return ring


def gen_star_ring(rng: np.random.Generator, config: SceneConfig) -> PolygonRing:
    """Star-shaped (hence simple) ring with a uniform vertex count in the configured range."""
    lo, hi = config.margin, config.size - config.margin
    n = int(rng.integers(config.min_vertices, config.max_vertices + 1))
    cx = rng.uniform(lo + 4, hi - 4)
    cy = rng.uniform(lo + 4, hi - 4)
    r_max = min(cx - lo, cy - lo, hi - cx, hi - cy)
    angles = np.sort(rng.uniform(0, 2 * math.pi, n))
    # keep angular gaps sane so consecutive vertices stay distinct
    while np.min(np.diff(np.concatenate([angles, [angles[0] + 2 * math.pi]]))) < 0.05:
        angles = np.sort(rng.uniform(0, 2 * math.pi, n))
    radii = rng.uniform(0.35 * r_max, r_max, n)
    verts = np.stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1)
    return canonicalize(PolygonRing(np.round(verts, 3)))


def gen_ring(rng: np.random.Generator, config: SceneConfig) -> PolygonRing:
    if config.rectilinear_prob >= 1.0 or rng.random() < config.rectilinear_prob:
        return gen_rectilinear_ring(rng, config)
    return gen_star_ring(rng, config)


def render_scene(ring: PolygonRing, config: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Render the ring's even-odd mask as fg/bg intensities plus noise, clamped to [0, 1]."""
    from .geometry import rasterize

    mask = rasterize(ring, config.size).bits
    fg = rng.uniform(*config.fg_range)
    bg = rng.uniform(*config.bg_range)
    base = np.where(mask, fg, bg)
    image = np.repeat(base[None, :, :], 3, axis=0)
    if config.noise_sigma > 0:
        image = image + rng.normal(0.0, config.noise_sigma, image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def generate_dataset(config: SceneConfig, n: int) -> list[Sample]:
    samples = []
    for i in range(n):
        rng = np.random.default_rng([config.seed, i])
        ring = gen_ring(rng, config)
        image = render_scene(ring, config, rng)
        samples.append(Sample(id=f"{i:06d}", image=image, ring=ring, provenance="synthetic"))
    return samples


# ---------------------------------------------------------------------------
# PPM (binary P6) image I/O


def write_ppm(path, image: np.ndarray) -> None:
    """Write a float [3, H, W] image in [0, 1] as binary 8-bit PPM."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected [3, H, W] image, got {image.shape}")
    _, h, w = image.shape
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary 8-bit PPM into a float32 [3, H, W] array in [0, 1]."""
    with open(path, "rb") as f:
        blob = f.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"truncated PPM header in {path}")
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise DatasetError(f"{path} is not a binary PPM (P6) file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise DatasetError(f"unsupported PPM maxval {maxval} in {path}")
    if len(blob) - pos < w * h * 3:
        raise DatasetError(f"truncated PPM pixel data in {path}")
    raw = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    return (raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32)) / 255.0


# ---------------------------------------------------------------------------
# Dataset persistence


def save_dataset(directory, samples: list[Sample], grid_size: int, config: dict | None = None) -> None:
    directory = os.fspath(directory)
    os.makedirs(os.path.join(directory, "images"), exist_ok=True)
    entries = []
    for s in samples:
        rel = f"images/{s.id}.ppm"
        write_ppm(os.path.join(directory, rel), s.image)
        entries.append({
            "id": s.id,
            "image": rel,
            "ring": [[float(x), float(y)] for x, y in s.ring.vertices],
            "provenance": s.provenance,
        })
    doc = {"version": SCHEMA_VERSION, "grid_size": grid_size, "samples": entries}
    if config is not None:
        doc["config"] = dict(config)
    with open(os.path.join(directory, "annotations.json"), "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def load_dataset(directory) -> tuple[list[Sample], int]:
    directory = os.fspath(directory)
    ann_path = os.path.join(directory, "annotations.json")
    try:
        with open(ann_path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise DatasetError(f"no annotations.json in {directory}")
    except json.JSONDecodeError as e:
        raise DatasetError(f"malformed annotations.json: {e}")
    if doc.get("version") != SCHEMA_VERSION:
        raise DatasetError(f"unsupported dataset schema version {doc.get('version')!r}")
    grid_size = int(doc["grid_size"])
    samples, missing = [], []
    for entry in doc["samples"]:
        img_path = os.path.join(directory, entry["image"])
        if not os.path.exists(img_path):
            missing.append(entry["image"])
            continue
        samples.append(Sample(
            id=str(entry["id"]),
            image=read_ppm(img_path),
            ring=PolygonRing(entry["ring"]),
            provenance=entry.get("provenance", "synthetic"),
        ))
    if missing:
        raise DatasetError(f"{len(missing)} image file(s) referenced by annotations.json are missing: "
                           + ", ".join(missing[:10]))
    return samples, grid_size


# ---------------------------------------------------------------------------
# COCO-style ingestion


def pad_to_square(image: np.ndarray, fill: float = 0.0) -> tuple[np.ndarray, tuple[int, int]]:
    """Pad [3, H, W] on the right/bottom to a square; returns (padded, (off_x, off_y)).

    The content keeps its top-left position, so polygon coordinates are
    unchanged by the pad (offsets are returned for completeness).
    """
    _, h, w = image.shape
    side = max(h, w)
    out = np.full((3, side, side), fill, dtype=image.dtype)
    out[:, :h, :w] = image
    return out, (0, 0)


def resize_nearest(image: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbour resize of [3, H, W] to [3, size, size]."""
    _, h, w = image.shape
    rows = np.minimum((np.arange(size) + 0.5) * h / size, h - 1).astype(np.intp)
    cols = np.minimum((np.arange(size) + 0.5) * w / size, w - 1).astype(np.intp)
    return image[:, rows[:, None], cols[None, :]]


@dataclass
class IngestReport:
    loaded: int = 0
    skipped_multi_part: int = 0
    skipped_missing_image: int = 0
    skipped_degenerate: int = 0
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def load_coco_subset(annotation_path, image_dir, grid_size: int, crop_margin: float = 0.1) -> tuple[list[Sample], IngestReport]:
    """Build per-object training crops from a COCO-format annotation file.

    Each single-part polygon annotation is cropped by its bounding box (plus
    a relative margin), padded to square on the right/bottom, resized to
    ``grid_size``, and the polygon mapped by the same transform. Multi-part
    or RLE segmentations and missing/unreadable images are skipped and
    counted; a malformed annotation file raises DatasetError.
    """
    try:
        with open(annotation_path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise DatasetError(f"annotation file not found: {annotation_path}")
    except json.JSONDecodeError as e:
        raise DatasetError(f"malformed annotation file: {e}")
    if not isinstance(doc, dict) or "annotations" not in doc or "images" not in doc:
        raise DatasetError("annotation file lacks 'images'/'annotations' sections")

    image_files = {im["id"]: im["file_name"] for im in doc["images"]}
    image_cache: dict[object, np.ndarray | None] = {}
    report = IngestReport()
    samples = []
    for ann in doc["annotations"]:
        seg = ann.get("segmentation")
        if not isinstance(seg, list) or len(seg) != 1 or not isinstance(seg[0], list):
            report.skipped_multi_part += 1
            continue
        flat = seg[0]
        if len(flat) < 6 or len(flat) % 2 != 0:
            report.skipped_degenerate += 1
            continue
        file_name = image_files.get(ann.get("image_id"))
        if file_name is None:
            report.skipped_missing_image += 1
            report.errors.append(f"annotation {ann.get('id')}: unknown image_id")
            continue
        if file_name not in image_cache:
            path = os.path.join(os.fspath(image_dir), file_name)
            try:
                image_cache[file_name] = read_ppm(path)
            except (OSError, DatasetError) as e:
                image_cache[file_name] = None
                report.errors.append(f"{file_name}: {e}")
        image = image_cache[file_name]
        if image is None:
            report.skipped_missing_image += 1
            continue

        poly = np.asarray(flat, dtype=np.float64).reshape(-1, 2)
        x, y, bw, bh = ann["bbox"]
        mx, my = crop_margin * bw, crop_margin * bh
        _, ih, iw = image.shape
        cx0 = max(0, int(math.floor(x - mx)))
        cy0 = max(0, int(math.floor(y - my)))
        cx1 = min(iw, int(math.ceil(x + bw + mx)))
        cy1 = min(ih, int(math.ceil(y + bh + my)))
        if cx1 - cx0 < 2 or cy1 - cy0 < 2:
            report.skipped_degenerate += 1
            continue
        crop = image[:, cy0:cy1, cx0:cx1]
        square, _ = pad_to_square(crop)
        side = square.shape[-1]
        scale = grid_size / side
        resized = resize_nearest(square, grid_size)
        mapped = (poly - np.array([cx0, cy0])) * scale
        # quantization bins cover [0, D); nudge boundary hits just inside
        mapped = np.clip(mapped, 0.0, np.nextafter(float(grid_size), 0.0) - 1e-6)
        try:
            ring = canonicalize(PolygonRing(mapped))
        except (InvalidRingError, DegenerateRingError):
            report.skipped_degenerate += 1
            continue
        samples.append(Sample(
            id=f"coco-{ann.get('id', len(samples))}",
            image=resized.astype(np.float32),
            ring=ring,
            provenance="ingested",
        ))
        report.loaded += 1
    return samples, report
