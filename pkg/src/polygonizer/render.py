"""Serialization of predictions: GeoJSON FeatureCollection and SVG overlays.

The SVG embeds the input raster as a base64 data URI (the stored PPM pixels
converted to PNG with the stdlib zlib, so any viewer can display it) and
draws ground truth and prediction as two labeled polygon strokes in pixel
coordinates.
"""

from __future__ import annotations

import base64
import json
import struct
import zlib

import numpy as np

from .geometry import PolygonRing


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(tag + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def encode_png(image: np.ndarray) -> bytes:
    """Encode a float [3, H, W] image in [0, 1] as an 8-bit RGB PNG."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected [3, H, W] image, got {image.shape}")
    _, h, w = image.shape
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    raw = b"".join(b"\x00" + pixels[row].tobytes() for row in range(h))
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)  # 8-bit, colour type 2 (RGB)
    return (b"\x89PNG\r\n\x1a\n"
            + _png_chunk(b"IHDR", ihdr)
            + _png_chunk(b"IDAT", zlib.compress(raw, 9))
            + _png_chunk(b"IEND", b""))


def _ring_coordinates(ring: PolygonRing) -> list:
    coords = [[float(x), float(y)] for x, y in ring.vertices]
    coords.append(coords[0])  # GeoJSON rings are explicitly closed
    return coords


def predictions_to_geojson(entries, config: dict | None = None) -> dict:
    """Build a FeatureCollection from (sample_id, InferenceResult) pairs.

    Failed decodes become features with null geometry and a ``failure``
    property, so downstream consumers see every input accounted for.
    """
    features = []
    for sample_id, result in entries:
        if result.ring is not None:
            geometry = {"type": "Polygon", "coordinates": [_ring_coordinates(result.ring)]}
        else:
            geometry = None
        features.append({
            "type": "Feature",
            "geometry": geometry,
            "properties": {
                "id": sample_id,
                "n_vertices": len(result.ring) if result.ring is not None else 0,
                "n_tokens": len(result.sequence),
                "terminated": result.terminated,
                "failed": result.ring is None,
                "failure": result.failure,
            },
        })
    doc = {"type": "FeatureCollection", "features": features}
    if config is not None:
        doc["properties"] = {"version": 1, "config": dict(config)}
    return doc


def write_geojson(path, entries, config: dict | None = None) -> None:
    doc = predictions_to_geojson(entries, config)
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def _points_attr(ring: PolygonRing) -> str:
    return " ".join(f"{x:.3f},{y:.3f}" for x, y in ring.vertices)


def svg_overlay(image: np.ndarray, gt: PolygonRing | None = None, pred: PolygonRing | None = None) -> str:
    """An SVG document showing the image with ground-truth/prediction outlines."""
    image = np.asarray(image)
    _, h, w = image.shape
    uri = "data:image/png;base64," + base64.b64encode(encode_png(image)).decode("ascii")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'  <image href="{uri}" x="0" y="0" width="{w}" height="{h}" '
        'style="image-rendering: pixelated"/>',
    ]
    if gt is not None:
        parts.append(f'  <polygon class="ground-truth" points="{_points_attr(gt)}" '
                     'fill="none" stroke="#00c853" stroke-width="0.4">'
                     "<title>ground truth</title></polygon>")
    if pred is not None:
        parts.append(f'  <polygon class="prediction" points="{_points_attr(pred)}" '
                     'fill="none" stroke="#d50000" stroke-width="0.4" stroke-dasharray="1,0.5">'
                     "<title>prediction</title></polygon>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, image, gt=None, pred=None) -> None:
    with open(path, "w") as f:
        f.write(svg_overlay(image, gt, pred))
