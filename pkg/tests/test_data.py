import json

import numpy as np
import pytest

from polygonizer.data import (
    DatasetError,
    IngestReport,
    Sample,
    SceneConfig,
    gen_rectilinear_ring,
    gen_star_ring,
    generate_dataset,
    load_coco_subset,
    load_dataset,
    pad_to_square,
    read_ppm,
    render_scene,
    resize_nearest,
    save_dataset,
    write_ppm,
)
from polygonizer.geometry import canonicalize, rasterize, signed_area


class TestSceneConfig:
    def test_defaults_are_valid(self):
        cfg = SceneConfig()
        assert cfg.size == 64
        assert cfg.rectilinear_prob == 1.0

    @pytest.mark.parametrize("kw", [
        dict(size=8),
        dict(min_vertices=2),
        dict(min_vertices=8, max_vertices=6),
        dict(max_vertices=20),
        dict(size=16, margin=5),       # margin leaves no room to place shapes
        dict(fg_range=(0.5, 1.5)),
        dict(noise_sigma=-0.1),
    ])
    def test_rejects_bad_fields(self, kw):
        with pytest.raises(ValueError):
            SceneConfig(**kw)


class TestRectilinearGeneration:
    def test_properties_hold_over_many_rings(self):
        cfg = SceneConfig(seed=9)
        for i in range(300):
            rng = np.random.default_rng([9, i])
            ring = gen_rectilinear_ring(rng, cfg)
            v = ring.vertices
            n = len(ring)
            assert n % 2 == 0 and 4 <= n <= 12
            # rectilinear: each edge changes exactly one coordinate
            nxt = np.roll(v, -1, axis=0)
            same = np.isclose(v, nxt)
            assert np.all(same.sum(axis=1) == 1)
            assert v.min() >= cfg.margin
            assert v.max() <= cfg.size - cfg.margin
            assert ring.is_valid
            assert canonicalize(ring) == ring
            assert signed_area(ring) > 0

    def test_vertices_sit_on_half_integers(self):
        cfg = SceneConfig(seed=3)
        rng = np.random.default_rng(3)
        for _ in range(20):
            ring = gen_rectilinear_ring(rng, cfg)
            frac = np.mod(ring.vertices, 1.0)
            np.testing.assert_allclose(frac, 0.5)

    def test_four_vertices_is_a_rectangle(self):
        cfg = SceneConfig(min_vertices=4, max_vertices=4, seed=1)
        ring = gen_rectilinear_ring(np.random.default_rng(1), cfg)
        v = ring.vertices
        assert len(ring) == 4
        assert len(np.unique(v[:, 0])) == 2
        assert len(np.unique(v[:, 1])) == 2


class TestStarGeneration:
    def test_simple_and_in_range(self):
        cfg = SceneConfig(rectilinear_prob=0.0, seed=2)
        for i in range(30):
            ring = gen_star_ring(np.random.default_rng([2, i]), cfg)
            assert cfg.min_vertices <= len(ring) <= cfg.max_vertices
            assert ring.is_valid


class TestRendering:
    def test_noiseless_render_equals_mask(self):
        cfg = SceneConfig(size=32, margin=4, noise_sigma=0.0,
                          fg_range=(1.0, 1.0), bg_range=(0.0, 0.0), seed=0)
        ring = gen_rectilinear_ring(np.random.default_rng(0), cfg)
        image = render_scene(ring, cfg, np.random.default_rng(0))
        mask = rasterize(ring, cfg.size).bits.astype(np.float32)
        for c in range(3):
            np.testing.assert_array_equal(image[c], mask)

    def test_foreground_brighter_than_background(self):
        cfg = SceneConfig(seed=8)
        for i in range(20):
            rng = np.random.default_rng([8, i])
            ring = gen_rectilinear_ring(rng, cfg)
            image = render_scene(ring, cfg, rng)
            mask = rasterize(ring, cfg.size).bits
            assert image[0][mask].mean() > image[0][~mask].mean()

    def test_range_and_dtype(self):
        cfg = SceneConfig(seed=4, noise_sigma=0.3)
        rng = np.random.default_rng(4)
        ring = gen_rectilinear_ring(rng, cfg)
        image = render_scene(ring, cfg, rng)
        assert image.dtype == np.float32
        assert image.min() >= 0.0 and image.max() <= 1.0


class TestGenerateDataset:
    def test_bitwise_deterministic(self):
        a = generate_dataset(SceneConfig(seed=5), 6)
        b = generate_dataset(SceneConfig(seed=5), 6)
        for x, y in zip(a, b):
            assert x.id == y.id
            np.testing.assert_array_equal(x.image, y.image)
            assert x.ring == y.ring

    def test_sample_stream_is_index_stable(self):
        # sample i does not depend on how many samples are generated
        a = generate_dataset(SceneConfig(seed=5), 3)
        b = generate_dataset(SceneConfig(seed=5), 6)
        assert a[2].ring == b[2].ring

    def test_ids_and_provenance(self):
        samples = generate_dataset(SceneConfig(seed=0), 2)
        assert [s.id for s in samples] == ["000000", "000001"]
        assert all(s.provenance == "synthetic" for s in samples)


class TestPPM:
    def test_roundtrip_within_8bit(self, tmp_path, rng):
        image = rng.uniform(0, 1, (3, 7, 5)).astype(np.float32)
        path = tmp_path / "x.ppm"
        write_ppm(path, image)
        back = read_ppm(path)
        assert back.shape == (3, 7, 5)
        assert np.abs(back - image).max() <= 0.5 / 255 + 1e-6

    def test_exact_at_8bit_values(self, tmp_path):
        image = (np.arange(3 * 2 * 2).reshape(3, 2, 2) * 17 % 256) / 255.0
        path = tmp_path / "x.ppm"
        write_ppm(path, image)
        np.testing.assert_allclose(read_ppm(path), image, atol=1e-7)

    def test_header_comments_are_skipped(self, tmp_path):
        path = tmp_path / "c.ppm"
        body = bytes(range(12))
        path.write_bytes(b"P6\n# a comment\n2 2\n255\n" + body)
        img = read_ppm(path)
        assert img.shape == (3, 2, 2)

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
        with pytest.raises(DatasetError):
            read_ppm(path)

    def test_rejects_truncated_pixels(self, tmp_path):
        path = tmp_path / "short.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(DatasetError):
            read_ppm(path)


class TestDatasetPersistence:
    def test_roundtrip(self, tmp_path):
        samples = generate_dataset(SceneConfig(seed=6), 4)
        save_dataset(tmp_path, samples, grid_size=64, config={"seed": 6})
        loaded, grid = load_dataset(tmp_path)
        assert grid == 64
        assert len(loaded) == 4
        for orig, back in zip(samples, loaded):
            assert back.id == orig.id
            assert back.ring == orig.ring  # JSON floats are lossless
            assert np.abs(back.image - orig.image).max() <= 0.5 / 255 + 1e-6

    def test_version_mismatch_is_fatal(self, tmp_path):
        samples = generate_dataset(SceneConfig(seed=6), 1)
        save_dataset(tmp_path, samples, grid_size=64)
        doc = json.loads((tmp_path / "annotations.json").read_text())
        doc["version"] = 99
        (tmp_path / "annotations.json").write_text(json.dumps(doc))
        with pytest.raises(DatasetError, match="version"):
            load_dataset(tmp_path)

    def test_missing_image_is_itemized(self, tmp_path):
        samples = generate_dataset(SceneConfig(seed=6), 2)
        save_dataset(tmp_path, samples, grid_size=64)
        (tmp_path / "images" / "000001.ppm").unlink()
        with pytest.raises(DatasetError, match="000001.ppm"):
            load_dataset(tmp_path)

    def test_missing_annotations(self, tmp_path):
        with pytest.raises(DatasetError, match="annotations.json"):
            load_dataset(tmp_path)


class TestPadAndResize:
    def test_square_input_is_identity(self, rng):
        img = rng.uniform(0, 1, (3, 5, 5)).astype(np.float32)
        out, off = pad_to_square(img)
        np.testing.assert_array_equal(out, img)
        assert off == (0, 0)

    def test_pads_right_and_bottom(self, rng):
        img = rng.uniform(0, 1, (3, 10, 6)).astype(np.float32)
        out, off = pad_to_square(img, fill=0.25)
        assert out.shape == (3, 10, 10)
        assert off == (0, 0)
        np.testing.assert_array_equal(out[:, :, :6], img)
        np.testing.assert_array_equal(out[:, :, 6:], 0.25)

    def test_resize_integer_upscale_is_block_replication(self):
        img = np.arange(4, dtype=np.float32).reshape(1, 2, 2)
        img = np.repeat(img, 3, axis=0)
        out = resize_nearest(img, 4)
        want = np.kron(img, np.ones((1, 2, 2), dtype=np.float32))
        np.testing.assert_array_equal(out, want)

    def test_resize_downscale_shape(self, rng):
        img = rng.uniform(0, 1, (3, 9, 9)).astype(np.float32)
        assert resize_nearest(img, 4).shape == (3, 4, 4)


def _write_coco_fixture(tmp_path, rng):
    img = rng.uniform(0.2, 0.8, (3, 20, 20)).astype(np.float32)
    write_ppm(tmp_path / "scene.ppm", img)
    doc = {
        "images": [{"id": 1, "file_name": "scene.ppm"},
                   {"id": 2, "file_name": "absent.ppm"}],
        "annotations": [
            {"id": 10, "image_id": 1, "bbox": [4, 6, 10, 8],
             "segmentation": [[5, 7, 12, 7, 12, 13, 5, 13]]},
            {"id": 11, "image_id": 1, "bbox": [0, 0, 5, 5],
             "segmentation": [[0, 0, 2, 0, 2, 2], [3, 3, 4, 3, 4, 4]]},
            {"id": 12, "image_id": 1, "bbox": [0, 0, 5, 5],
             "segmentation": [[1, 1, 2, 2]]},
            {"id": 13, "image_id": 99, "bbox": [0, 0, 5, 5],
             "segmentation": [[0, 0, 3, 0, 3, 3]]},
            {"id": 14, "image_id": 2, "bbox": [0, 0, 5, 5],
             "segmentation": [[0, 0, 3, 0, 3, 3]]},
        ],
    }
    ann = tmp_path / "coco.json"
    ann.write_text(json.dumps(doc))
    return ann


class TestCocoIngestion:
    def test_counts_and_mapping(self, tmp_path, rng):
        ann = _write_coco_fixture(tmp_path, rng)
        samples, rep = load_coco_subset(ann, tmp_path, grid_size=24)
        assert isinstance(rep, IngestReport)
        assert rep.loaded == 1
        assert rep.skipped_multi_part == 1
        assert rep.skipped_degenerate == 1
        assert rep.skipped_missing_image == 2
        assert len(samples) == 1

        s = samples[0]
        assert s.provenance == "ingested"
        assert s.image.shape == (3, 24, 24)
        # bbox [4,6,10,8] + 10% margin -> crop x in [3,15), y in [5,15),
        # pad 12x10 -> 12x12, scale 24/12 = 2
        want = canonicalize_pts([(4, 4), (18, 4), (18, 16), (4, 16)])
        np.testing.assert_allclose(sorted(map(tuple, s.ring.vertices)), want, atol=1e-9)

    def test_malformed_json_is_fatal(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        with pytest.raises(DatasetError, match="malformed"):
            load_coco_subset(bad, tmp_path, grid_size=24)

    def test_missing_sections_fatal(self, tmp_path):
        bad = tmp_path / "empty.json"
        bad.write_text("{}")
        with pytest.raises(DatasetError):
            load_coco_subset(bad, tmp_path, grid_size=24)

    def test_ring_stays_inside_grid(self, tmp_path, rng):
        # polygon touching the bbox edge must land strictly inside [0, D)
        img = rng.uniform(0.2, 0.8, (3, 16, 16)).astype(np.float32)
        write_ppm(tmp_path / "s.ppm", img)
        doc = {
            "images": [{"id": 1, "file_name": "s.ppm"}],
            "annotations": [{"id": 1, "image_id": 1, "bbox": [0, 0, 16, 16],
                             "segmentation": [[0, 0, 16, 0, 16, 16, 0, 16]]}],
        }
        ann = tmp_path / "a.json"
        ann.write_text(json.dumps(doc))
        samples, rep = load_coco_subset(ann, tmp_path, grid_size=32, crop_margin=0.0)
        assert rep.loaded == 1
        v = samples[0].ring.vertices
        assert v.min() >= 0.0
        assert v.max() < 32.0


def canonicalize_pts(pts):
    return sorted((float(x), float(y)) for x, y in pts)
