import json

import pytest

from polygonizer.cli import main

TRAIN_FLAGS = [
    "--channels", "4,8", "--blocks-per-stage", "1", "--feature-dim", "8",
    "--embed-dim", "16", "--hidden-dim", "16", "--attention-dim", "8",
    "--lstm-layers", "2", "--max-seq-len", "16",
    "--epochs", "2", "--batch-size", "4", "--lr", "0.001", "--seed", "0",
]


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """Run the full CLI pipeline once and share its artifacts."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    ckpt = root / "model.plgz"
    geo = root / "pred.geojson"
    svg = root / "svg"
    metrics = root / "metrics.json"
    perturbed = root / "perturbed.json"

    assert main(["generate", "--n", "6", "--out", str(data), "--size", "16",
                 "--margin", "2", "--min-vertices", "4", "--max-vertices", "6",
                 "--seed", "3"]) == 0
    assert main(["train", "--data", str(data), "--out", str(ckpt)] + TRAIN_FLAGS) == 0
    assert main(["infer", "--checkpoint", str(ckpt), "--data", str(data),
                 "--out", str(geo), "--svg", str(svg), "--seed", "0"]) == 0
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                 "--out", str(metrics), "--seed", "0"]) == 0
    assert main(["perturb-eval", "--checkpoint", str(ckpt), "--data", str(data),
                 "--out", str(perturbed), "--kind", "downsample",
                 "--levels", "1,2", "--seed", "0"]) == 0
    return dict(root=root, data=data, ckpt=ckpt, geo=geo, svg=svg,
                metrics=metrics, perturbed=perturbed)


class TestGenerate:
    def test_dataset_layout(self, pipeline):
        data = pipeline["data"]
        doc = json.loads((data / "annotations.json").read_text())
        assert doc["version"] == 1
        assert doc["grid_size"] == 16
        assert len(doc["samples"]) == 6
        assert doc["config"]["command"] == "generate"
        for entry in doc["samples"]:
            assert (data / entry["image"]).exists()

    def test_rerun_with_identical_flags_is_byte_identical(self, pipeline):
        data = pipeline["data"]
        before_ann = (data / "annotations.json").read_bytes()
        before_img = (data / "images" / "000000.ppm").read_bytes()
        assert main(["generate", "--n", "6", "--out", str(data), "--size", "16",
                     "--margin", "2", "--min-vertices", "4", "--max-vertices", "6",
                     "--seed", "3"]) == 0
        assert (data / "annotations.json").read_bytes() == before_ann
        assert (data / "images" / "000000.ppm").read_bytes() == before_img

    def test_rejects_nonpositive_n(self, tmp_path, capsys):
        assert main(["generate", "--n", "0", "--out", str(tmp_path / "x")]) == 2
        assert capsys.readouterr().err.startswith("error: usage:")


class TestTrain:
    def test_log_is_versioned_jsonl_without_timestamps(self, pipeline):
        log = pipeline["root"] / "model.plgz.log.jsonl"
        lines = log.read_text().splitlines()
        head = json.loads(lines[0])
        assert head["version"] == 1
        assert head["config"]["command"] == "train"
        for line in lines[1:]:
            entry = json.loads(line)
            assert set(entry) == {"epoch", "loss", "steps"}

    def test_rerun_with_identical_flags_is_byte_identical(self, pipeline):
        ckpt = pipeline["ckpt"]
        log = pipeline["root"] / "model.plgz.log.jsonl"
        before_ckpt = ckpt.read_bytes()
        before_log = log.read_bytes()
        assert main(["train", "--data", str(pipeline["data"]), "--out", str(ckpt)]
                    + TRAIN_FLAGS) == 0
        assert ckpt.read_bytes() == before_ckpt
        assert log.read_bytes() == before_log


class TestInfer:
    def test_geojson_structure(self, pipeline):
        doc = json.loads(pipeline["geo"].read_text())
        assert doc["type"] == "FeatureCollection"
        assert doc["properties"]["config"]["command"] == "infer"
        assert len(doc["features"]) == 6
        for feat in doc["features"]:
            props = feat["properties"]
            assert set(props) == {"id", "n_vertices", "n_tokens", "terminated",
                                  "failed", "failure"}
            if feat["geometry"] is None:
                assert props["failed"] is True
                assert props["n_vertices"] == 0
            else:
                ring = feat["geometry"]["coordinates"][0]
                assert ring[0] == ring[-1]  # explicitly closed
                assert props["n_vertices"] == len(ring) - 1

    def test_svg_overlays(self, pipeline):
        files = sorted(pipeline["svg"].glob("*.svg"))
        assert len(files) == 6
        text = files[0].read_text()
        assert "data:image/png;base64," in text
        assert 'class="ground-truth"' in text

    def test_limit(self, pipeline, tmp_path):
        out = tmp_path / "few.geojson"
        assert main(["infer", "--checkpoint", str(pipeline["ckpt"]),
                     "--data", str(pipeline["data"]), "--out", str(out),
                     "--limit", "2", "--seed", "0"]) == 0
        assert len(json.loads(out.read_text())["features"]) == 2


class TestEval:
    def test_metrics_document(self, pipeline):
        doc = json.loads(pipeline["metrics"].read_text())
        assert doc["version"] == 1
        assert doc["config"]["command"] == "eval"
        (row,) = doc["rows"]
        assert row["level"] == "none"
        assert row["n_samples"] == 6
        assert set(row) >= {"ap", "ap50", "ap75", "ar", "ar50", "ar75",
                            "iou", "mta_deg", "n_ratio", "c_iou"}

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        out = tmp_path / "metrics2.json"
        assert main(["eval", "--checkpoint", str(pipeline["ckpt"]),
                     "--data", str(pipeline["data"]), "--out", str(out),
                     "--seed", "0"]) == 0
        a = json.loads(pipeline["metrics"].read_text())
        b = json.loads(out.read_text())
        assert a["rows"] == b["rows"]
        a["config"].pop("out"), b["config"].pop("out")
        assert a == b


class TestPerturbEval:
    def test_one_row_per_level(self, pipeline):
        doc = json.loads(pipeline["perturbed"].read_text())
        assert [row["level"] for row in doc["rows"]] == [1, 2]
        assert doc["config"]["kind"] == "downsample"

    def test_rerun_rows_identical(self, pipeline, tmp_path):
        out = tmp_path / "p2.json"
        assert main(["perturb-eval", "--checkpoint", str(pipeline["ckpt"]),
                     "--data", str(pipeline["data"]), "--out", str(out),
                     "--kind", "downsample", "--levels", "1,2", "--seed", "0"]) == 0
        assert (json.loads(out.read_text())["rows"]
                == json.loads(pipeline["perturbed"].read_text())["rows"])


class TestErrorHandling:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert capsys.readouterr().out.startswith("polygonizer ")

    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 2
        assert capsys.readouterr().err.startswith("error: usage:")

    def test_missing_required_flag(self, capsys):
        assert main(["train", "--out", "x.plgz"]) == 2

    def test_missing_checkpoint_is_runtime_error(self, pipeline, tmp_path, capsys):
        code = main(["eval", "--checkpoint", str(tmp_path / "nope.plgz"),
                     "--data", str(pipeline["data"]), "--out", str(tmp_path / "m.json")])
        assert code == 1
        assert capsys.readouterr().err.startswith("error: ")

    def test_grid_mismatch_reports_both_sizes(self, pipeline, tmp_path, capsys):
        other = tmp_path / "data32"
        assert main(["generate", "--n", "1", "--out", str(other), "--size", "32",
                     "--seed", "0"]) == 0
        code = main(["eval", "--checkpoint", str(pipeline["ckpt"]),
                     "--data", str(other), "--out", str(tmp_path / "m.json")])
        assert code == 1
        err = capsys.readouterr().err
        assert "32" in err and "16" in err


class TestConfigFile:
    def test_config_supplies_defaults_and_flags_override(self, tmp_path):
        cfg = tmp_path / "gen.json"
        cfg.write_text(json.dumps({"size": 16, "margin": 2, "max_vertices": 6, "n": 4}))
        out = tmp_path / "dataset"
        assert main(["generate", "--n", "2", "--out", str(out),
                     "--config", str(cfg), "--seed", "1"]) == 0
        doc = json.loads((out / "annotations.json").read_text())
        assert doc["grid_size"] == 16          # from the config file
        assert len(doc["samples"]) == 2        # explicit flag wins over config
        assert doc["config"]["margin"] == 2

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"sizee": 16}))
        assert main(["generate", "--n", "1", "--out", str(tmp_path / "d"),
                     "--config", str(cfg)]) == 2
        assert "sizee" in capsys.readouterr().err

    def test_malformed_config_file(self, tmp_path):
        cfg = tmp_path / "broken.json"
        cfg.write_text("{not json")
        assert main(["generate", "--n", "1", "--out", str(tmp_path / "d"),
                     "--config", str(cfg)]) == 1
