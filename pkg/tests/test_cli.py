import json
import os

import numpy as np
import pytest

from faptp import cli, datasets, metrics, scan
from faptp.config import ModelConfig, TrainConfig, save_config
from faptp.decoder import DecoderConfig
from faptp.phyfusion import PhyFusionConfig
from faptp.social import SocialConfig
from faptp.temporal import TemporalConfig


def run(argv):
    return cli.main(argv)


def write_tiny_config(path):
    from test_model import tiny_model_config

    save_config(path, tiny_model_config(),
                TrainConfig(epochs=1, batch_groups=2, image_update_every=6))


@pytest.fixture(scope="module")
def ds(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_ds")
    rc = run(["synth-data", "--out", str(out), "--scenes", "5", "--seed", "1",
              "--raster-size", "32", "--frames", "21"])
    assert rc == 0
    return out


class TestDataCommands:
    def test_synth_data_layout(self, ds):
        assert (ds / "meta.json").exists()
        assert (ds / "tracks").is_dir() and (ds / "rasters").is_dir()
        scenes, splits, _ = datasets.load_dataset(ds)
        assert len(scenes) == 5

    def test_synth_haze(self, ds, tmp_path):
        out = tmp_path / "rehazed"
        rc = run(["synth-haze", "--dataset", str(ds), "--out", str(out),
                  "--levels", "0", "1.0"])
        assert rc == 0
        from faptp import haze

        recs = haze.load_manifest(out)
        assert sorted({r.beta for r in recs}) == [0.0, 1.0]

    def test_make_splits(self, ds, tmp_path):
        out = tmp_path / "splits.json"
        rc = run(["make-splits", "--tracks", str(ds / "tracks"),
                  "--held-out", "synth0000", "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert set(doc) == {"train", "val", "test"}
        assert all(key[0] == "synth0000" for key in doc["test"])

    def test_make_splits_unknown_scene_exit_2(self, ds, tmp_path):
        rc = run(["make-splits", "--tracks", str(ds / "tracks"),
                  "--held-out", "nope", "--out", str(tmp_path / "s.json")])
        assert rc == 2


class TestTrainEvalPlot:
    def test_train_eval_plot_pipeline(self, ds, tmp_path):
        cfg_path = tmp_path / "config.json"
        write_tiny_config(cfg_path)
        out_dir = tmp_path / "run"
        rc = run(["train", "--dataset", str(ds), "--out", str(out_dir),
                  "--config", str(cfg_path), "--seed", "0"])
        assert rc == 0
        ckpt = out_dir / "model.npz"
        assert ckpt.exists() and (out_dir / "model.npz.manifest.json").exists()

        results = tmp_path / "results.csv"
        rc = run(["eval", "--dataset", str(ds), "--checkpoint", str(ckpt),
                  "--out", str(results), "--config", str(cfg_path),
                  "--betas", "0", "1.0", "--k", "2", "--baseline", "--seed", "0"])
        assert rc == 0
        rows = metrics.read_results_csv(results)
        assert len(rows) == 4  # 2 levels x (model + baseline)
        assert sorted({r.beta for r in rows}) == [0.0, 1.0]

        plot_dir = tmp_path / "plots"
        rc = run(["plot", str(results), "--out", str(plot_dir)])
        assert rc == 0
        assert (plot_dir / "degradation_min_ade.png").exists()

    def test_eval_missing_checkpoint_exit_1(self, ds, tmp_path):
        rc = run(["eval", "--dataset", str(ds), "--checkpoint",
                  str(tmp_path / "missing.npz"), "--out", str(tmp_path / "r.csv")])
        assert rc == 1

    def test_conflicting_ablations_exit_2(self, ds, tmp_path):
        rc = run(["train", "--dataset", str(ds), "--out", str(tmp_path / "x"),
                  "--no-mamba", "--use-transformer"])
        assert rc == 2


class TestBenchAndVectors:
    def test_bench_scan_json(self, tmp_path):
        out = tmp_path / "bench.json"
        rc = run(["bench-scan", "--t-values", "64", "128", "256",
                  "--d-inner", "4", "--n-state", "4", "--repeats", "2",
                  "--json", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert "slopes" in doc and "reference" in doc["slopes"]

    def test_gen_scan_vectors(self, tmp_path):
        out = tmp_path / "vectors.bin"
        rc = run(["gen-scan-vectors", "--out", str(out), "--cases", "10",
                  "--seed", "3", "--bench-reference", "64,8,8", "--repeats", "2"])
        assert rc == 0
        cases = scan.read_test_vectors(out)
        assert len(cases) == 10
        timing = json.loads((tmp_path / "vectors.bin.reference_timing.json").read_text())
        assert timing["T"] == 64 and timing["reference_ms"] > 0

    def test_param_count_runs(self, capsys):
        rc = run(["param-count"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "phyfusion" in out and "temporal" in out

    def test_unknown_flag_exit_2(self):
        assert run(["bench-scan", "--frobnicate"]) == 2

    def test_version_exit_0(self):
        assert run(["--version"]) == 0
