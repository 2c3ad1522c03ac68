import numpy as np
import pytest

from faptp import datasets, haze, simulate
from faptp.exceptions import ConfigError


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    cfg = simulate.SimConfig(raster_size=32, n_frames=22, min_agents=3, max_agents=4)
    meta = datasets.build_dataset(out, n_scenes=5, seed=11, behavior_beta=1.0,
                                  sim_config=cfg)
    return out, meta


class TestBuildLoad:
    def test_meta(self, built):
        _, meta = built
        assert meta["n_scenes"] == 5
        assert meta["levels"] == [0.0, 0.5, 1.0, 2.0]

    def test_load_roundtrip(self, built):
        out, _ = built
        scenes, splits, meta = datasets.load_dataset(out)
        assert len(scenes) == 5
        for s in scenes:
            assert set(s.rasters) == {0.0, 0.5, 1.0, 2.0}
            assert s.clear.shape == (32, 32) and s.depth.shape == (32, 32)
            assert s.windows and s.groups
            assert len(s.airlight) == 3
        assert splits["train"] and splits["test"]

    def test_raster_at_unknown_level(self, built):
        out, _ = built
        scenes, _, _ = datasets.load_dataset(out, extract=False)
        with pytest.raises(ConfigError):
            scenes[0].raster_at(1.7)

    def test_hazy_rasters_consistent_with_forward_model(self, built):
        out, _ = built
        scenes, _, _ = datasets.load_dataset(out, extract=False)
        s = scenes[0]
        params = haze.ScatterParams(1.0, np.array(s.airlight), s.depth)
        expect = haze.apply_haze(s.clear, params)
        # rasters are stored float32; compare at that precision
        assert np.max(np.abs(expect - s.raster_at(1.0))) < 1e-6

    def test_tracks_reload_identically(self, built):
        out, _ = built
        scenes, _, _ = datasets.load_dataset(out, extract=False)
        raw = simulate.synth_scenes(5, seed=11, haze_behavior=1.0,
                                    config=simulate.SimConfig(raster_size=32, n_frames=22,
                                                              min_agents=3, max_agents=4))
        for loaded, orig in zip(scenes, raw):
            a = np.array([(r.frame_id, r.ped_id, r.x, r.y) for r in loaded.records])
            b = np.array(
                sorted((r.frame_id, r.ped_id, round(r.x, 6), round(r.y, 6)) for r in orig.records)
            )
            a = a[np.lexsort((a[:, 1], a[:, 0]))]
            b_arr = np.asarray(b)
            b_arr = b_arr[np.lexsort((b_arr[:, 1], b_arr[:, 0]))]
            assert np.allclose(a, b_arr, atol=1e-6)

    def test_scene_splits_fractions(self):
        ids = [f"s{i}" for i in range(10)]
        sp = datasets.scene_splits(ids)
        assert len(sp["train"]) == 6 and len(sp["val"]) == 2 and len(sp["test"]) == 2
        assert set(sp["train"]) | set(sp["val"]) | set(sp["test"]) == set(ids)

    def test_split_scenes_helper(self, built):
        out, _ = built
        scenes, splits, _ = datasets.load_dataset(out, extract=False)
        tr, va, te = datasets.split_scenes(scenes, splits)
        assert len(tr) + len(va) + len(te) == 5
