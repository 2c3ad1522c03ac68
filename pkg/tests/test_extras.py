"""Graph dumps, prediction dumps, plots, the t-test post-processor, and the
NaN training abort."""

import numpy as np
import pytest

from faptp import autodiff as ad
from faptp import decoder, metrics, plots, social, stats, training
from faptp.exceptions import TrainingAbort
from faptp.model import FAPTPModel

from test_model import tiny_model_config
from test_social import make_window, tiny_cfg


class TestGraphDump:
    def test_save_load_roundtrip(self, rng, tmp_path):
        g = social.SocialGraph(tiny_cfg(), rng)
        windows = [make_window(i, (0.4 * i, 0.0), (1.0, 0.1)) for i in range(4)]
        feats = ad.Tensor(rng.standard_normal((4, 8, 12)))
        _, dump = g(feats, windows, ad.Tensor(np.array(1.0)), collect=True)
        path = tmp_path / "graph.npz"
        dump.save(path)
        back = social.GraphDump.load(path)
        assert list(back.ped_ids) == list(dump.ped_ids)
        assert np.array_equal(back.similarity, dump.similarity)
        for layer in dump.modulated_weights:
            for a, b in zip(dump.modulated_weights[layer], back.modulated_weights[layer]):
                assert np.array_equal(a, b)

    def test_heatmap_plot(self, rng, tmp_path):
        g = social.SocialGraph(tiny_cfg(), rng)
        windows = [make_window(i, (0.4 * i, 0.0), (1.0, 0.1)) for i in range(5)]
        feats = ad.Tensor(rng.standard_normal((5, 8, 12)))
        _, dump = g(feats, windows, ad.Tensor(np.array(1.5)), collect=True)
        out = plots.plot_attention_heatmap(dump, tmp_path / "heat.png")
        assert (tmp_path / "heat.png").exists()


class TestPredictionDump:
    def test_roundtrip_and_metric_consumption(self, rng, tmp_path):
        cfg = decoder.DecoderConfig(d_model=8, latent_dim=4, psi_hidden=8,
                                    enc_hidden=8, dec_hidden=8)
        cv = decoder.CVAEDecoder(cfg, rng).eval()
        f_p = ad.Tensor(rng.standard_normal((3, 8)))
        last = rng.standard_normal((3, 2))
        ps = cv.sample_k(f_p, last, k=4, seed=5)
        y_gt = rng.standard_normal((3, 12, 2))
        path = tmp_path / "preds.npz"
        decoder.save_predictions(
            path,
            [{"scene_id": "s0", "start_frame": 3, "ped_ids": [1, 2, 5],
              "prediction_set": ps, "y_gt": y_gt}],
        )
        back = decoder.load_predictions(path)
        assert len(back) == 1
        assert back[0]["scene_id"] == "s0" and back[0]["start_frame"] == 3
        assert np.array_equal(back[0]["prediction_set"].samples, ps.samples)
        # the dump feeds the metric suite directly
        val = metrics.min_ade(back[0]["prediction_set"].samples, back[0]["y_gt"])
        assert val == pytest.approx(metrics.min_ade(ps.samples, y_gt))


class TestFeatureProjectionPlot:
    def test_projection_hook(self, rng, tmp_path):
        feats = {0.0: [rng.standard_normal(20) for _ in range(5)],
                 2.0: [rng.standard_normal(20) + 3 for _ in range(5)]}
        out = plots.plot_feature_projection(feats, tmp_path / "proj.png")
        assert (tmp_path / "proj.png").exists()
        proj = plots.project_features_2d(
            [f for fs in feats.values() for f in fs]
        )
        assert proj.shape == (10, 2)


class TestPairedTTest:
    def test_matches_known_case(self):
        # hand-checked: d = [1, 2, 3, 4], mean 2.5, sd 1.2910, t = 3.873, df 3
        res = stats.paired_ttest([2, 4, 6, 8], [1, 2, 3, 4])
        assert res.t_stat == pytest.approx(3.873, abs=1e-3)
        assert res.df == 3
        assert res.p_value == pytest.approx(0.0305, abs=2e-3)

    def test_identical_sequences(self):
        res = stats.paired_ttest([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert res.t_stat == 0.0 and res.p_value == pytest.approx(1.0)

    def test_t_sf_reference_values(self):
        # standard table: P(|T| >= 2.776) = 0.05 at df = 4
        assert stats.t_sf(2.776, 4) == pytest.approx(0.05, abs=2e-3)
        assert stats.t_sf(1.96, 10**6) == pytest.approx(0.05, abs=2e-3)

    def test_compare_results_files(self, tmp_path):
        rows_a = [metrics.MetricReport("s", b, 0.3 + 0.1 * b, 0.5, 0.9, 0.8, 1.0)
                  for b in (0.0, 0.5, 1.0, 2.0)]
        rows_b = [metrics.MetricReport("s", b, 0.4 + 0.1 * b, 0.6, 0.8, 0.7, 1.5)
                  for b in (0.0, 0.5, 1.0, 2.0)]
        metrics.write_results_csv(tmp_path / "a.csv", rows_a)
        metrics.write_results_csv(tmp_path / "b.csv", rows_b)
        res = stats.compare_results(tmp_path / "a.csv", tmp_path / "b.csv")
        assert res.n == 4
        assert res.mean_diff == pytest.approx(-0.1)


class TestNanAbort:
    def test_training_aborts_with_reference(self, tmp_path, rng):
        from faptp import datasets, simulate

        cfg = simulate.SimConfig(raster_size=32, n_frames=21, min_agents=3, max_agents=3)
        datasets.build_dataset(tmp_path / "ds", 2, seed=1, behavior_beta=1.0, sim_config=cfg)
        scenes, _, _ = datasets.load_dataset(tmp_path / "ds")
        model = FAPTPModel(tiny_model_config(seed=0))
        # poison one weight: the first forward produces a non-finite loss
        model.cvae.decode_net.layers[0].w.data[0, 0] = np.nan
        from faptp.config import TrainConfig

        with pytest.raises(TrainingAbort):
            training.train(
                model, scenes, TrainConfig(epochs=1, batch_groups=1, seed=0),
                out_dir=tmp_path / "run", checkpoint_every=0,
            )
