import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faptp import haze
from faptp.exceptions import DimensionError, DomainError, SingularTransmissionError

from conftest import central_diff


def make_params(beta=1.0, airlight=0.9, shape=(4, 5), rng=None, depth=None):
    if depth is None:
        rng = rng or np.random.default_rng(0)
        depth = rng.uniform(0.0, 1.0, shape)
    return haze.ScatterParams(beta, np.atleast_1d(airlight), depth)


class TestTransmission:
    def test_zero_beta_gives_ones(self):
        depth = np.random.default_rng(0).uniform(0, 1, (6, 7))
        assert np.array_equal(haze.transmission(0.0, depth), np.ones_like(depth))

    def test_scalar_values(self):
        # direct evaluation of exp(-beta * d)
        assert haze.transmission(1.0, np.array([[0.6931]]))[0, 0] == pytest.approx(
            np.exp(-0.6931), abs=1e-12
        )
        assert haze.transmission(1.0, np.array([[0.6931]]))[0, 0] == pytest.approx(0.5, abs=1e-4)
        assert haze.transmission(3.0, np.array([[1.0]]))[0, 0] == pytest.approx(0.0498, abs=1e-4)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            haze.transmission(-0.1, np.zeros((2, 2)))
        with pytest.raises(DomainError):
            haze.transmission(1.0, np.array([[1.5]]))

    def test_in_range_transmission_bounds(self):
        p = make_params(beta=3.0)
        t = p.transmission()
        assert t.min() >= np.exp(-3.0) - 1e-12 and t.max() <= 1.0


class TestApplyHaze:
    def test_beta_zero_identity(self, rng):
        img = rng.uniform(0, 1, (4, 5))
        p = make_params(beta=0.0, rng=rng)
        assert np.array_equal(haze.apply_haze(img, p), img)

    def test_scalar_case(self):
        # I0=0.8, A=1.0, beta=1.0, depth=ln 2 -> t=0.5 -> I = 0.8*0.5 + 1*0.5 = 0.9
        p = make_params(beta=1.0, airlight=1.0, depth=np.array([[np.log(2.0)]]))
        out = haze.apply_haze(np.array([[0.8]]), p)
        assert out[0, 0] == pytest.approx(0.9, abs=1e-12)

    def test_airlight_fixed_point(self, rng):
        p = make_params(beta=2.0, airlight=0.7, rng=rng)
        img = np.full((4, 5), 0.7)
        assert np.allclose(haze.apply_haze(img, p), 0.7)

    def test_shape_mismatch(self, rng):
        p = make_params(rng=rng, shape=(4, 5))
        with pytest.raises(DimensionError):
            haze.apply_haze(rng.uniform(0, 1, (5, 4)), p)

    def test_convex_hull(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        a = rng.uniform(0, 1, 3)
        p = haze.ScatterParams(1.5, a, rng.uniform(0, 1, (8, 8)))
        out = haze.apply_haze(img, p)
        lo = np.minimum(img, a[None, None, :])
        hi = np.maximum(img, a[None, None, :])
        assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)

    def test_monotone_in_beta_when_airlight_above(self, rng):
        img = rng.uniform(0, 0.5, (6, 6))
        depth = rng.uniform(0.1, 1.0, (6, 6))
        prev = img
        for beta in (0.0, 0.5, 1.0, 2.0, 3.0):
            out = haze.apply_haze(img, haze.ScatterParams(beta, [0.95], depth))
            assert np.all(out >= prev - 1e-12)
            prev = out


class TestDehaze:
    def test_round_trip(self, rng):
        img = rng.uniform(0, 1, (5, 6, 3))
        p = haze.ScatterParams(2.3, rng.uniform(0.5, 1.0, 3), rng.uniform(0, 1, (5, 6)))
        back = haze.dehaze(haze.apply_haze(img, p), p)
        assert np.max(np.abs(back - img)) <= 1e-6

    def test_airlight_fixed_point(self, rng):
        p = make_params(beta=1.2, airlight=0.8, rng=rng)
        hazy = np.full((4, 5), 0.8)
        assert np.allclose(haze.dehaze(hazy, p), 0.8)

    def test_scalar_case(self):
        # hazy=0.9, A=1.0, t=0.5 -> I0 = (0.9 - 0.5) / 0.5 = 0.8
        p = make_params(beta=1.0, airlight=1.0, depth=np.array([[np.log(2.0)]]))
        assert haze.dehaze(np.array([[0.9]]), p)[0, 0] == pytest.approx(0.8, abs=1e-12)

    def test_singular_transmission(self):
        depth = np.ones((3, 3))
        p = haze.ScatterParams(3.0, [0.9], depth)
        # force the floor by shrinking it in a copy of the check
        hazy = np.full((3, 3), 0.5)
        # beta*depth = 3 -> t ~ 0.0498 > 0.01 so this is fine
        haze.dehaze(hazy, p)
        # monkey-level check: a tiny t_min violation must raise with pixel count
        import faptp.haze as hz

        old = hz.T_MIN
        hz.T_MIN = 0.1
        try:
            with pytest.raises(SingularTransmissionError) as exc:
                hz.dehaze(hazy, p)
            assert exc.value.n_pixels == 9
        finally:
            hz.T_MIN = old

    def test_unclamped_by_default_and_clamp_mode(self):
        p = make_params(beta=2.0, airlight=1.0, depth=np.full((2, 2), 1.0))
        hazy = np.zeros((2, 2))  # inconsistent with params -> negative inverse
        raw = haze.dehaze(hazy, p)
        assert raw.min() < 0.0
        clamped = haze.dehaze(hazy, p, clamp=True)
        assert clamped.min() >= 0.0 and clamped.max() <= 1.0


@settings(max_examples=200, deadline=None)
@given(
    beta=st.floats(0.0, 3.0),
    a=st.floats(0.5, 1.0),
    i0=st.floats(0.0, 1.0),
    d=st.floats(0.0, 1.0),
)
def test_round_trip_property(beta, a, i0, d):
    p = haze.ScatterParams(beta, [a], np.array([[d]]))
    hazy = haze.apply_haze(np.array([[i0]]), p)
    assert abs(haze.dehaze(hazy, p)[0, 0] - i0) <= 1e-6


class TestGradients:
    def test_analytic_vs_central_differences(self, rng):
        img = rng.uniform(0.1, 0.9, (3, 4))
        depth = rng.uniform(0.1, 0.9, (3, 4))
        beta = 1.3
        a = 0.85
        w = rng.standard_normal((3, 4))  # random linear functional

        def loss(i0=img, b=beta, al=a, dp=depth):
            p = haze.ScatterParams(b, [al], dp)
            return float(np.sum(w * haze.apply_haze(i0, p)))

        g = haze.apply_haze_grads(img, haze.ScatterParams(beta, [a], depth))
        num_i0 = central_diff(lambda x: loss(i0=x), img)
        assert np.max(np.abs(num_i0 - w * g["d_clear"])) <= 1e-4 * max(1, np.abs(num_i0).max())

        num_d = central_diff(lambda x: loss(dp=x), depth)
        assert np.max(np.abs(num_d - w * g["d_depth"])) <= 1e-4 * max(1, np.abs(num_d).max())

        hb = 1e-5
        num_beta = (loss(b=beta + hb) - loss(b=beta - hb)) / (2 * hb)
        assert num_beta == pytest.approx(float(np.sum(w * g["d_beta"])), rel=1e-4)

        num_a = (loss(al=a + hb) - loss(al=a - hb)) / (2 * hb)
        assert num_a == pytest.approx(float(np.sum(w * g["d_airlight"])), rel=1e-4)


class _Scene:
    def __init__(self, scene_id, clear, depth):
        self.scene_id = scene_id
        self.clear = clear
        self.depth = depth


class TestBenchmarkSynthesis:
    def test_beta_zero_byte_identical(self, rng, tmp_path):
        clear = rng.uniform(0, 1, (16, 16))
        scene = _Scene("s0", clear, rng.uniform(0, 1, (16, 16)))
        recs = haze.synthesize_benchmark([scene], [haze.HazeLevel(0.0, 140.0)], tmp_path, seed=3)
        out = haze.load_raster(tmp_path / recs[0].raster_path)
        assert np.array_equal(haze.quantize8(out), haze.quantize8(clear))

    def test_four_levels_recorded(self, rng, tmp_path):
        scene = _Scene("s0", rng.uniform(0, 1, (8, 8)), rng.uniform(0, 1, (8, 8)))
        recs = haze.synthesize_benchmark(
            [scene], haze.HazeLevel.paper_levels(), tmp_path, seed=0
        )
        assert [r.beta for r in recs] == [0.0, 0.5, 1.0, 2.0]
        loaded = haze.load_manifest(tmp_path)
        assert [r.beta for r in loaded] == [0.0, 0.5, 1.0, 2.0]
        assert all(len(r.airlight) == 3 for r in loaded)

    def test_mean_intensity_monotone_toward_airlight(self, rng, tmp_path):
        clear = rng.uniform(0, 0.4, (12, 12))  # airlight (>=0.75) is above the mean
        scene = _Scene("s0", clear, rng.uniform(0.2, 1.0, (12, 12)))
        recs = haze.synthesize_benchmark(
            [scene], haze.HazeLevel.paper_levels(), tmp_path, seed=5
        )
        means = [haze.load_raster(tmp_path / r.raster_path).mean() for r in recs]
        assert all(b >= a for a, b in zip(means, means[1:]))

    def test_missing_depth_is_an_error(self, rng, tmp_path):
        scene = _Scene("s0", rng.uniform(0, 1, (4, 4)), None)
        with pytest.raises(DomainError):
            haze.synthesize_benchmark([scene], haze.HazeLevel.paper_levels(), tmp_path)

    def test_deterministic_given_seed(self, rng, tmp_path):
        scene = _Scene("s0", rng.uniform(0, 1, (8, 8)), rng.uniform(0, 1, (8, 8)))
        r1 = haze.synthesize_benchmark([scene], haze.HazeLevel.paper_levels(), tmp_path / "a", seed=9)
        r2 = haze.synthesize_benchmark([scene], haze.HazeLevel.paper_levels(), tmp_path / "b", seed=9)
        assert [x.airlight for x in r1] == [x.airlight for x in r2]
        for a, b in zip(r1, r2):
            assert np.array_equal(
                haze.load_raster(tmp_path / "a" / a.raster_path),
                haze.load_raster(tmp_path / "b" / b.raster_path),
            )
