import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from manifold_codec import bounds as b
from manifold_codec.sources import make_stream

# reference gaps (upper minus lower, bits) from the first run; regression-tested
REFERENCE_GAPS = {
    ("circle", 1e-2): 3.957953625164379e-04,
    ("circle", 1e-3): 9.908757186760653e-05,
    ("ramp", 1e-2): 3.2612121266595295e-04,
    ("ramp", 1e-3): 3.575606645433993e-06,
}


class TestSinc:
    @pytest.mark.parametrize("x, want", [(0.0, 1.0), (math.pi, 0.0), (math.pi / 2, 2 / math.pi)])
    def test_examples(self, x, want):
        assert abs(b.sinc(x) - want) < 1e-15

    def test_branches_agree_at_cutoff(self):
        for x in (1e-4, -1e-4):
            assert abs(b.sinc(x) - math.sin(x) / x) < 1e-12
            assert abs(b.sinc(np.nextafter(x, 0)) - math.sin(x) / x) < 1e-12

    @given(st.floats(-1e3, 1e3, allow_nan=False))
    def test_even_and_bounded(self, x):
        assert b.sinc(x) == b.sinc(-x)
        assert abs(b.sinc(x)) <= 1.0
        if abs(x) > 1e-6:  # below that 1 - x^2/6 rounds to 1
            assert abs(b.sinc(x)) < 1.0

    def test_array_input(self):
        x = np.array([0.0, 1e-6, 1.0, math.pi])
        np.testing.assert_allclose(b.sinc(x), [1.0, 1.0, math.sin(1.0), 0.0], atol=1e-15)


class TestCellDistortion:
    def test_circle_examples(self):
        assert abs(b.circle_cell_distortion(2 * math.pi) - 1.0) < 1e-15
        assert b.circle_cell_distortion(1e-4) < 1e-8
        assert abs(b.circle_cell_distortion(math.pi) - (1 - 4 / math.pi**2)) < 1e-15

    @pytest.mark.parametrize("bad", [0.0, -1.0, 2 * math.pi + 1e-6, math.nan])
    def test_circle_out_of_range(self, bad):
        with pytest.raises(ValueError):
            b.circle_cell_distortion(bad)

    def test_ramp_examples(self):
        assert abs(b.ramp_cell_distortion(1.0) - 1 / 12) < 1e-15
        assert b.ramp_cell_distortion(1e-9) < 1e-18
        assert abs(b.ramp_cell_distortion(0.5) - 0.03125) < 1e-15

    @pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
    def test_ramp_out_of_range(self, bad):
        with pytest.raises(ValueError):
            b.ramp_cell_distortion(bad)
        with pytest.raises(ValueError):
            b.ramp_cell_conditional_mse(bad)

    def test_ramp_conditional_identity(self):
        p = np.linspace(0.01, 1.0, 100)
        np.testing.assert_allclose(b.ramp_cell_conditional_mse(p), 1 / 12 - ((1 - p) / 2) ** 2 / 3, atol=1e-15)
        np.testing.assert_allclose(b.ramp_cell_distortion(p), p * b.ramp_cell_conditional_mse(p), atol=1e-15)

    def test_monotone(self):
        th = np.linspace(1e-3, 2 * math.pi, 2000)
        assert np.all(np.diff(b.circle_cell_distortion(th)) > 0)
        p = np.linspace(1e-3, 1.0, 2000)
        assert np.all(np.diff(b.ramp_cell_conditional_mse(p)) > 0)

    def test_half_circle_monte_carlo(self):
        rng = make_stream(1, "eval")
        theta = rng.uniform(0, math.pi, 10**7)
        z = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        err = ((z - z.mean(axis=0)) ** 2).sum(axis=1)
        se = err.std() / math.sqrt(err.size)
        assert abs(err.mean() - b.circle_cell_distortion(math.pi)) < 3 * se

    def test_random_cells_monte_carlo(self):
        rng = make_stream(2, "eval")
        for _ in range(5):
            arc = rng.uniform(0.05, 2 * math.pi)
            start = rng.uniform(0, 2 * math.pi)
            theta = start + rng.uniform(0, arc, 10**6)
            z = np.stack([np.cos(theta), np.sin(theta)], axis=1)
            centroid = z.mean(axis=0)
            err = ((z - centroid) ** 2).sum(axis=1)
            se = err.std() / 1e3
            assert abs(err.mean() - b.circle_cell_distortion(arc)) < 4 * se
            # centroid norm is sinc(arc / 2)
            norm_se = math.sqrt(err.mean() / 1e6)
            assert abs(np.linalg.norm(centroid) - b.sinc(arc / 2)) < 4 * norm_se

            p = rng.uniform(0.05, 1.0)
            v = rng.uniform(0, p, 10**6)
            # every sample of J on the cell moves by v; the conditional MSE of J_t,
            # averaged over t, is that of the wrapped value (t + v) mod 1
            t = rng.uniform(0, 1, 10**6)
            j = np.mod(t + v, 1.0) - 0.5
            # conditional mean at each t from the exact interval decoder
            jbar = np.where(t > 1 - p, t * (1 - 1 / p) + p / 2 - 1.5 + 1 / p, t + p / 2 - 0.5)
            e = (j - jbar) ** 2
            assert abs(e.mean() - b.ramp_cell_conditional_mse(p)) < 4 * e.std() / 1e3


class TestPartition:
    def test_circle_quarters(self):
        pt = b.partition_ed(b.Partition.uniform("circle", 4))
        assert abs(pt.entropy_bits - 2.0) < 1e-12
        assert abs(pt.distortion - (1 - b.sinc(math.pi / 4) ** 2)) < 1e-15
        assert abs(pt.distortion - 0.1894305) < 1e-6

    def test_ramp_halves(self):
        pt = b.partition_ed(b.Partition.uniform("ramp", 2))
        assert abs(pt.entropy_bits - 1.0) < 1e-12
        assert abs(pt.distortion - 0.0625) < 1e-15

    def test_single_cell(self):
        pt = b.partition_ed(b.Partition((2 * math.pi,), "circle"))
        assert pt.entropy_bits == 0.0 and abs(pt.distortion - 1.0) < 1e-15

    @pytest.mark.parametrize(
        "masses, kind",
        [((1.0, 2.0), "circle"), ((0.5, -0.5, 1.0), "ramp"), ((), "ramp"), ((1.5, -0.5), "ramp"), ((1.0,), "square")],
    )
    def test_invalid(self, masses, kind):
        with pytest.raises(ValueError):
            b.Partition(masses, kind)

    def test_negligible_cells_dropped(self):
        p = b.Partition.from_probabilities("ramp", [0.5, 1e-15, 0.5])
        assert len(p.masses) == 2


def _random_partitions(kind, n, rng):
    for _ in range(n):
        k = int(rng.integers(1, 200))
        q = rng.dirichlet(np.full(k, rng.uniform(0.2, 5.0)))
        yield b.Partition.from_probabilities(kind, q)


class TestDuals:
    @pytest.mark.parametrize("kind", ["circle", "ramp"])
    def test_zero_rate_end(self, kind):
        d0 = b.ZERO_RATE_DISTORTION[kind]
        for d in (d0, d0 * 1.5, 10.0):
            assert b.dual_lower_bound(kind, d) == 0.0

    def test_circle_below_uniform_four(self):
        assert b.circle_dual_lower_bound(1 - b.sinc(math.pi / 4) ** 2) <= 2.0

    def test_ramp_below_uniform_two(self):
        assert b.ramp_dual_lower_bound(0.0625) <= 1.0

    @pytest.mark.parametrize("bad", [0.0, -1.0, math.nan])
    def test_bad_distortion(self, bad):
        with pytest.raises(ValueError):
            b.dual_lower_bound("circle", bad)

    @pytest.mark.parametrize("kind", ["circle", "ramp"])
    def test_weak_duality_random_partitions(self, kind):
        rng = make_stream(17)
        for part in _random_partitions(kind, 1000, rng):
            pt = b.partition_ed(part)
            lo = b.dual_lower_bound(kind, max(pt.distortion, 1e-300))
            assert lo <= pt.entropy_bits + 1e-9

    @pytest.mark.parametrize("kind, d", sorted(REFERENCE_GAPS))
    def test_high_snr_gap(self, kind, d):
        upper = b.upper_at(kind, d)
        lower = b.dual_lower_bound(kind, d)
        gap = upper - lower
        assert 0.0 <= gap < 0.1
        assert abs(gap - REFERENCE_GAPS[(kind, d)]) < 1e-6

    @pytest.mark.parametrize("kind, d", [("circle", 0.05), ("circle", 0.5), ("ramp", 0.005), ("ramp", 0.05)])
    def test_dual_unimodal_in_lambda(self, kind, d):
        lam = np.geomspace(*b.DUAL_LAMBDA_RANGE, 120)
        vals = np.array([b.dual_objective(kind, x, d) for x in lam])
        peak = int(np.argmax(vals))
        assert np.all(np.diff(vals[: peak + 1]) >= -1e-9)
        assert np.all(np.diff(vals[peak:]) <= 1e-9)

    def test_inner_minimum_beats_grid(self):
        for kind in ("circle", "ramp"):
            for lam in (0.5, 10.0, 1e4):
                x, fx = b.inner_minimum(kind, lam)
                grid = np.linspace(1e-6, b.TOTAL_MASS[kind], 200001)
                f = b._circle_inner(grid, lam) if kind == "circle" else b._ramp_inner(grid, lam)
                assert fx <= f.min() + 1e-9


class TestUpperCurve:
    def test_circle_k2_point(self):
        pt = b.partition_ed(b.biuniform_partition("circle", 2, 0.0))
        assert abs(pt.entropy_bits - 1.0) < 1e-12
        assert abs(pt.distortion - (1 - 4 / math.pi**2)) < 1e-15

    def test_ramp_k1_point(self):
        pt = b.partition_ed(b.biuniform_partition("ramp", 1, 0.0))
        assert pt.entropy_bits == 0.0 and abs(pt.distortion - 1 / 12) < 1e-15

    @pytest.mark.parametrize("kind", ["circle", "ramp"])
    def test_nonincreasing_and_vectorized_matches_scalar(self, kind):
        curve = b.biuniform_upper_curve(kind, k_max=64, eps_steps=64)
        assert curve.is_nonincreasing()
        for p in curve.points[:: max(1, len(curve) // 10)]:
            ref = b.partition_ed(b.biuniform_partition(kind, p.params["K"], p.params["eps"]))
            assert abs(ref.entropy_bits - p.entropy_bits) < 1e-9
            assert abs(ref.distortion - p.distortion) < 1e-12

    def test_bad_args(self):
        with pytest.raises(ValueError):
            b.biuniform_partition("circle", 0, 0.1)
        with pytest.raises(ValueError):
            b.biuniform_upper_curve("circle", k_max=0)


class TestCurves:
    def test_circle_near_zero_rate(self):
        c = b.ed_curves("circle", [0.99])
        lo, up = c["lower"].entropies[0], c["upper"].entropies[0]
        assert lo <= up < 0.1

    @pytest.mark.parametrize("kind", ["circle", "ramp"])
    def test_endpoint_and_order(self, kind):
        c = b.ed_curves(kind, b.default_d_grid(kind, 40))
        assert c["lower"].entropies[-1] == 0.0 and c["upper"].entropies[-1] == 0.0
        assert np.all(c["lower"].entropies <= c["upper"].entropies)
        assert c["lower"].is_nonincreasing(1e-9) and c["upper"].is_nonincreasing(1e-9)

    def test_csv_round_trip(self):
        c = b.ed_curves("ramp", [0.001, 0.01, 1 / 12])["upper"]
        text = c.to_csv()
        assert text.splitlines()[0] == "distortion,entropy_bits,scheme,params"
        back = b.read_curve_csv(text, "upper_bound")
        np.testing.assert_allclose(back.entropies, c.entropies, rtol=1e-12)

    def test_bad_grid(self):
        with pytest.raises(ValueError):
            b.ed_curves("circle", [0.1, -0.1])


def test_golden_section_on_quadratic():
    x, fx = b.golden_section_min(lambda t: (t - 0.3) ** 2, 0.0, 1.0)
    assert abs(x - 0.3) < 1e-5 and fx < 1e-10


def test_ramp_interval_variance_quadrature():
    # conditional MSE of a cell equals the t-average of its conditional variance
    for p in (0.1, 0.5, 0.9):
        def var_at(t):
            lo, hi = t - 0.5, t + p - 0.5
            if hi < 0.5:
                return p * p / 12
            # wrapped: uniform on [t-1/2, 1/2) and [-1/2, t+p-3/2)
            a, c = 0.5 - lo, hi - 0.5
            m1 = (a * (lo + 0.5) / 2 + c * (-0.5 + hi - 1) / 2) / p
            m2 = ((0.5**3 - lo**3) / 3 + ((hi - 1) ** 3 + 0.5**3) / 3) / p
            return m2 - m1 * m1

        got, _ = integrate.quad(var_at, 0, 1, points=[1 - p], epsabs=1e-13)
        assert abs(got - b.ramp_cell_conditional_mse(p)) < 1e-9
