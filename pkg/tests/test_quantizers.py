import math

import numpy as np
import pytest
from scipy import integrate, stats

from manifold_codec import bounds
from manifold_codec.bounds import Partition
from manifold_codec.quantizers import (
    ArcQuantizer,
    HemisphereProductQuantizer,
    IntervalQuantizer,
    arc_decode,
    arc_encode,
    conditional_ramp_mean,
    hemisphere_product_encode,
    interval_decode,
    interval_encode,
    oracle_ed,
    quantizer_from_text,
    ramp_integrated_sq_error,
)
from manifold_codec.sources import (
    circle_batch,
    circle_from_angle,
    make_stream,
    ramp_batch,
    ramp_from_phase,
    sample_times,
)

K_VALUES = (1, 2, 4, 8, 16, 32, 64)


def _random_partition(kind, rng, k_max=12):
    k = int(rng.integers(1, k_max + 1))
    return Partition.from_probabilities(kind, rng.dirichlet(np.ones(k)))


class TestArc:
    @pytest.mark.parametrize("theta, want", [(0.0, 0), (math.pi, 2), (2 * math.pi - 1e-9, 3)])
    def test_encode_examples(self, theta, want):
        q = ArcQuantizer.uniform(4)
        np.testing.assert_allclose(q.boundaries, [0, math.pi / 2, math.pi, 3 * math.pi / 2, 2 * math.pi])
        assert arc_encode(q, circle_from_angle(theta)) == want

    def test_decode_full_circle(self):
        np.testing.assert_allclose(arc_decode(ArcQuantizer.uniform(1), 0), [0.0, 0.0], atol=1e-16)

    def test_decode_right_half(self):
        q = ArcQuantizer.uniform(2, offset=-math.pi / 2)
        np.testing.assert_allclose(arc_decode(q, 0), [2 / math.pi, 0.0], atol=1e-15)

    def test_decode_tiny_arc(self):
        q = ArcQuantizer(np.array([0.7, 0.7 + 1e-6, 0.7 + 2 * math.pi]))
        c = arc_decode(q, 0)
        assert abs(np.linalg.norm(c) - 1.0) < 1e-12
        assert abs(math.atan2(c[1], c[0]) - 0.7) < 1e-6

    def test_invalid_index(self):
        with pytest.raises((IndexError, ValueError)):
            arc_decode(ArcQuantizer.uniform(4), 4)

    def test_invalid_boundaries(self):
        with pytest.raises(ValueError):
            ArcQuantizer(np.array([0.0, 1.0, 0.5, 2 * math.pi]))
        with pytest.raises(ValueError):
            ArcQuantizer(np.array([0.0, 1.0]))

    def test_lengths_match_partition(self):
        part = _random_partition("circle", make_stream(3))
        q = ArcQuantizer.from_partition(part, offset=1.0)
        np.testing.assert_allclose(q.lengths, part.masses, atol=1e-12)

    def test_decoder_is_conditional_mean(self):
        rng = make_stream(4, "eval")
        for _ in range(4):
            q = ArcQuantizer.from_partition(_random_partition("circle", rng), rng.uniform(0, 2 * math.pi))
            z = circle_batch(rng.uniform(0, 2 * math.pi, 10**5))
            c = q.encode_points(z)
            for i in np.unique(c):
                zi = z[c == i]
                if len(zi) < 50:
                    continue
                se = zi.std(axis=0) / math.sqrt(len(zi)) + 1e-12
                assert np.all(np.abs(zi.mean(axis=0) - q.decode(i)) < 4 * se)


class TestInterval:
    @pytest.mark.parametrize("k, v, want", [(2, 0.25, 0), (2, 0.5, 1), (4, 0.999, 3)])
    def test_encode_examples(self, k, v, want):
        assert interval_encode(IntervalQuantizer.uniform(k), ramp_from_phase(v, 64)) == want

    def test_decode_full_cell_is_zero(self):
        np.testing.assert_allclose(interval_decode(IntervalQuantizer.uniform(1), 0), 0.0, atol=1e-15)

    @pytest.mark.parametrize("s", [0.1, 0.25, 0.5, 0.9])
    def test_decode_first_cell_formula(self, s):
        q = IntervalQuantizer(np.array([0.0, s, 1.0]))
        t = np.linspace(0.0, 1.0, 1001)
        want = np.where(t > 1 - s, t * (1 - 1 / s) + s / 2 - 1.5 + 1 / s, t - (1 - s) / 2)
        np.testing.assert_allclose(q.decode(0, t), want, atol=1e-12)
        got, _ = integrate.quad(lambda x: float(q.decode(0, np.array([x]))[0]) ** 2, 0, 1, points=[1 - s], epsabs=1e-13)
        assert abs(got - ((1 - s) / 2) ** 2 / 3) < 1e-9

    def test_decode_integrates_to_zero(self):
        rng = make_stream(6)
        t = (np.arange(10**4) + 0.5) / 10**4
        for _ in range(5):
            q = IntervalQuantizer.from_partition(_random_partition("ramp", rng))
            for i in range(q.size):
                assert abs(q.decode(i, t).mean()) < 1e-6

    def test_decoder_is_conditional_mean(self):
        rng = make_stream(7, "eval")
        d_s = 16
        for _ in range(4):
            q = IntervalQuantizer.from_partition(_random_partition("ramp", rng))
            x = ramp_batch(rng.uniform(0, 1, 10**5), d_s)
            c = q.encode_signals(x)
            for i in np.unique(c):
                xi = x[c == i]
                if len(xi) < 50:
                    continue
                se = xi.std(axis=0) / math.sqrt(len(xi)) + 1e-12
                assert np.all(np.abs(xi.mean(axis=0) - q.decode(i, sample_times(d_s))) < 4 * se + 1e-9)

    def test_integrated_error_quadrature(self):
        for v, a, b in ((0.1, 0.0, 0.3), (0.95, 0.8, 1.0), (0.5, 0.0, 1.0)):
            f = lambda t: (np.mod(t + v, 1.0) - 0.5 - conditional_ramp_mean(a, b, t)) ** 2
            ref, _ = integrate.quad(f, 0, 1, points=sorted({1 - v, 1 - a, 1 - b} - {0.0, 1.0}), epsabs=1e-13)
            assert abs(float(ramp_integrated_sq_error(v, a, b)) - ref) < 1e-10

    def test_invalid(self):
        with pytest.raises(ValueError):
            IntervalQuantizer(np.array([0.1, 0.5, 1.0]))
        with pytest.raises((IndexError, ValueError)):
            interval_decode(IntervalQuantizer.uniform(2), 2)


class TestHemisphere:
    def test_examples(self):
        assert hemisphere_product_encode(2, circle_from_angle(math.pi / 4)) == (1, 1)
        assert hemisphere_product_encode(1, circle_from_angle(3 * math.pi / 2)) == (0, 0)

    @pytest.mark.parametrize("k", [1, 2, 3, 8])
    def test_codes_uniform(self, k):
        q = HemisphereProductQuantizer(k)
        z = circle_batch(make_stream(k, "eval").uniform(0, 2 * math.pi, 10**6))
        c = q.encode_points(z)
        counts = np.bincount(c[:, 0] * k + c[:, 1], minlength=2 * k)
        assert counts.size == 2 * k
        assert stats.chisquare(counts).pvalue > 0.01

    @pytest.mark.parametrize("k", [1, 2, 4, 7])
    def test_cells_are_arcs_and_match_uniform_2k(self, k):
        q = HemisphereProductQuantizer(k)
        theta = make_stream(k).uniform(0, 2 * math.pi, 10**5)
        z = circle_batch(theta)
        c = q.encode_points(z)
        for code in np.unique(c, axis=0):
            lo, hi = q.arc(*code)
            th = theta[np.all(c == code, axis=1)]
            assert np.all((th >= lo - 1e-9) & (th <= hi + 1e-9))
        arcs = ArcQuantizer.uniform(2 * k)
        np.testing.assert_allclose(q.decode(c), arcs.decode(arcs.encode_points(z)), atol=1e-12)
        a = oracle_ed(q, "monte_carlo", n=10**5, seed=1)
        b = oracle_ed(arcs, "monte_carlo", n=10**5, seed=1)
        assert a.entropy_bits == pytest.approx(b.entropy_bits, abs=1e-12)
        assert a.distortion == pytest.approx(b.distortion, abs=1e-12)


class TestOracleEd:
    @pytest.mark.parametrize("k", K_VALUES)
    def test_circle_uniform(self, k):
        q = ArcQuantizer.uniform(k)
        ex = oracle_ed(q, "exact")
        want = 1 - bounds.sinc(math.pi / k) ** 2
        assert abs(ex.entropy_bits - math.log2(k)) < 1e-12
        assert abs(ex.distortion - want) < 1e-14
        mc = oracle_ed(q, "monte_carlo", n=10**6, seed=k)
        assert abs(mc.distortion - want) <= 4 * mc.stderr + 1e-15
        assert abs(mc.entropy_bits - math.log2(k)) <= 4 * mc.entropy_stderr + (k - 1) / (2e6 * math.log(2)) * 3 + 1e-12

    @pytest.mark.parametrize("k", K_VALUES)
    def test_ramp_uniform(self, k):
        q = IntervalQuantizer.uniform(k)
        ex = oracle_ed(q, "exact")
        want = (2 - 1 / k) / (12 * k)
        assert abs(ex.entropy_bits - math.log2(k)) < 1e-12
        assert abs(ex.distortion - want) < 1e-15
        mc = oracle_ed(q, "monte_carlo", n=10**6, seed=k)
        assert abs(mc.distortion - want) <= 4 * mc.stderr + 1e-15

    def test_ramp_k1(self):
        pt = oracle_ed(IntervalQuantizer.uniform(1), "exact")
        assert pt.entropy_bits == 0.0 and abs(pt.distortion - 1 / 12) < 1e-15

    def test_ramp_discretized_mode_close(self):
        q = IntervalQuantizer.uniform(4)
        pt = oracle_ed(q, "monte_carlo", n=10**5, ramp_dim=64)
        assert abs(pt.distortion - 7 / 192) < 1e-3

    def test_random_partitions_exact_vs_mc(self):
        rng = make_stream(8)
        for kind in ("circle", "ramp"):
            for _ in range(3):
                part = _random_partition(kind, rng)
                q = ArcQuantizer.from_partition(part, 0.3) if kind == "circle" else IntervalQuantizer.from_partition(part)
                ex, mc = oracle_ed(q, "exact"), oracle_ed(q, "monte_carlo", n=2 * 10**5, seed=3)
                assert abs(ex.distortion - mc.distortion) < 4 * mc.stderr

    def test_errors(self):
        with pytest.raises(ValueError):
            oracle_ed(ArcQuantizer.uniform(2), "monte_carlo", n=999)
        with pytest.raises(ValueError):
            oracle_ed(ArcQuantizer.uniform(2), "bogus")

    def test_deterministic(self):
        q = ArcQuantizer.uniform(5)
        a, b = oracle_ed(q, "monte_carlo", n=5000, seed=2), oracle_ed(q, "monte_carlo", n=5000, seed=2)
        assert (a.entropy_bits, a.distortion) == (b.entropy_bits, b.distortion)


def test_text_round_trip():
    rng = make_stream(9)
    for q in (
        ArcQuantizer.from_partition(_random_partition("circle", rng), 0.1),
        IntervalQuantizer.from_partition(_random_partition("ramp", rng)),
    ):
        back = quantizer_from_text(q.to_text())
        assert type(back) is type(q)
        assert np.array_equal(back.boundaries, q.boundaries)
    with pytest.raises(ValueError):
        quantizer_from_text("kind arc\nK 2\nboundaries 0 1\n")
