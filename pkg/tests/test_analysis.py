import json

import numpy as np
import pytest

from polcomp.analysis import (
    CoincidenceTally,
    DelayNotFound,
    Estimate,
    count_coincidences,
    cross_correlate,
    estimated_fidelity,
    expected_qber,
    fidelity_from_qber,
    find_delay,
    histogram_to_csv,
    histogram_to_dict,
    key_rate_positive,
    merge_histograms,
    qber,
    qber_contribution,
    tally_to_dict,
    visibility,
)
from polcomp.photostream import (
    DetectorModel,
    SourceModel,
    TagStream,
    alternating_windows,
    detect_pair_events,
    generate_pairs,
)
from polcomp.polmath import HV, phi_plus, retarder_unitary, werner_state


def poisson_stream(rng, rate_hz, duration_s, n_ports=2):
    duration_ps = int(duration_s * 1e12)
    n = rng.poisson(rate_hz * duration_s)
    t = np.sort(rng.integers(0, duration_ps, n))
    ports = rng.integers(0, n_ports, n).astype(np.uint8)
    return TagStream(t, ports, duration_ps)


def shifted_copy(stream, shift_ps):
    return TagStream(
        stream.t_ps + shift_ps,
        stream.detector_ids.copy(),
        stream.duration_ps + max(shift_ps, 0),
    )


class TestCrossCorrelate:
    def test_constructed_shift_dominates_one_bin(self):
        rng = np.random.default_rng(1)
        a = poisson_stream(rng, 2e4, 0.05)
        b = shifted_copy(a, 1_000_000)
        h = cross_correlate(a, b, bin_width_ps=50, max_offset_ps=1_200_000)
        peak = h.offsets_ps[np.argmax(h.counts)]
        assert peak == 1_000_000
        assert h.counts.max() == len(a)

    def test_swap_mirrors_offsets(self):
        rng = np.random.default_rng(2)
        a = poisson_stream(rng, 1e4, 0.02)
        b = poisson_stream(rng, 1e4, 0.02)
        h_ab = cross_correlate(a, b, 100, 50_000)
        h_ba = cross_correlate(b, a, 100, 50_000)
        assert np.array_equal(h_ab.counts, h_ba.counts[::-1])

    def test_independent_streams_flat_at_accidental_rate(self):
        rng = np.random.default_rng(3)
        rate, duration = 1e6, 0.02
        a = poisson_stream(rng, rate, duration)
        b = poisson_stream(rng, rate, duration)
        bin_ps = 1000
        h = cross_correlate(a, b, bin_ps, 25_000)
        # accidental oracle: r_a * r_b * bin * T
        expect = rate * rate * (bin_ps * 1e-12) * duration
        sigma = np.sqrt(expect)
        assert np.all(np.abs(h.counts - expect) < 4 * sigma + 1)

    def test_empty_stream_rejected(self):
        rng = np.random.default_rng(4)
        a = poisson_stream(rng, 1e4, 0.01)
        empty = TagStream(np.array([], dtype=np.int64), np.array([], dtype=np.uint8), 100)
        with pytest.raises(ValueError):
            cross_correlate(a, empty)

    def test_merge_is_associative_and_commutative(self):
        rng = np.random.default_rng(5)
        hs = []
        for _ in range(3):
            a = poisson_stream(rng, 1e4, 0.01)
            b = poisson_stream(rng, 1e4, 0.01)
            hs.append(cross_correlate(a, b, 100, 10_000))
        h12 = merge_histograms(hs[0], hs[1])
        left = merge_histograms(h12, hs[2]).counts
        right = merge_histograms(hs[0], merge_histograms(hs[1], hs[2])).counts
        assert np.array_equal(left, right)
        assert np.array_equal(
            merge_histograms(hs[1], hs[0]).counts, h12.counts
        )


class TestFindDelay:
    def test_exact_recovery_without_jitter(self):
        rng = np.random.default_rng(6)
        a = poisson_stream(rng, 2e4, 0.05)
        b = shifted_copy(a, 1_000_000)
        h = cross_correlate(a, b, 50, 1_200_000)
        est = find_delay(h)
        assert est.offset_ps == 1_000_000
        assert est.confidence > 5

    def test_jittered_recovery_within_one_bin(self):
        rng = np.random.default_rng(7)
        duration_ps = int(1e12)
        base = np.sort(rng.integers(0, duration_ps, 10_000))
        delay = 37_000
        jittered = base + delay + np.rint(rng.normal(0, 100, len(base))).astype(np.int64)
        jittered = np.sort(jittered)
        a = TagStream(base, np.zeros(len(base), np.uint8), duration_ps)
        b = TagStream(jittered, np.zeros(len(base), np.uint8), duration_ps + delay + 1000)
        est = find_delay(cross_correlate(a, b, 50, 100_000))
        assert abs(est.offset_ps - delay) <= 50

    def test_pure_noise_raises(self):
        rng = np.random.default_rng(8)
        a = poisson_stream(rng, 200, 1.0)   # dark-count-like streams
        b = poisson_stream(rng, 200, 1.0)
        with pytest.raises(DelayNotFound):
            find_delay(cross_correlate(a, b, 50, 2_000_000))

    def test_tie_breaks_toward_smaller_offset(self):
        from polcomp.analysis import CorrelationHistogram

        offsets = np.array([-300, -200, -100, 0, 100, 200, 300])
        counts = np.array([0, 40, 0, 0, 0, 40, 0])
        h = CorrelationHistogram(100, offsets, counts)
        est = find_delay(h, min_confidence=1.0)
        assert est.offset_ps == pytest.approx(-200.0)

    def test_centroid_refinement(self):
        from polcomp.analysis import CorrelationHistogram

        offsets = np.arange(-5, 6) * 50
        counts = np.zeros(11, dtype=int)
        counts[5] = 100  # at 0
        counts[6] = 100  # at 50: centroid must land at 25
        h = CorrelationHistogram(50, offsets, counts)
        est = find_delay(h, min_confidence=1.0)
        assert est.offset_ps == pytest.approx(25.0)


class TestCountCoincidences:
    def _streams(self, p, seed, rate=4e4, duration=0.5):
        events = generate_pairs(SourceModel(pair_rate_hz=rate), duration, seed)
        det = DetectorModel(efficiency=1.0, jitter_sigma_ps=0.0, dark_rate_hz=0.0)
        return detect_pair_events(
            events, werner_state(p), HV, HV, det, det, seed=(seed, 1)
        )

    def test_perfect_pairs_have_no_cross_ports(self):
        a, b = self._streams(1.0, 10)
        windows = alternating_windows(a.duration_ps, a.duration_ps)  # all HV
        tally = count_coincidences(a, b, 0.0, 500, windows)
        assert tally.n_diff_hv == 0
        assert tally.n_same_hv == len(a)

    def test_werner_09_cross_fraction(self):
        a, b = self._streams(0.9, 11)
        windows = alternating_windows(a.duration_ps, int(0.05e12))
        tally = count_coincidences(a, b, 0.0, 500, windows)
        q = qber(tally)
        assert abs(q.value - 0.05) < 3 * q.stderr

    def test_minimum_window_enforced(self):
        a, b = self._streams(1.0, 12, rate=1e4, duration=0.1)
        windows = alternating_windows(a.duration_ps, a.duration_ps)
        tally = count_coincidences(a, b, 0.0, 0, windows)
        assert tally.total == len(a)  # window clamped to 1 ps, exact matches remain

    def test_each_tag_used_once(self):
        # two a-tags close to one b-tag: only one pair may form
        a = TagStream(np.array([1000, 1100]), np.array([0, 0], np.uint8), 10_000)
        b = TagStream(np.array([1050]), np.array([0], np.uint8), 10_000)
        tally = count_coincidences(a, b, 0.0, 500, [(0, 10_000, "HV")])
        assert tally.total == 1

    def test_mismatched_basis_windows_dropped(self):
        a = TagStream(np.array([100, 60_000]), np.array([0, 0], np.uint8), 100_000)
        b = TagStream(np.array([120, 60_020]), np.array([0, 0], np.uint8), 100_000)
        windows = [(0, 50_000, "HV"), (50_000, 100_000, "DA")]
        tally = count_coincidences(a, b, 0.0, 500, windows)
        assert tally.n_same_hv == 1
        assert tally.n_same_da == 1
        # now a window split that straddles the second pair
        windows = [(0, 60_010, "HV"), (60_010, 100_000, "DA")]
        tally = count_coincidences(a, b, 0.0, 500, windows)
        assert tally.total == 1


class TestEstimators:
    def test_qber_trivial_cases(self):
        assert qber(CoincidenceTally(50, 0, 50, 0)).value == 0.0
        assert qber(CoincidenceTally(0, 50, 0, 50)).value == 1.0

    def test_qber_network_scale(self):
        # 3.4% wrong fraction matches the measured network value
        t = CoincidenceTally(4830, 170, 4830, 170)
        assert qber(t).value == pytest.approx(0.034, abs=1e-12)

    def test_qber_zero_total_rejected(self):
        with pytest.raises(ValueError):
            qber(CoincidenceTally())

    def test_qber_stderr_scales_inverse_sqrt_n(self):
        rng = np.random.default_rng(13)
        ratios = []
        for _ in range(50):
            n = 2000
            q_true = 0.034
            k1 = rng.binomial(n, q_true)
            k2 = rng.binomial(2 * n, q_true)
            e1 = qber(CoincidenceTally(n - k1, k1, 0, 0))
            e2 = qber(CoincidenceTally(2 * n - k2, k2, 0, 0))
            ratios.append(e1.stderr / e2.stderr)
        assert np.mean(ratios) == pytest.approx(np.sqrt(2), rel=0.1)

    def test_visibility_values(self):
        assert visibility(100, 0).value == 1.0
        assert visibility(99, 1).value == pytest.approx(0.98)

    def test_visibility_stderr_propagation(self):
        est = visibility(9900, 100)
        # delta-method oracle: 2*sqrt(a*b/(a+b)^3)
        assert est.stderr == pytest.approx(2 * np.sqrt(9900 * 100 / 10000**3))

    def test_visibility_zero_total_rejected(self):
        with pytest.raises(ValueError):
            visibility(0, 0)

    def test_qber_contribution_table_values(self):
        assert qber_contribution(0.9817) == pytest.approx(0.00915, abs=1e-5)
        assert qber_contribution(0.976) == pytest.approx(0.0120, abs=1e-4)
        assert qber_contribution(1.0) == 0.0

    def test_fidelity_from_qber(self):
        assert fidelity_from_qber(0.034) == pytest.approx(0.932)
        assert fidelity_from_qber(0.0335) == pytest.approx(0.933)
        assert fidelity_from_qber(0.0) == 1.0
        with pytest.raises(ValueError):
            fidelity_from_qber(0.6)

    def test_estimated_fidelity_reconstructions(self):
        assert estimated_fidelity(0.0091) == pytest.approx(0.933, abs=5e-4)
        assert estimated_fidelity(0.0077) == pytest.approx(0.9358, abs=5e-4)
        assert estimated_fidelity(0.0118) == pytest.approx(0.9276, abs=5e-4)

    def test_key_rate_threshold(self):
        assert key_rate_positive(0.034)
        assert key_rate_positive(0.0)
        assert not key_rate_positive(0.11)

    def test_estimate_serialization(self):
        est = Estimate(0.5, 0.01)
        assert est.to_dict() == {"value": 0.5, "stderr": 0.01}

    def test_werner_round_trip_fidelity(self):
        # ground truth p comes back through the q -> 1-2q convention
        for p in (0.8, 0.9, 0.933):
            q = expected_qber(np.eye(2), np.eye(2), werner_state(p))
            assert fidelity_from_qber(q) == pytest.approx(p, abs=1e-12)


class TestExpectedQber:
    def test_identity_arms_hit_werner_floor(self):
        assert expected_qber(np.eye(2), np.eye(2), werner_state(1.0)) == pytest.approx(0.0, abs=1e-12)
        assert expected_qber(np.eye(2), np.eye(2), werner_state(0.933)) == pytest.approx(0.0335, abs=1e-10)

    def test_half_wave_on_one_arm_maximizes(self):
        hwp = retarder_unitary(np.pi, np.pi / 4)
        q = expected_qber(hwp, np.eye(2), phi_plus())
        # HV flips completely, DA stays correlated: mean is 1/2
        assert q == pytest.approx(0.5, abs=1e-12)


class TestExports:
    def test_histogram_csv_and_json(self, tmp_path):
        rng = np.random.default_rng(14)
        a = poisson_stream(rng, 1e4, 0.01)
        b = poisson_stream(rng, 1e4, 0.01)
        h = cross_correlate(a, b, 100, 5000)
        csv_path = tmp_path / "hist.csv"
        histogram_to_csv(h, csv_path)
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "offset_ps,count"
        assert len(lines) == len(h.counts) + 1
        doc = histogram_to_dict(h)
        assert doc["schema_version"] == 1
        assert doc["counts"] == [int(c) for c in h.counts]
        json.dumps(doc)

    def test_tally_dict(self):
        t = CoincidenceTally(1, 2, 3, 4)
        d = tally_to_dict(t)
        assert d["n_same_hv"] == 1 and d["n_diff_da"] == 4
