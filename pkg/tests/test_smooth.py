import math

import numpy as np
import pytest

from birkhoff.exceptions import BudgetError, InfeasibleError, ValidationError
from birkhoff.smooth import (
    MPMap,
    TorusExpandingMap,
    VianaMap,
    check_invariant_interval,
    constant,
    empirical_spectrum,
    gap_sweep,
    indicator,
    mp_apply,
    mp_inverse_branches,
    mp_level_spectrum,
    spec_gap_estimate,
    viana_apply,
)
from birkhoff.thermo import DeltaSchedule, direct_level_spectrum


@pytest.fixture
def mp():
    return MPMap(alpha=0.5)


@pytest.fixture
def doubling():
    return TorusExpandingMap(multipliers=[2])


class TestMPMap:
    def test_values(self, mp):
        assert mp_apply(mp, 0.25) == pytest.approx(0.25 * (1 + math.sqrt(0.5)), abs=1e-12)
        assert mp_apply(mp, 0.25) == pytest.approx(0.426777, abs=1e-6)
        assert mp_apply(mp, 0.75) == 0.5
        assert mp_apply(mp, 0.0) == 0.0
        assert mp_apply(mp, 0.5) == pytest.approx(1.0)

    def test_domain(self, mp):
        with pytest.raises(ValidationError):
            mp_apply(mp, 1.5)

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            MPMap(alpha=1.0)

    def test_inverse_branches(self, mp):
        left, right = mp_inverse_branches(mp, mp_apply(mp, 0.25))
        assert left == pytest.approx(0.25, abs=1e-12)
        assert right == pytest.approx((mp_apply(mp, 0.25) + 1) / 2)
        assert mp_inverse_branches(mp, 0.5)[1] == 0.75

    def test_round_trip_grid(self, mp):
        # y = 0 has right preimage 1/2, which the left branch owns
        ys = np.linspace(0.0, 1.0, 10_001)[1:]
        left, right = mp.inverse_branches(ys)
        assert np.all(left <= 0.5) and np.all(right >= 0.5)
        np.testing.assert_allclose(mp.apply(left), ys, atol=1e-12)
        np.testing.assert_allclose(mp.apply(right), ys, atol=1e-12)


class TestTorusMap:
    def test_multipliers(self):
        with pytest.raises(ValueError):
            TorusExpandingMap(multipliers=[1])

    def test_apply(self, doubling):
        assert doubling.apply(0.75) == 0.5
        np.testing.assert_allclose(TorusExpandingMap(multipliers=[2, 3]).apply([0.3, 0.4]), [0.6, 0.2])

    def test_inverse_branches(self):
        tripling = TorusExpandingMap(multipliers=[3])
        for x in tripling.inverse_branches(0.3):
            assert tripling.apply(x) == pytest.approx(0.3)

    def test_exactness_time(self, doubling):
        assert doubling.exactness_time(0.1) == 3
        assert doubling.exactness_time(0.5) == 0


class TestVianaMap:
    def test_values(self):
        viana = VianaMap()
        theta, x = viana_apply(viana, 0.25, 0.0)
        assert theta == pytest.approx(0.0)
        assert x == pytest.approx(1.0, abs=1e-12)
        assert viana_apply(viana, 0.0, 0.0) == pytest.approx((0.0, 1.01))

    def test_first_coordinate_is_d_to_one(self):
        viana = VianaMap()
        grid = np.arange(viana.d ** 2) / viana.d ** 2
        images, _ = viana.apply(grid, np.zeros_like(grid))
        values, counts = np.unique(images, return_counts=True)
        np.testing.assert_array_equal(values, np.arange(viana.d) / viana.d)
        assert np.all(counts == viana.d)

    def test_theta_range(self):
        with pytest.raises(ValidationError):
            viana_apply(VianaMap(), 1.0, 0.0)

    def test_base_degree(self):
        with pytest.raises(ValueError):
            VianaMap(d=8)

    def test_invariant_interval_report(self):
        report = check_invariant_interval(VianaMap(), size=500, n=50, seed=1)
        assert report["size"] == 500
        assert report["escaped"] <= 500
        if report["x_max"] is not None:
            assert report["x_max"] <= report["escape_bound"]

    def test_everything_escapes(self):
        viana = VianaMap(escape_bound=1e-3)
        with pytest.raises(InfeasibleError):
            empirical_spectrum(viana, indicator(0.0, 1.0, coordinate=1), 1000, 10, seed=0, transient=0)


class TestEmpiricalSpectrum:
    def test_doubling_binomial_rates(self, doubling):
        report = empirical_spectrum(doubling, indicator(0.5, 1.0), 100_000, 20, seed=0)
        centers = np.array(report.centers)
        modal = int(np.argmax(report.counts))
        assert centers[modal] == pytest.approx(0.5)
        at = int(np.argmin(np.abs(centers - 0.3)))
        expected = math.log(math.comb(20, 10) / math.comb(20, 6)) / 20
        assert report.rates[at] == pytest.approx(expected, abs=0.005)
        assert report.rates[at] == pytest.approx(0.078, abs=0.005)
        assert sum(report.counts) == 100_000

    def test_constant_observable(self, doubling):
        report = empirical_spectrum(doubling, constant(0.25), 1000, 20, seed=0)
        assert report.counts == [1000]
        assert report.rates == [0.0]

    def test_independent_of_workers(self, doubling):
        serial = empirical_spectrum(doubling, indicator(0.5, 1.0), 20_000, 12, seed=4, workers=1)
        parallel = empirical_spectrum(doubling, indicator(0.5, 1.0), 20_000, 12, seed=4, workers=3)
        assert serial.counts == parallel.counts

    def test_seed_changes_sample(self, doubling):
        first = empirical_spectrum(doubling, indicator(0.5, 1.0), 5000, 12, seed=1)
        second = empirical_spectrum(doubling, indicator(0.5, 1.0), 5000, 12, seed=2)
        assert first.counts != second.counts

    def test_seed_stability(self, doubling):
        edges = list((np.arange(22) - 0.5) / 20)
        first = empirical_spectrum(doubling, indicator(0.5, 1.0), 100_000, 20, bins=edges, seed=1)
        second = empirical_spectrum(doubling, indicator(0.5, 1.0), 100_000, 20, bins=edges, seed=2)
        total_variation = 0.5 * np.abs(np.array(first.fractions) - np.array(second.fractions)).sum()
        assert total_variation <= 0.05

    def test_two_dimensional_torus(self):
        torus = TorusExpandingMap(multipliers=[2, 3])
        report = empirical_spectrum(torus, indicator(0.0, 0.5, coordinate=1), 2000, 10, seed=0)
        assert sum(report.counts) == 2000

    def test_ensemble_size(self, doubling):
        with pytest.raises(ValidationError):
            empirical_spectrum(doubling, indicator(0.5, 1.0), 999, 20)


class TestSpecificationGap:
    def test_doubling_gap(self, doubling):
        report = spec_gap_estimate(doubling, [(0.1234, 6), (0.8765, 6)], 0.1, p_max=8)
        assert report.found
        assert report.gap <= 4
        assert report.verified

    def test_continuation_needs_no_gap(self, doubling):
        x1 = 0.1234
        x2 = x1
        for _ in range(4):
            x2 = doubling.apply(x2)
        report = spec_gap_estimate(doubling, [(x1, 4), (x2, 4)], 0.05)
        assert report.gap == 0
        assert report.witness == x1

    def test_mp_gap(self, mp):
        report = spec_gap_estimate(mp, [(0.7, 3), (0.3, 3)], 0.1)
        assert report.found
        assert report.verified

    def test_sweep_ratios(self, doubling):
        sweep = gap_sweep(doubling, 0.1234, [2, 4, 6], 0.8765, 4, 0.1, p_max=8)
        assert all(g is not None and g <= 2 for g in sweep.gaps)
        assert sweep.ratios == [g / n for g, n in zip(sweep.gaps, [2, 4, 6])]

    def test_unsupported_maps(self):
        with pytest.raises(ValidationError):
            spec_gap_estimate(VianaMap(), [(0.1, 2), (0.2, 2)], 0.1)
        with pytest.raises(ValidationError):
            spec_gap_estimate(TorusExpandingMap(multipliers=[2, 2]), [(0.1, 2), (0.2, 2)], 0.1)


class TestMPLevelSpectrum:
    def test_central_level(self, mp):
        curve = mp_level_spectrum(mp, [0.5], 18, DeltaSchedule(c=0.5))
        assert curve.values[0] == pytest.approx(math.log(2), abs=0.03)
        assert curve.note == "coding-based, distortion-uncorrected"

    def test_matches_symbolic_counts(self, mp, full, ones, zero):
        schedule = DeltaSchedule(c=0.5)
        coded = mp_level_spectrum(mp, [0.3, 0.5], 18, schedule)
        direct, _ = direct_level_spectrum(full, ones, zero, [0.3, 0.5], schedule, range(8, 19))
        for a, b in zip(coded.values, direct.values):
            assert a == pytest.approx(b, abs=0.01)

    def test_outside_unit_interval(self, mp):
        curve = mp_level_spectrum(mp, [1.5], 12)
        assert curve.values == [None]
        assert curve.feasible == [False]

    def test_depth_budget(self, mp):
        with pytest.raises(BudgetError):
            mp_level_spectrum(mp, [0.5], 23)
