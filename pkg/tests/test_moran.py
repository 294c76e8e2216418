import math

import numpy as np
import pytest

from birkhoff.exceptions import BudgetError, InfeasibleError, ValidationError
from birkhoff.moran import (
    MoranComponent,
    MoranConfig,
    MoranScheme,
    SeparatedFamily,
    build_family,
    build_scheme,
    glue,
    moran_measure,
    run_moran_suite,
    sample_balls,
    target_constant,
    verify_level_convergence,
    verify_pdp,
    verify_separation_nesting,
)
from birkhoff.symbolic import Potential, ShiftSpace, enumerate_words


@pytest.fixture
def golden_config():
    return MoranConfig(alpha=0.3, gamma=0.1, k_max=2, deltas=[0.2, 0.15], lengths=[5, 6], copies=[1, 2])


@pytest.fixture
def golden_scheme(golden, golden_ones, golden_config):
    psi = golden_ones.scaled(0.3)
    families = [build_family(golden, golden_ones, psi, k, golden_config) for k in (1, 2)]
    return build_scheme(golden, families, golden_config)


class TestMoranConfig:
    def test_deltas_must_decrease(self):
        with pytest.raises(ValueError, match="strictly decreasing"):
            MoranConfig(alpha=0.5, gamma=0.1, k_max=2, deltas=[0.1, 0.2], lengths=[8, 10], copies=[1, 1])

    def test_schedule_lengths(self):
        with pytest.raises(ValueError, match="one per level"):
            MoranConfig(alpha=0.5, gamma=0.1, k_max=2, deltas=[0.2], lengths=[8, 10], copies=[1, 1])

    def test_thresholds_bound_lengths(self):
        with pytest.raises(ValueError):
            MoranConfig(alpha=0.5, gamma=0.1, k_max=2, deltas=[0.2, 0.1], lengths=[8, 10], copies=[1, 1],
                        thresholds=[9, 10])

    def test_components_combine_to_alpha(self):
        with pytest.raises(ValueError, match="combine to alpha"):
            MoranConfig(alpha=0.5, gamma=0.1, k_max=1, deltas=[0.2], lengths=[10], copies=[1],
                        components=[MoranComponent(weight=0.5, alpha=0.3), MoranComponent(weight=0.5, alpha=0.9)])


class TestFamilies:
    def test_fixture_sizes(self, full, ones, zero, moran_fixture):
        families = [build_family(full, ones, zero, k, moran_fixture) for k in (1, 2, 3)]
        assert [f.size for f in families] == [182, 672, 2508]
        assert [f.length for f in families] == [8, 10, 12]
        for f in families:
            assert f.per_symbol >= math.log(2) - 0.1
            assert f.max_deviation < moran_fixture.deltas[f.level - 1]

    def test_words_are_unique_and_admissible(self, golden, golden_ones, golden_zero, golden_config):
        family = build_family(golden, golden_ones, golden_zero, 2, golden_config)
        assert family.size == 16
        rows = [tuple(int(s) for s in w) for w in family.words]
        assert len(set(rows)) == len(rows)
        assert all(golden.is_admissible(w) for w in rows)

    def test_log_partition(self, full, ones):
        family = SeparatedFamily.from_words(1, [(0, 1), (1, 1), (1, 0)], ones)
        assert family.log_partition == pytest.approx(math.log(2 * math.e + math.e ** 2))

    def test_components_are_glued(self, full, ones, zero):
        config = MoranConfig(
            alpha=0.5, gamma=0.1, k_max=1, deltas=[0.25], lengths=[10], copies=[1],
            components=[MoranComponent(weight=0.5, alpha=0.3), MoranComponent(weight=0.5, alpha=0.7)],
        )
        family = build_family(full, ones, zero, 1, config)
        assert family.segment_lengths == [5, 5]
        assert family.size == 225
        assert family.length == 10
        first = family.words[:, :5].sum(axis=1)
        second = family.words[:, 5:].sum(axis=1)
        assert set(first.tolist()) == {1, 2}
        assert set(second.tolist()) == {3, 4}

    def test_unwitnessed_level(self, full, ones, zero):
        config = MoranConfig(alpha=0.5, gamma=0.1, k_max=1, deltas=[1e-9], lengths=[9], copies=[1])
        with pytest.raises(InfeasibleError, match="level set not witnessed"):
            build_family(full, ones, zero, 1, config)

    def test_length_budget(self, full, ones, zero, restore_settings):
        restore_settings.nmax = 10
        config = MoranConfig(alpha=0.5, gamma=0.1, k_max=1, deltas=[0.2], lengths=[12], copies=[1])
        with pytest.raises(BudgetError):
            build_family(full, ones, zero, 1, config)


class TestGlue:
    def test_empty(self, golden):
        with pytest.raises(ValidationError):
            glue(golden, [])

    def test_inadmissible_segment(self, golden):
        with pytest.raises(ValidationError):
            glue(golden, [(0, 1), (1, 1)])

    def test_full_shift_concatenates(self, full):
        assert glue(full, [(1, 0), (1, 1), (0,)]) == (1, 0, 1, 1, 0)

    def test_golden_bridge(self, golden):
        assert glue(golden, [(1,), (1,)]) == (1, 0, 0, 1)


class TestScheme:
    def test_schedules(self, full, ones):
        s1 = SeparatedFamily.from_words(1, [(0, 1, 1, 0), (1, 0, 0, 1)], ones)
        s2 = SeparatedFamily.from_words(2, [(0, 0, 0, 1), (0, 0, 1, 1), (0, 1, 1, 1)], ones)
        scheme = MoranScheme(space=full, families=[s1, s2], copies=[1, 2], gap=0)
        assert scheme.leaf_counts == [2, 18]
        assert scheme.c_lengths == [4, 8]
        assert scheme.t_lengths == [4, 12]
        leaves, slots = scheme.materialize()
        assert leaves.shape == (18, 12)
        assert slots.shape == (18, 3)
        assert scheme.leaf_word([[1], [0, 2]]) == (1, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 1)

    def test_fixture_layout(self, full, ones, zero, moran_fixture):
        families = [build_family(full, ones, zero, k, moran_fixture) for k in (1, 2, 3)]
        scheme = build_scheme(full, families, moran_fixture)
        assert scheme.gap == 0
        assert scheme.t_lengths == [8, 28, 52]
        assert scheme.leaf_counts[0] == 182
        assert not scheme.eager

    def test_golden_leaves_are_admissible(self, golden_scheme):
        leaves, _ = golden_scheme.materialize()
        assert golden_scheme.eager
        assert golden_scheme.gap == 2
        assert leaves.shape[1] == golden_scheme.t_lengths[-1]
        assert all(golden_scheme.space.is_admissible(tuple(int(s) for s in w)) for w in leaves)

    def test_eager_over_budget(self, full, ones, zero, moran_fixture, restore_settings):
        families = [build_family(full, ones, zero, k, moran_fixture) for k in (1, 2, 3)]
        config = moran_fixture.model_copy(update={"mode": "eager"})
        with pytest.raises(BudgetError):
            build_scheme(full, families, config)

    def test_lazy_materialize_over_budget(self, full, ones, zero, moran_fixture):
        families = [build_family(full, ones, zero, k, moran_fixture) for k in (1, 2, 3)]
        scheme = build_scheme(full, families, moran_fixture)
        with pytest.raises(BudgetError):
            scheme.materialize()

    def test_sampled_leaves_match_index_words(self, golden_scheme):
        rng = np.random.default_rng(0)
        words, slots = golden_scheme.sample_leaves(rng, 20)
        for word, index in zip(words, slots):
            nested = [[int(index[0])], [int(index[1]), int(index[2])]]
            assert golden_scheme.leaf_word(nested) == tuple(int(s) for s in word)


class TestMoranMeasure:
    def test_equal_weights_split_evenly(self, full, ones):
        family = SeparatedFamily.from_words(1, [(0, 1), (1, 0)], ones)
        scheme = MoranScheme(space=full, families=[family], copies=[1], gap=0)
        measure = moran_measure(scheme, ones)
        assert measure.leaf_mass([[0]]) == pytest.approx(0.5)
        assert measure.leaf_mass([[1]]) == pytest.approx(0.5)
        assert measure.cylinder_mass((1,)) == pytest.approx(0.5)

    def test_total_mass(self, golden_scheme, golden_ones):
        measure = moran_measure(golden_scheme, golden_ones.scaled(0.3))
        _, slots = golden_scheme.materialize()
        total = np.exp(measure.leaf_log_weights(slots) - measure.log_kappa).sum()
        assert total == pytest.approx(1.0, abs=1e-12)
        assert measure.cylinder_mass(()) == 1.0

    def test_factorized_matches_brute_force(self, golden_scheme, golden_ones):
        measure = moran_measure(golden_scheme, golden_ones.scaled(0.3))
        depth = golden_scheme.t_lengths[-1]
        rng = np.random.default_rng(7)
        words, _ = golden_scheme.sample_leaves(rng, 30)
        for word in words:
            for d in (1, 3, 5, 6, 7, 9, depth):
                assert measure.cylinder_mass(word[:d]) == pytest.approx(
                    measure.brute_force_cylinder_mass(word[:d]), abs=1e-12
                )

    def test_cylinders_off_the_scheme(self, golden_scheme, golden_ones):
        measure = moran_measure(golden_scheme, golden_ones)
        assert measure.cylinder_mass((1, 1, 1, 1, 1)) == 0.0

    def test_levels_are_consistent(self, golden_scheme, golden_ones):
        measure = moran_measure(golden_scheme, golden_ones)
        lower = measure.at_level(1)
        for word in enumerate_words(golden_scheme.space, golden_scheme.t_lengths[0]):
            assert measure.cylinder_mass(word) == pytest.approx(lower.cylinder_mass(word), abs=1e-12)

    def test_depth_limit(self, golden_scheme, golden_ones):
        measure = moran_measure(golden_scheme, golden_ones).at_level(1)
        with pytest.raises(ValidationError):
            measure.cylinder_mass((0,) * (golden_scheme.t_lengths[0] + 1))


class TestVerification:
    def test_separation_witness(self, full, ones):
        family = SeparatedFamily.from_words(1, [(0, 1), (0, 1)], ones)
        scheme = MoranScheme(space=full, families=[family], copies=[1], gap=0)
        report = verify_separation_nesting(scheme, 1.0)
        assert not report.passed
        assert report.levels[0].witness == [[0, 1], [0, 1]]
        assert report.nesting_vacuous

    def test_golden_separation_and_nesting(self, golden_scheme):
        report = verify_separation_nesting(golden_scheme, 1.0)
        assert report.passed
        assert [lv.mode for lv in report.levels] == ["exhaustive", "exhaustive"]
        assert report.levels[1].nested is True

    def test_fixture_separation_is_factorized(self, full, ones, zero, moran_fixture):
        families = [build_family(full, ones, zero, k, moran_fixture) for k in (1, 2, 3)]
        report = verify_separation_nesting(build_scheme(full, families, moran_fixture), 1.0)
        assert [lv.mode for lv in report.levels] == ["exhaustive", "factorized", "factorized"]
        assert report.passed

    def test_convergence(self, golden_scheme, golden_ones, golden_config):
        report = verify_level_convergence(golden_scheme, golden_ones, 0.3, golden_config)
        assert report.passed
        assert report.bounds_decreasing

    def test_pdp_with_explicit_constant(self, golden_scheme, golden_ones):
        measure = moran_measure(golden_scheme, golden_ones)
        balls = sample_balls(measure, np.random.default_rng(1), 100, 1.0)
        assert all(n <= golden_scheme.t_lengths[-1] for _, n in balls)
        loose = verify_pdp(measure, 0.0, golden_ones, 1.0, balls, log_k=100.0)
        assert loose.passed
        tight = verify_pdp(measure, 5.0, golden_ones, 1.0, balls, log_k=0.0)
        assert not tight.passed

    def test_target_constant(self, full, ones, zero):
        assert target_constant(full, ones, zero, 0.5) == pytest.approx(math.log(2), abs=1e-9)
        with pytest.raises(InfeasibleError):
            target_constant(full, ones, zero, 1.5)


class TestMoranSuite:
    def test_fixture_passes(self, full, ones, zero, moran_fixture):
        report = run_moran_suite(full, ones, zero, moran_fixture, seed=0)
        assert report.passed
        assert report.gap == 0
        assert report.schedules["t"] == [8, 28, 52]
        assert report.threshold_length == 8
        assert report.consistency_error <= 1e-12
        assert report.factorization_error <= 1e-12
        assert report.pdp.passed
        assert report.convergence.deviations_decreasing
        deviations = [level.max_deviation for level in report.convergence.levels]
        assert deviations[-1] <= 0.1 + 1 / 3 + report.gap / report.schedules["t"][-1]

    def test_single_level_nesting_is_vacuous(self, full, ones, zero):
        config = MoranConfig(alpha=0.5, gamma=0.1, k_max=1, deltas=[0.2], lengths=[8], copies=[1],
                             balls=200, samples=200)
        report = run_moran_suite(full, ones, zero, config, seed=0)
        assert report.separation.nesting_vacuous
        assert report.kappa_check <= 1e-10
        assert report.passed

    def test_seed_reproducible(self, golden, golden_ones, golden_zero, golden_config):
        first = run_moran_suite(golden, golden_ones, golden_zero, golden_config, seed=3)
        second = run_moran_suite(golden, golden_ones, golden_zero, golden_config, seed=3)
        assert first.model_dump() == second.model_dump()
