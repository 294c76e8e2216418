import itertools

import numpy as np
import pytest

from birkhoff.exceptions import InfeasibleError, ValidationError
from birkhoff.moran import glue
from birkhoff.symbolic import (
    Potential,
    ShiftMetric,
    ShiftSpace,
    birkhoff_average,
    birkhoff_sum,
    birkhoff_sums,
    bridge,
    count_words,
    enumerate_words,
    linear_combination,
    map_word_blocks,
    mixing_gap,
    periodic_extension,
    recode_higher_block,
    separated_set,
    variation,
    word_blocks,
)


class TestShiftSpace:
    def test_dead_symbol_rejected(self):
        with pytest.raises(ValueError):
            ShiftSpace.from_rows(["11", "00"])

    def test_non_binary_entries_rejected(self):
        with pytest.raises(ValueError):
            ShiftSpace(alphabet_size=2, transition=((1, 2), (1, 1)))

    def test_admissibility(self, golden):
        assert golden.is_admissible((0, 1, 0, 1))
        assert not golden.is_admissible((0, 1, 1))
        assert not golden.is_admissible((0, 2))

    def test_rows_round_trip(self, golden):
        assert ShiftSpace.from_rows(golden.rows()).transition == golden.transition


class TestEnumeration:
    def test_full_shift_words(self, full):
        assert len(list(enumerate_words(full, 3))) == 8
        assert list(enumerate_words(full, 1)) == [(0,), (1,)]

    def test_golden_mean_words(self, golden):
        words = list(enumerate_words(golden, 3))
        assert words == [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 0, 1)]

    def test_lexicographic_and_unique(self, golden):
        words = list(enumerate_words(golden, 9))
        assert words == sorted(set(words))

    @pytest.mark.parametrize("n", range(1, 13))
    def test_count_matches_matrix_power(self, golden, n):
        a = golden.matrix
        expected = int(np.ones(2) @ np.linalg.matrix_power(a, n - 1) @ np.ones(2))
        assert count_words(golden, n) == expected
        assert len(list(enumerate_words(golden, n))) == expected

    def test_blocks_cover_words_in_order(self, golden):
        blocks = list(word_blocks(golden, 10, block_size=8))
        assert len(blocks) > 1
        stacked = [tuple(int(s) for s in row) for block in blocks for row in block]
        assert stacked == list(enumerate_words(golden, 10))

    def test_map_word_blocks_independent_of_workers(self, full):
        serial = map_word_blocks(full, 12, lambda b: int(b.sum()), workers=1, block_size=64)
        parallel = map_word_blocks(full, 12, lambda b: int(b.sum()), workers=4, block_size=64)
        assert serial == parallel
        assert sum(serial) == 12 * 2 ** 11


class TestBirkhoffSums:
    def test_indicator_counts_ones(self, ones):
        assert birkhoff_sum(ones, (0, 1, 1, 0)) == 2

    def test_constant(self, full):
        pot = Potential.constant(full, 0.7)
        assert birkhoff_sum(pot, (0, 1, 1, 0, 1)) == pytest.approx(3.5)

    def test_memory_two_periodic_wrap(self, golden):
        pot = Potential.from_function(golden, 2, lambda w: 1.0 if w == (1, 0) else 0.0)
        assert birkhoff_sum(pot, (1, 0, 1, 0)) == 2

    def test_inadmissible_wrap_keeps_constants_constant(self, golden):
        pot = Potential.constant(golden, 0.7, memory=2)
        # the wrap window 11 is not admissible
        assert birkhoff_sum(pot, (1, 0, 1)) == pytest.approx(2.1)

    def test_short_word_rejected(self, golden):
        pot = Potential.constant(golden, 1.0, memory=2)
        with pytest.raises(ValidationError):
            birkhoff_sum(pot, (0,))

    def test_periodic_doubling(self, ones):
        w = (0, 1, 1, 0, 1)
        assert birkhoff_sum(ones, w + w) == 2 * birkhoff_sum(ones, w)

    def test_prefix_sum(self, ones):
        assert birkhoff_sum(ones, (1, 1, 0, 0, 1), n=3) == 2
        assert birkhoff_average(ones, (1, 1, 0, 0)) == 0.5

    def test_vectorised_matches_scalar(self, golden):
        pot = Potential.from_function(golden, 2, lambda w: 0.3 * w[0] - 0.2 * w[1] + 0.1)
        block = np.array(list(enumerate_words(golden, 7)))
        expected = [birkhoff_sum(pot, w) for w in map(tuple, block)]
        np.testing.assert_allclose(birkhoff_sums(pot, block), expected, atol=1e-12)

    def test_linear_combination_lifts_memory(self, golden):
        a = Potential.indicator(golden, 1)
        b = Potential.from_function(golden, 2, lambda w: float(w == (0, 1)))
        combo = linear_combination([(2.0, a), (1.0, b)])
        assert combo.memory == 2
        assert combo.table[(0, 1)] == 1.0
        assert combo.table[(1, 0)] == 2.0

    def test_sup_norm_and_oscillation(self, golden):
        pot = Potential.from_function(golden, 2, lambda w: 0.3 * w[0] - 0.2 * w[1] + 0.1)
        assert pot.sup_norm == pytest.approx(0.4)
        assert pot.oscillation == pytest.approx(0.5)

    def test_table_must_cover_admissible_words(self, golden):
        with pytest.raises(ValueError):
            Potential.from_table(golden, 2, {(0, 0): 1.0, (0, 1): 1.0, (1, 0): 1.0, (1, 1): 1.0})


class TestMetric:
    def test_ball_depth(self):
        metric = ShiftMetric()
        assert metric.ball_depth(3, 1.0) == 3
        assert metric.ball_depth(3, 0.5) == 4
        assert metric.ball_depth(3, 0.25) == 5
        assert metric.ball_depth(3, 2.0) == 0

    def test_bowen_distance_matches_depth(self):
        metric = ShiftMetric()
        x = (0, 1, 1, 0, 1, 0, 0, 1)
        y = (0, 1, 1, 0, 1, 1, 0, 1)
        # common prefix of length 5
        assert metric.distance(x, y) == 0.5 ** 5
        assert metric.bowen_distance(x, y, 3) == 0.5 ** 3
        assert metric.bowen_distance(x, y, 6) == 1.0

    def test_periodic_extension(self):
        assert periodic_extension((0, 1, 1), 7) == (0, 1, 1, 0, 1, 1, 0)


class TestSeparatedSet:
    def test_eps_one_gives_all_words(self, full, golden):
        assert len(separated_set(full, 2, 1.0)) == 4
        assert len(separated_set(golden, 3, 1.0)) == 5
        assert len(separated_set(golden, 8, 1.0)) == count_words(golden, 8)

    def test_small_eps_keeps_distinct_words(self, full):
        assert len(separated_set(full, 2, 0.25)) == 4

    def test_eps_out_of_range(self, full):
        with pytest.raises(ValidationError):
            separated_set(full, 2, 1.5)


class TestVariation:
    def test_below_resolution(self, ones):
        assert variation(ones, 0.25) == 0.0

    def test_full_oscillation(self, ones):
        assert variation(ones, 1.0) == 1.0

    def test_memory_two_groups_by_first_symbol(self, golden):
        table = {(0, 0): 0.1, (0, 1): 0.9, (1, 0): 0.4}
        pot = Potential.from_table(golden, 2, table)
        assert variation(pot, 0.5) == pytest.approx(0.8)
        assert variation(pot, 1.0) == pytest.approx(0.8)
        assert variation(pot, 0.25) == 0.0

    def test_monotone_in_eps(self, golden):
        pot = Potential.from_function(golden, 2, lambda w: w[0] + 0.5 * w[1])
        values = [variation(pot, eps) for eps in (0.1, 0.25, 0.5, 1.0)]
        assert values == sorted(values)


class TestMixingGap:
    def test_full_shift(self, full):
        assert mixing_gap(full) == 0

    def test_golden_mean(self, golden):
        assert mixing_gap(golden) == 2

    def test_periodic_matrix(self):
        with pytest.raises(InfeasibleError, match="no uniform specification gap"):
            mixing_gap(ShiftSpace.from_rows(["01", "10"]))

    def test_smallest_bridge(self, golden):
        assert bridge(golden, 1, 1, 2) == (0, 0)

    @pytest.mark.parametrize("n", [1, 3, 8])
    def test_every_pair_glues(self, golden, n):
        words = list(enumerate_words(golden, n))
        g = mixing_gap(golden)
        for u, v in itertools.product(words, repeat=2):
            glued = glue(golden, [u, v])
            assert len(glued) == 2 * n + g
            assert golden.is_admissible(glued)
            assert glued[:n] == u and glued[n + g:] == v


class TestRecoding:
    def test_block_shift_pressure(self, full):
        from birkhoff.thermo import transfer_pressure

        pot = Potential.from_function(full, 3, lambda w: 0.3)
        space, recoded = recode_higher_block(full, pot)
        assert space.alphabet_size == 4
        assert recoded.memory == 2
        assert transfer_pressure(space, recoded) == pytest.approx(np.log(2) + 0.3, abs=1e-10)

    def test_low_memory_unchanged(self, full, ones):
        assert recode_higher_block(full, ones) == (full, ones)
