"""Moran lower-bound construction on subshifts of finite type.

Level k glues N_k words of a separated family S_k into C_k and appends the
result to every word of L_{k-1}, with bridges of the uniform mixing gap g
between consecutive segments. Leaves are addressed by index words (one
family index per slot), so weights, normalizers and cylinder masses factor
over slots and never require the leaves themselves.
"""
import math
import time
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator
from scipy.special import logsumexp

from .config import settings
from .exceptions import BudgetError, InfeasibleError, ValidationError
from .logger import logger
from .schema import (
    ConvergenceReport,
    FamilyCheck,
    LevelCheck,
    MoranReport,
    PdpReport,
    SeparationLevel,
    SeparationReport,
)
from .symbolic import (
    THETA,
    Potential,
    ShiftMetric,
    ShiftSpace,
    Word,
    birkhoff_sum,
    birkhoff_sums,
    bridge,
    map_word_blocks,
    mixing_gap,
    variation,
)
from .thermo import ENDPOINT_TOL, legendre_spectrum


class MoranComponent(BaseModel):
    weight: float = Field(..., gt=0.0, le=1.0, description="Share lambda_i of the level length")
    alpha: float = Field(..., description="Target average a_i of this component")

    model_config = ConfigDict(extra="forbid")


class MoranConfig(BaseModel):
    alpha: float
    gamma: float = Field(..., gt=0.0)
    epsilon: float = Field(1.0, gt=0.0, le=1.0)
    k_max: int = Field(..., ge=1)
    deltas: List[float] = Field(..., description="delta_k, strictly decreasing")
    lengths: List[int] = Field(..., description="n_k per level")
    thresholds: Optional[List[int]] = Field(None, description="l_k, strictly increasing, n_k >= l_k")
    copies: List[int] = Field(..., description="N_k per level")
    components: List[MoranComponent] = Field(default_factory=list)
    mode: Literal["auto", "eager", "lazy"] = "auto"
    balls: int = Field(1000, ge=1)
    samples: int = Field(1000, ge=1)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_schedules(self):
        k = self.k_max
        for name in ("deltas", "lengths", "copies"):
            if len(getattr(self, name)) != k:
                raise ValueError(f"{name} must list {k} values (one per level)")
        if any(d <= 0 for d in self.deltas):
            raise ValueError("deltas must be positive")
        if any(b >= a for a, b in zip(self.deltas, self.deltas[1:])):
            raise ValueError("deltas must be strictly decreasing")
        if any(n < 1 for n in self.lengths):
            raise ValueError("lengths must be positive")
        if any(c < 1 for c in self.copies):
            raise ValueError("copies must be at least 1")
        if self.thresholds is not None:
            if len(self.thresholds) != k:
                raise ValueError(f"thresholds must list {k} values")
            if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
                raise ValueError("thresholds must be strictly increasing")
            if any(n < l for n, l in zip(self.lengths, self.thresholds)):
                raise ValueError("each length n_k must be at least its threshold l_k")
        if self.components:
            if abs(sum(c.weight for c in self.components) - 1.0) > 1e-9:
                raise ValueError("component weights must sum to 1")
            if abs(sum(c.weight * c.alpha for c in self.components) - self.alpha) > 1e-9:
                raise ValueError("component averages must combine to alpha")
        return self


class SeparatedFamily(BaseModel):
    """S_k with weights exp(S_n psi) and partition sum M_k"""
    level: int
    words: np.ndarray = Field(..., description="rows are the words of S_k")
    log_weights: np.ndarray
    max_deviation: float = 0.0
    segment_lengths: List[int] = Field(default_factory=list)

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @classmethod
    def from_words(cls, level: int, words: Sequence[Sequence[int]], psi: Potential) -> "SeparatedFamily":
        block = np.array(words, dtype=np.int8)
        return cls(level=level, words=block, log_weights=birkhoff_sums(psi, block), segment_lengths=[block.shape[1]])

    @property
    def length(self) -> int:
        return int(self.words.shape[1])

    @property
    def size(self) -> int:
        return int(self.words.shape[0])

    @property
    def log_partition(self) -> float:
        return float(logsumexp(self.log_weights))

    @property
    def per_symbol(self) -> float:
        """(1/n_k) log M_k"""
        return self.log_partition / self.length


def bridge_table(space: ShiftSpace, g: int) -> np.ndarray:
    k = space.alphabet_size
    table = np.zeros((k, k, g), dtype=np.int8)
    if g:
        for a in range(k):
            for c in range(k):
                table[a, c] = bridge(space, a, c, g)
    return table


def _join(left: np.ndarray, right: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Row-wise left . bridge . right"""
    parts = [left]
    if table.shape[2]:
        parts.append(table[left[:, -1].astype(np.int64), right[:, 0].astype(np.int64)])
    parts.append(right)
    return np.concatenate(parts, axis=1)


def _product(n_left: int, n_right: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.repeat(np.arange(n_left), n_right), np.tile(np.arange(n_right), n_left)


def glue(space: ShiftSpace, segments: Sequence[Sequence[int]]) -> Word:
    """Concatenate segments with the smallest admissible bridge of the mixing gap"""
    if not segments:
        raise ValidationError("nothing to glue")
    for seg in segments:
        if not seg or not space.is_admissible(seg):
            raise ValidationError(f"segment {tuple(seg)} is not an admissible word")
    g = mixing_gap(space)
    word = list(segments[0])
    for seg in segments[1:]:
        word.extend(bridge(space, word[-1], seg[0], g))
        word.extend(seg)
    return tuple(word)


def _select_words(space: ShiftSpace, phi: Potential, psi: Potential, n: int, alpha: float,
                  delta: float) -> Tuple[np.ndarray, np.ndarray, float]:
    if n > settings.nmax:
        raise BudgetError(f"family length {n} exceeds the enumeration budget nmax = {settings.nmax}")
    dense_phi, dense_psi = phi.dense(), psi.dense()

    def reduce(block):
        deviation = np.abs(birkhoff_sums(phi, block, dense_phi) / n - alpha)
        keep = deviation < delta - ENDPOINT_TOL
        return block[keep], birkhoff_sums(psi, block[keep], dense_psi), deviation[keep]

    parts = map_word_blocks(space, n, reduce)
    words = np.concatenate([p[0] for p in parts])
    if not len(words):
        logger.error(f"no {n}-word has average within {delta} of {alpha}")
        raise InfeasibleError(
            f"level set not witnessed at this resolution: no {n}-word within delta={delta} of alpha={alpha}"
        )
    deviations = np.concatenate([p[2] for p in parts])
    return words, np.concatenate([p[1] for p in parts]), float(deviations.max())


def build_family(space: ShiftSpace, phi: Potential, psi: Potential, k: int, config: MoranConfig) -> SeparatedFamily:
    """S_k: admissible n_k-words whose phi-average is within delta_k of alpha"""
    if not 1 <= k <= config.k_max:
        raise ValidationError(f"level {k} outside 1..{config.k_max}")
    n, delta = config.lengths[k - 1], config.deltas[k - 1]
    if not config.components:
        words, weights, deviation = _select_words(space, phi, psi, n, config.alpha, delta)
        family = SeparatedFamily(level=k, words=words, log_weights=weights, max_deviation=deviation,
                                 segment_lengths=[n])
    else:
        g = mixing_gap(space)
        table = bridge_table(space, g)
        lengths = [int(math.floor(c.weight * n)) for c in config.components]
        if min(lengths) < 1:
            raise ValidationError(f"component lengths {lengths} at level {k}: increase n_k")
        selected = [_select_words(space, phi, psi, m, c.alpha, delta) for m, c in zip(lengths, config.components)]
        total = math.prod(len(s[0]) for s in selected)
        if total > settings.eager_leaf_budget:
            raise BudgetError(f"{total} glued component words at level {k} exceed eager_leaf_budget")
        words, weights = selected[0][0], selected[0][1]
        for seg_words, seg_weights, _ in selected[1:]:
            li, ri = _product(len(words), len(seg_words))
            words = _join(words[li], seg_words[ri], table)
            weights = weights[li] + seg_weights[ri]
        glued_length = words.shape[1]
        deviation = float(np.abs(birkhoff_sums(phi, words) / glued_length - config.alpha).max())
        family = SeparatedFamily(level=k, words=words, log_weights=weights, max_deviation=deviation,
                                 segment_lengths=lengths)
    logger.info(
        f"level {k}: |S_k| = {family.size} words of length {family.length}, "
        f"(1/n) log M_k = {family.per_symbol:.6f}"
    )
    return family


class MoranScheme(BaseModel):
    """Per-level schedules of the construction with leaves addressed by index words"""
    space: ShiftSpace
    families: List[SeparatedFamily]
    copies: List[int]
    gap: int
    eager: bool = False

    model_config = ConfigDict(arbitrary_types_allowed=True)

    _leaves: Dict[int, Tuple[np.ndarray, np.ndarray]] = PrivateAttr(default_factory=dict)
    _table: Optional[np.ndarray] = PrivateAttr(default=None)

    @property
    def k_max(self) -> int:
        return len(self.families)

    @property
    def bridges(self) -> np.ndarray:
        if self._table is None:
            self._table = bridge_table(self.space, self.gap)
        return self._table

    @property
    def n_lengths(self) -> List[int]:
        return [f.length for f in self.families]

    @property
    def c_lengths(self) -> List[int]:
        """c_k = N_k n_k + (N_k - 1) g"""
        return [N * n + (N - 1) * self.gap for N, n in zip(self.copies, self.n_lengths)]

    @property
    def t_lengths(self) -> List[int]:
        """t_1 = c_1, t_k = t_{k-1} + g + c_k"""
        t = [self.c_lengths[0]]
        for c in self.c_lengths[1:]:
            t.append(t[-1] + self.gap + c)
        return t

    @property
    def leaf_counts(self) -> List[int]:
        """|L_k| = |L_{k-1}| |S_k|^N_k"""
        counts, total = [], 1
        for family, N in zip(self.families, self.copies):
            total *= family.size ** N
            counts.append(total)
        return counts

    def slot_families(self, level: Optional[int] = None) -> List[int]:
        level = level or self.k_max
        return [j for j in range(level) for _ in range(self.copies[j])]

    def leaf_words(self, slots: np.ndarray) -> np.ndarray:
        """Leaf words for rows of slot indices (first len(row) slots of the layout)"""
        slots = np.atleast_2d(np.asarray(slots, dtype=np.int64))
        layout = self.slot_families()[: slots.shape[1]]
        words = self.families[layout[0]].words[slots[:, 0]]
        for s, j in enumerate(layout[1:], start=1):
            words = _join(words, self.families[j].words[slots[:, s]], self.bridges)
        return words

    def leaf_word(self, index: Sequence[Sequence[int]]) -> Word:
        """Leaf for an index word ((p^1_1..p^1_N1), ..., (p^k_1..p^k_Nk))"""
        flat = [p for level in index for p in level]
        return tuple(int(s) for s in self.leaf_words(np.array([flat]))[0])

    def sample_slots(self, rng: np.random.Generator, count: int, level: Optional[int] = None,
                     probabilities: Optional[List[np.ndarray]] = None) -> np.ndarray:
        """Random index words; uniform per slot unless per-family probabilities are given"""
        columns = []
        for j in self.slot_families(level):
            size = self.families[j].size
            p = None if probabilities is None else probabilities[j]
            columns.append(rng.choice(size, size=count, p=p))
        return np.stack(columns, axis=1)

    def sample_leaves(self, rng: np.random.Generator, count: int, level: Optional[int] = None,
                      probabilities: Optional[List[np.ndarray]] = None) -> Tuple[np.ndarray, np.ndarray]:
        slots = self.sample_slots(rng, count, level, probabilities)
        return self.leaf_words(slots), slots

    def materialize(self, level: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """All leaves of L_level in index order, with their slot indices"""
        level = level or self.k_max
        if level in self._leaves:
            return self._leaves[level]
        count = self.leaf_counts[level - 1]
        if count > settings.eager_leaf_budget:
            raise BudgetError(
                f"|L_{level}| = {count} exceeds eager_leaf_budget = {settings.eager_leaf_budget}; "
                f"use mode = lazy and sampled leaves"
            )
        words, slots = self.materialize(level - 1) if level > 1 else (None, None)
        family = self.families[level - 1]
        for _ in range(self.copies[level - 1]):
            seg = np.arange(family.size)
            if words is None:
                words, slots = family.words.copy(), seg[:, None]
                continue
            li, ri = _product(len(words), family.size)
            words = _join(words[li], family.words[ri], self.bridges)
            slots = np.concatenate([slots[li], seg[ri][:, None]], axis=1)
        self._leaves[level] = (words, slots)
        return words, slots


def build_scheme(space: ShiftSpace, families: Sequence[SeparatedFamily], config: MoranConfig) -> MoranScheme:
    if len(families) != config.k_max:
        raise ValidationError(f"expected {config.k_max} families, got {len(families)}")
    g = mixing_gap(space)
    scheme = MoranScheme(space=space, families=list(families), copies=list(config.copies), gap=g)
    leaves = scheme.leaf_counts[-1]
    if config.mode == "eager" and leaves > settings.eager_leaf_budget:
        raise BudgetError(
            f"|L_k| = {leaves} exceeds eager_leaf_budget = {settings.eager_leaf_budget}; use mode = lazy"
        )
    scheme.eager = config.mode == "eager" or (config.mode == "auto" and leaves <= settings.eager_leaf_budget)
    if scheme.eager:
        scheme.materialize()
    logger.info(
        f"scheme: gap={g}, t={scheme.t_lengths}, |L_k|={scheme.leaf_counts}, "
        f"{'eager' if scheme.eager else 'lazy'}"
    )
    return scheme


class MoranMeasure(BaseModel):
    """mu_k: leaf mass L_k(z) / kappa_k with L_k the product of slot weights"""
    scheme: MoranScheme
    level: int
    log_weights: List[np.ndarray]

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def log_partitions(self) -> List[float]:
        return [float(logsumexp(w)) for w in self.log_weights]

    @property
    def probabilities(self) -> List[np.ndarray]:
        return [np.exp(w - logsumexp(w)) for w in self.log_weights]

    @property
    def log_kappa(self) -> float:
        """log kappa_k = sum_i N_i log M_i"""
        return float(sum(N * m for N, m in zip(self.scheme.copies[: self.level], self.log_partitions)))

    @property
    def depth(self) -> int:
        return self.scheme.t_lengths[self.level - 1]

    def at_level(self, level: int) -> "MoranMeasure":
        return MoranMeasure(scheme=self.scheme, level=level, log_weights=self.log_weights)

    def leaf_log_weights(self, slots: np.ndarray) -> np.ndarray:
        slots = np.atleast_2d(slots)
        layout = self.scheme.slot_families(self.level)
        return np.sum([self.log_weights[j][slots[:, s]] for s, j in enumerate(layout)], axis=0)

    def leaf_mass(self, index: Sequence[Sequence[int]]) -> float:
        flat = np.array([[p for level in index for p in level]])
        return float(np.exp(self.leaf_log_weights(flat)[0] - self.log_kappa))

    def sample_slots(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.scheme.sample_slots(rng, count, self.level, self.probabilities)

    def cylinder_mass(self, word: Sequence[int]) -> float:
        """mu_k of the cylinder [word], slot by slot over the boundary symbol"""
        word = np.asarray(word, dtype=np.int64)
        d = len(word)
        if d > self.depth:
            raise ValidationError(f"cylinder depth {d} exceeds the level depth t_k = {self.depth}")
        if d == 0:
            return 1.0
        scheme, k, g = self.scheme, self.scheme.space.alphabet_size, self.scheme.gap
        probabilities = self.probabilities
        mass = None
        pos = 0
        for j in scheme.slot_families(self.level):
            if pos >= d:
                break
            words, probs = scheme.families[j].words, probabilities[j]
            last = words[:, -1].astype(np.int64)
            new = np.zeros(k)
            if mass is None:
                ok = _window_matches(words, word, pos)
                np.add.at(new, last[ok], probs[ok])
                pos += words.shape[1]
            else:
                seg_ok = _window_matches(words, word, pos + g)
                first = words[:, 0].astype(np.int64)
                bridge_ok = np.ones((k, k), dtype=bool)
                if g:
                    for a in range(k):
                        bridge_ok[a] = _window_matches(scheme.bridges[a], word, pos)
                for a in range(k):
                    if mass[a] == 0.0:
                        continue
                    ok = seg_ok & bridge_ok[a, first]
                    np.add.at(new, last[ok], mass[a] * probs[ok])
                pos += g + words.shape[1]
            mass = new
        return float(mass.sum())

    def brute_force_cylinder_mass(self, word: Sequence[int]) -> float:
        leaves, slots = self.scheme.materialize(self.level)
        word = np.asarray(word)
        mask = (leaves[:, : len(word)] == word).all(axis=1)
        if not mask.any():
            return 0.0
        return float(np.exp(logsumexp(self.leaf_log_weights(slots[mask])) - self.log_kappa))


def _window_matches(rows: np.ndarray, word: np.ndarray, start: int) -> np.ndarray:
    """Rows agree with word on the overlap of [start, start + width) and [0, len(word))"""
    rows = np.atleast_2d(rows)
    overlap = max(0, min(rows.shape[1], len(word) - start))
    if overlap == 0:
        return np.ones(rows.shape[0], dtype=bool)
    return (rows[:, :overlap] == word[start: start + overlap]).all(axis=1)


def moran_measure(scheme: MoranScheme, psi: Potential, level: Optional[int] = None) -> MoranMeasure:
    weights = [birkhoff_sums(psi, f.words) for f in scheme.families]
    return MoranMeasure(scheme=scheme, level=level or scheme.k_max, log_weights=weights)


def sample_balls(measure: MoranMeasure, rng: np.random.Generator, count: int, epsilon: float,
                 n_min: Optional[int] = None) -> List[Tuple[np.ndarray, int]]:
    """mu-distributed centres with depths n such that B_n(q, eps/2) fits in t_k"""
    metric = ShiftMetric()
    offset = metric.ball_depth(0, epsilon / 2)
    n_max = max(1, measure.depth - offset)
    n_min = min(n_min or measure.scheme.t_lengths[0], n_max)
    centres, _ = measure.scheme.sample_leaves(rng, count, measure.level, measure.probabilities)
    depths = rng.integers(n_min, n_max + 1, size=count)
    return [(centres[i], int(depths[i])) for i in range(count)]


def verify_pdp(measure: MoranMeasure, s: float, psi: Potential, epsilon: float,
               ball_sample: Sequence[Tuple[Sequence[int], int]], log_k: Optional[float] = None) -> PdpReport:
    """mu(B_n(q, eps/2)) <= K exp(-n s + S_n psi(q)) with one K for the whole sample"""
    metric = ShiftMetric()
    violations, depths = [], []
    skipped = 0
    for centre, n in ball_sample:
        depth = metric.ball_depth(n, epsilon / 2)
        if depth > len(centre) or depth > measure.depth:
            skipped += 1
            continue
        mass = measure.cylinder_mass(centre[:depth])
        if mass == 0.0:
            skipped += 1
            continue
        bound = -n * s + birkhoff_sum(psi, centre, n)
        violations.append(math.log(mass) - bound)
        depths.append(n)
    if skipped:
        logger.warning(f"verify_pdp: {skipped} balls disjoint from the scheme or deeper than t_k")
    if not violations:
        return PdpReport(s=s, log_k=0.0 if log_k is None else log_k, max_log_violation=-math.inf,
                         balls_checked=0, balls_skipped=skipped, n_max=0, passed=True)
    per_depth: Dict[int, float] = {}
    for n, v in zip(depths, violations):
        per_depth[n] = max(per_depth.get(n, -math.inf), v)
    worst = max(violations)
    n_max = max(depths)
    if log_k is None:
        fitted = max(0.0, worst)
        passed = fitted <= 0.1 * n_max
    else:
        fitted = log_k
        passed = worst - fitted <= 0.0
    logger.info(f"verify_pdp: {len(violations)} balls, log K = {fitted:.6f}, n_max = {n_max}")
    return PdpReport(
        s=s,
        log_k=fitted,
        max_log_violation=worst - fitted,
        per_depth=dict(sorted(per_depth.items())),
        balls_checked=len(violations),
        balls_skipped=skipped,
        n_max=n_max,
        passed=passed,
    )


def verify_level_convergence(scheme: MoranScheme, phi: Potential, alpha: float, config: MoranConfig,
                             rng: Optional[np.random.Generator] = None) -> ConvergenceReport:
    """Deviation of the phi-average of leaf prefixes of length t_j from alpha"""
    rng = rng or np.random.default_rng(settings.seed)
    leaves, _ = scheme.sample_leaves(rng, config.samples)
    values = phi.values()
    spread = float(max(abs(values.max() - alpha), abs(values.min() - alpha)))
    slots = np.cumsum(scheme.copies)
    levels = []
    for j, t in enumerate(scheme.t_lengths, start=1):
        deviation = float(np.abs(birkhoff_sums(phi, leaves[:, :t]) / t - alpha).max())
        gap_term = scheme.gap * (int(slots[j - 1]) - 1) * spread / t
        bound = config.deltas[j - 1] + variation(phi, THETA ** t) + gap_term + 1.0 / j
        levels.append(LevelCheck(level=j, length=t, max_deviation=deviation, bound=bound,
                                 passed=deviation <= bound))
        logger.debug(f"level {j}: max deviation {deviation:.6f} <= {bound:.6f}")
    deviations = [c.max_deviation for c in levels]
    bounds = [c.bound for c in levels]
    bounds_decreasing = all(b < a for a, b in zip(bounds, bounds[1:]))
    return ConvergenceReport(
        levels=levels,
        samples=config.samples,
        deviations_decreasing=all(b < a for a, b in zip(deviations, deviations[1:])),
        bounds_decreasing=bounds_decreasing,
        passed=all(c.passed for c in levels) and bounds_decreasing,
    )


def _duplicate_witness(leaves: np.ndarray) -> Optional[List[List[int]]]:
    order = np.lexsort(leaves.T[::-1])
    ordered = leaves[order]
    same = (ordered[1:] == ordered[:-1]).all(axis=1)
    if not same.any():
        return None
    i = int(np.argmax(same))
    return [ordered[i].astype(int).tolist(), ordered[i + 1].astype(int).tolist()]


def verify_separation_nesting(scheme: MoranScheme, epsilon: float,
                              rng: Optional[np.random.Generator] = None) -> SeparationReport:
    """Distinct leaves differ within t_k symbols; level-(k+1) leaves extend their parents"""
    rng = rng or np.random.default_rng(settings.seed)
    if 2 * epsilon > 1:
        logger.debug(f"eps={epsilon}: separation is checked symbolically (distinct t_k-prefixes)")
    t = scheme.t_lengths
    counts = scheme.leaf_counts
    report = []
    for j in range(1, scheme.k_max + 1):
        exhaustive = counts[j - 1] <= min(settings.exhaustive_leaf_limit, settings.eager_leaf_budget)
        nested = None
        witness = None
        if exhaustive:
            leaves, _ = scheme.materialize(j)
            witness = _duplicate_witness(leaves[:, : t[j - 1]])
            separated = witness is None
            if j > 1:
                parents, _ = scheme.materialize(j - 1)
                parent = np.arange(len(leaves)) // (counts[j - 1] // counts[j - 2])
                nested = bool((leaves[:, : t[j - 2]] == parents[parent]).all())
        else:
            separated = all(
                len(np.unique(f.words, axis=0)) == f.size for f in scheme.families[:j]
            )
            if j > 1:
                slots = scheme.sample_slots(rng, 100, j)
                children = scheme.leaf_words(slots)
                parents = scheme.leaf_words(slots[:, : int(np.sum(scheme.copies[: j - 1]))])
                nested = bool((children[:, : t[j - 2]] == parents).all())
        report.append(SeparationLevel(
            level=j, mode="exhaustive" if exhaustive else "factorized", leaves=counts[j - 1],
            separated=separated, nested=nested, witness=witness,
        ))
    passed = all(r.separated and r.nested is not False for r in report)
    return SeparationReport(levels=report, nesting_vacuous=scheme.k_max == 1, passed=passed)


def target_constant(space: ShiftSpace, phi: Potential, psi: Potential, alpha: float) -> float:
    """C = h + integral of psi for the measure attaining the constrained supremum"""
    value = legendre_spectrum(space, phi, psi, [alpha]).values[0]
    if value is None:
        raise InfeasibleError(f"alpha={alpha} is not an average of phi over invariant measures")
    return value


def run_moran_suite(space: ShiftSpace, phi: Potential, psi: Potential, config: MoranConfig,
                    seed: Optional[int] = None) -> MoranReport:
    start = time.time()
    rng = np.random.default_rng(settings.seed if seed is None else seed)
    c = target_constant(space, phi, psi, config.alpha)
    families = [build_family(space, phi, psi, k, config) for k in range(1, config.k_max + 1)]
    checks = [
        FamilyCheck(level=f.level, length=f.length, size=f.size, log_partition=f.log_partition,
                    per_symbol=f.per_symbol, target=c - config.gamma, passed=f.per_symbol >= c - config.gamma)
        for f in families
    ]
    threshold = None
    for check in reversed(checks):
        if not check.passed:
            break
        threshold = check.length

    scheme = build_scheme(space, families, config)
    measure = moran_measure(scheme, psi)

    kappa_check = None
    if scheme.eager:
        _, slots = scheme.materialize()
        kappa_check = abs(float(logsumexp(measure.leaf_log_weights(slots))) - measure.log_kappa)

    consistency = 0.0
    probe = measure.sample_slots(rng, min(config.samples, 200))
    probe_words = scheme.leaf_words(probe)
    for j in range(1, scheme.k_max):
        depth = scheme.t_lengths[j - 1]
        lower, upper = measure.at_level(j), measure.at_level(j + 1)
        for w in probe_words[:50]:
            consistency = max(consistency, abs(upper.cylinder_mass(w[:depth]) - lower.cylinder_mass(w[:depth])))

    factorization = None
    for j in range(1, scheme.k_max + 1):
        if scheme.leaf_counts[j - 1] > settings.exhaustive_leaf_limit:
            continue
        level_measure = measure.at_level(j)
        depth = scheme.t_lengths[j - 1]
        for w in probe_words[:50]:
            for d in sorted(set([1, depth // 2, depth] + scheme.t_lengths[:j])):
                err = abs(level_measure.cylinder_mass(w[:d]) - level_measure.brute_force_cylinder_mass(w[:d]))
                factorization = err if factorization is None else max(factorization, err)

    separation = verify_separation_nesting(scheme, config.epsilon, rng)
    convergence = verify_level_convergence(scheme, phi, config.alpha, config, rng)
    s = c - 5 * config.gamma
    balls = sample_balls(measure, rng, config.balls, config.epsilon)
    pdp = verify_pdp(measure, s, psi, config.epsilon, balls)

    passed = (
        all(ch.passed for ch in checks)
        and separation.passed
        and convergence.passed
        and convergence.deviations_decreasing
        and pdp.passed
        and consistency <= 1e-12
        and (factorization is None or factorization <= 1e-12)
        and (kappa_check is None or kappa_check <= 1e-10)
    )
    logger.info(f"moran suite {'passed' if passed else 'FAILED'} in {time.time() - start:.2f}s")
    return MoranReport(
        alpha=config.alpha,
        gamma=config.gamma,
        target_constant=c,
        gap=scheme.gap,
        families=checks,
        threshold_length=threshold,
        schedules={"n": scheme.n_lengths, "c": scheme.c_lengths, "t": scheme.t_lengths, "N": list(scheme.copies)},
        leaf_counts=scheme.leaf_counts,
        kappa_log=measure.log_kappa,
        kappa_check=kappa_check,
        consistency_error=consistency,
        factorization_error=factorization,
        separation=separation,
        convergence=convergence,
        pdp=pdp,
        passed=passed,
    )
