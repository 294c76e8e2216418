"""Pressure, spectra and variational oracles for locally constant potentials.

Both sides of the conditional variational principle are computed here:
the measure side through Legendre transforms of transfer-operator pressure
(and a brute-force grid over Markov measures), the level-set side through
restricted partition sums over exact word enumerations.

All logarithms are natural; results are in nats.
"""
import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import bisect, minimize
from scipy.special import entr, logsumexp

from .config import settings
from .exceptions import BudgetError, ConvergenceError, InfeasibleError, ValidationError
from .logger import logger
from .schema import PressureEstimate, RotationInterval, SpectrumCurve, VariationalResult
from .symbolic import (
    Potential,
    ShiftSpace,
    Word,
    birkhoff_average,
    birkhoff_sums,
    map_word_blocks,
    recode_higher_block,
)

ENDPOINT_TOL = 1e-12
POLISH_STEPS = 64


class PerronRoot(NamedTuple):
    value: float
    vector: np.ndarray
    lower: float
    upper: float
    iterations: int


class MarkovMeasure(BaseModel):
    """Order-1 Markov measure: stochastic matrix plus stationary vector"""
    space: ShiftSpace
    order: int = Field(1, ge=1, le=1)
    matrix: Tuple[Tuple[float, ...], ...]
    stationary: Tuple[float, ...]

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_measure(self):
        p = np.array(self.matrix, dtype=float)
        pi = np.array(self.stationary, dtype=float)
        k = self.space.alphabet_size
        if p.shape != (k, k) or pi.shape != (k,):
            raise ValueError(f"matrix must be {k}x{k} and stationary vector of length {k}")
        if (p < 0).any() or (p[~self.space.allowed] > 0).any():
            raise ValueError("transition probabilities must be nonnegative and vanish on forbidden transitions")
        if np.abs(p.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("rows of the stochastic matrix must sum to 1")
        if (pi < 0).any() or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("stationary vector must be a probability vector")
        if np.abs(pi @ p - pi).max() > 1e-10:
            raise ValueError("stationary vector is not invariant under the matrix")
        return self

    @property
    def p(self) -> np.ndarray:
        return np.array(self.matrix, dtype=float)

    @property
    def pi(self) -> np.ndarray:
        return np.array(self.stationary, dtype=float)

    @classmethod
    def from_matrix(cls, space: ShiftSpace, matrix) -> "MarkovMeasure":
        p = np.where(space.allowed, np.asarray(matrix, dtype=float), 0.0)
        p = p / p.sum(axis=1, keepdims=True)
        pi = stationary_vectors(p[None, :, :])[0]
        return cls(space=space, matrix=_as_tuples(p), stationary=tuple(pi.tolist()))

    @classmethod
    def bernoulli(cls, space: ShiftSpace, probabilities: Sequence[float]) -> "MarkovMeasure":
        """i.i.d. measure on a full shift; a single float p means P(symbol 1) = p on two symbols"""
        if isinstance(probabilities, (int, float)):
            probabilities = [1.0 - probabilities, probabilities]
        probs = np.asarray(probabilities, dtype=float)
        if not space.allowed.all():
            raise ValidationError("Bernoulli measures need a full shift")
        if probs.shape != (space.alphabet_size,) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValidationError("Bernoulli weights must be a probability vector over the alphabet")
        p = np.tile(probs, (space.alphabet_size, 1))
        return cls(space=space, matrix=_as_tuples(p), stationary=tuple(probs.tolist()))


class DeltaSchedule(BaseModel):
    """delta_n = max(delta_min, c / sqrt(n))"""
    c: float = Field(default_factory=lambda: settings.delta_c, ge=0.0)
    delta_min: float = Field(default_factory=lambda: settings.delta_min, gt=0.0)

    def delta(self, n: int) -> float:
        return max(self.delta_min, self.c / math.sqrt(n))


def _as_tuples(matrix: np.ndarray) -> Tuple[Tuple[float, ...], ...]:
    return tuple(tuple(float(v) for v in row) for row in matrix)


def stationary_vectors(p: np.ndarray) -> np.ndarray:
    """Stationary vectors of a stack of stochastic matrices (min-norm when reducible)"""
    count, k, _ = p.shape
    system = np.concatenate([np.transpose(p, (0, 2, 1)) - np.eye(k), np.ones((count, 1, k))], axis=1)
    pi = np.linalg.pinv(system)[:, :, -1]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum(axis=1, keepdims=True)


def _require_edge_memory(*pots: Potential):
    for pot in pots:
        if pot.memory > 2:
            raise ValidationError(
                f"potential memory {pot.memory} > 2: recode onto the higher-block shift first (recode_higher_block)"
            )


def _check_space(space: ShiftSpace, *pots: Potential):
    for pot in pots:
        if pot.space != space:
            raise ValidationError("potential is defined on a different shift space")


def perron_root(matrix, tol: Optional[float] = None, max_iter: Optional[int] = None) -> PerronRoot:
    """Spectral radius and positive eigenvector of an irreducible nonnegative matrix.

    The root is the real eigenvalue of largest real part from a dense
    eigen-solve. Power iteration on M + sI (primitive even when M is periodic),
    started at its eigenvector, polishes the vector until the Collatz-Wielandt
    quotients min/max (Mx)_i / x_i agree to relative tolerance `tol`. Entries
    near underflow can keep the quotients apart; the eigen-solve value then
    stands and the last quotients are returned as its bracket.
    """
    tol = settings.power_tol if tol is None else tol
    max_iter = settings.power_max_iter if max_iter is None else max_iter
    m = np.asarray(matrix, dtype=float)
    k = m.shape[0]
    if k == 1:
        v = float(m[0, 0])
        return PerronRoot(v, np.ones(1), v, v, 0)
    values, vectors = np.linalg.eig(m)
    real = np.abs(values.imag) <= 1e-9 * max(1.0, float(np.abs(values).max()))
    top = int(np.argmax(np.where(real, values.real, -np.inf)))
    value = float(values[top].real)
    if not value > 0:
        raise ConvergenceError(f"no positive Perron root found (got {value})")
    x = np.abs(vectors[:, top].real)
    x = x / x.sum()
    shifted = m + np.eye(k) * max(float(m.max()), 1e-300)
    lower = upper = value
    iteration = 0
    for iteration in range(min(max_iter, POLISH_STEPS) + 1):
        if iteration:
            y = shifted @ x
            x = y / y.sum()
        if (x > 0).all():
            ratios = (m @ x) / x
            lower, upper = float(ratios.min()), float(ratios.max())
            if upper - lower <= tol * upper:
                break
    else:
        logger.debug(f"perron_root: quotients [{lower:.6g}, {upper:.6g}] still apart after {iteration} steps")
    return PerronRoot(value, x, min(lower, value), max(upper, value), iteration)


def _components(m: np.ndarray) -> List[List[int]]:
    """Irreducible classes carrying at least one cycle, ordered by smallest state"""
    graph = nx.DiGraph()
    graph.add_nodes_from(range(m.shape[0]))
    graph.add_edges_from((int(i), int(j)) for i, j in zip(*np.nonzero(m > 0)))
    classes = []
    for scc in nx.strongly_connected_components(graph):
        nodes = sorted(scc)
        if len(nodes) > 1 or m[nodes[0], nodes[0]] > 0:
            classes.append(nodes)
    return sorted(classes)


class _Root(NamedTuple):
    log_value: float
    component: List[int]
    right: np.ndarray
    scaled: np.ndarray
    value: float


def _dominant_root(space: ShiftSpace, w: np.ndarray) -> _Root:
    allowed = space.allowed
    shift = float(w[allowed].max())
    m = np.exp(np.where(allowed, w - shift, -np.inf))
    components = _components(m)
    if not components:
        raise InfeasibleError("weighted transition graph has no cycle")
    best = None
    for nodes in components:
        sub = m[np.ix_(nodes, nodes)]
        root = perron_root(sub)
        if best is None or root.value > best.value:
            best = _Root(math.log(root.value) + shift, nodes, root.vector, sub, root.value)
    if len(components) > 1:
        logger.debug(f"reducible transition graph: {len(components)} classes, dominant {best.component}")
    return best


def _log_radius(space: ShiftSpace, w: np.ndarray) -> float:
    return _dominant_root(space, w).log_value


def _equilibrium_from_weights(space: ShiftSpace, w: np.ndarray) -> MarkovMeasure:
    root = _dominant_root(space, w)
    nodes, sub, rho = root.component, root.scaled, root.value
    v = root.right
    u = perron_root(sub.T).vector
    k = space.alphabet_size
    p = np.zeros((k, k))
    allowed = space.allowed.astype(float)
    p[:] = allowed / allowed.sum(axis=1, keepdims=True)
    sub_p = sub * v[None, :] / (rho * v[:, None])
    sub_p = sub_p / sub_p.sum(axis=1, keepdims=True)
    p[np.ix_(nodes, nodes)] = sub_p
    for i in nodes:
        outside = [j for j in range(k) if j not in nodes]
        p[i, outside] = 0.0
    pi = np.zeros(k)
    pi[nodes] = u * v / float(u @ v)
    return MarkovMeasure(space=space, matrix=_as_tuples(p), stationary=tuple(pi.tolist()))


def transfer_pressure(space: ShiftSpace, pot: Potential) -> float:
    """log spectral radius of A_ij exp(pot(ij)); memory > 2 is recoded first"""
    _check_space(space, pot)
    if pot.memory > 2:
        space, pot = recode_higher_block(space, pot)
    return _log_radius(space, pot.edge_matrix())


def topological_entropy(space: ShiftSpace) -> float:
    return transfer_pressure(space, Potential.constant(space, 0.0))


def equilibrium_measure(space: ShiftSpace, pot: Potential) -> MarkovMeasure:
    """Markov equilibrium state P_ij = M_ij v_j / (rho v_i), pi_i ~ u_i v_i"""
    _check_space(space, pot)
    _require_edge_memory(pot)
    return _equilibrium_from_weights(space, pot.edge_matrix())


def markov_entropy(m: MarkovMeasure) -> float:
    return float(np.sum(m.pi[:, None] * entr(m.p)))


def markov_integral(m: MarkovMeasure, pot: Potential) -> float:
    if pot.memory > m.order + 1:
        raise ValidationError(f"potential memory {pot.memory} exceeds measure order {m.order} + 1")
    if pot.space != m.space:
        raise ValidationError("potential and measure live on different shift spaces")
    return float(np.sum(m.pi[:, None] * m.p * pot.edge_matrix()))


def fit_slope(ns: Sequence[int], log_sums: Sequence[float]) -> Tuple[float, float, List[int]]:
    """Least-squares slope over the largest two thirds of ns"""
    if len(ns) < 2:
        raise ValidationError("slope fit needs at least two word lengths")
    keep = max(2, math.ceil(2 * len(ns) / 3))
    xs = np.array(ns[-keep:], dtype=float)
    ys = np.array(log_sums[-keep:], dtype=float)
    slope, intercept = np.polyfit(xs, ys, 1)
    residual = float(np.sqrt(np.mean((ys - (slope * xs + intercept)) ** 2)))
    return float(slope), residual, [int(n) for n in ns[-keep:]]


def _check_n_range(n_range: Sequence[int]) -> List[int]:
    ns = sorted(set(int(n) for n in n_range))
    if len(ns) < 3:
        raise ValidationError(f"n_range needs at least 3 word lengths for a slope, got {ns}")
    if ns[0] < 1:
        raise ValidationError("word lengths must be positive")
    if ns[-1] > settings.nmax:
        raise BudgetError(f"n = {ns[-1]} exceeds the enumeration budget nmax = {settings.nmax}")
    return ns


def counting_pressure(space: ShiftSpace, pot: Potential, n_range: Sequence[int],
                      workers: Optional[int] = None) -> PressureEstimate:
    """Slope of log sum_w exp(S_n pot(w)) over the admissible n-words"""
    _check_space(space, pot)
    ns = _check_n_range(n_range)
    dense = pot.dense()
    start = time.time()
    log_sums = []
    for n in ns:
        parts = map_word_blocks(space, n, lambda block: float(logsumexp(birkhoff_sums(pot, block, dense))), workers)
        log_sums.append(float(logsumexp(parts)))
        logger.debug(f"counting_pressure n={n}: log Z = {log_sums[-1]:.12g}")
    value, residual, fit_range = fit_slope(ns, log_sums)
    logger.info(f"counting_pressure over n={ns[0]}..{ns[-1]}: {value:.12g} ({time.time() - start:.2f}s)")
    return PressureEstimate(value=value, n_range=ns, fit_range=fit_range, log_sums=log_sums, residual=residual)


def _mean_cycle(space: ShiftSpace, w: np.ndarray, maximize: bool) -> Tuple[Fraction, Word]:
    """Karp's extreme mean cycle over exact rationals"""
    k = space.alphabet_size
    sign = 1 if maximize else -1
    weights = {
        (i, j): sign * Fraction(repr(float(w[i, j])))
        for i in range(k) for j in range(k) if space.transition[i][j]
    }
    walks = [[Fraction(0)] * k]
    preds: List[List[Optional[int]]] = [[None] * k]
    for step in range(1, k + 1):
        row, pred = [], []
        for v in range(k):
            best, arg = None, None
            for u in range(k):
                if (u, v) in weights and walks[step - 1][u] is not None:
                    cand = walks[step - 1][u] + weights[(u, v)]
                    if best is None or cand > best:
                        best, arg = cand, u
            row.append(best)
            pred.append(arg)
        walks.append(row)
        preds.append(pred)

    value, v_star = None, None
    for v in range(k):
        if walks[k][v] is None:
            continue
        worst = min(
            (walks[k][v] - walks[j][v]) / (k - j) for j in range(k) if walks[j][v] is not None
        )
        if value is None or worst > value:
            value, v_star = worst, v

    walk = [v_star]
    v = v_star
    for step in range(k, 0, -1):
        v = preds[step][v]
        walk.append(v)
    walk.reverse()

    def mean(cycle):
        return sum(weights[(cycle[i], cycle[(i + 1) % len(cycle)])] for i in range(len(cycle))) / len(cycle)

    for cycle in _walk_cycles(walk):
        if mean(cycle) == value:
            return sign * value, _min_rotation(cycle)
    # no critical walk closed an optimal cycle: enumerate simple cycles
    graph = nx.DiGraph(list(weights))
    cycles = sorted(_min_rotation(c) for c in nx.simple_cycles(graph))
    best = max(cycles, key=mean)
    logger.warning(f"mean-cycle witness recovered by cycle enumeration: {best}")
    return sign * mean(best), best


def _walk_cycles(walk: List[int]) -> List[List[int]]:
    stack, pos, cycles = [], {}, []
    for v in walk:
        if v in pos:
            i = pos[v]
            cycles.append(stack[i:])
            for u in stack[i:]:
                del pos[u]
            stack = stack[:i]
        pos[v] = len(stack)
        stack.append(v)
    return cycles


def _min_rotation(cycle: Sequence[int]) -> Word:
    cycle = list(cycle)
    return min(tuple(cycle[i:] + cycle[:i]) for i in range(len(cycle)))


def rotation_interval(space: ShiftSpace, pot: Potential) -> RotationInterval:
    """[min, max] of the integral of pot over invariant measures, with witness cycles"""
    _check_space(space, pot)
    _require_edge_memory(pot)
    w = pot.edge_matrix()
    low, low_cycle = _mean_cycle(space, w, maximize=False)
    high, high_cycle = _mean_cycle(space, w, maximize=True)
    logger.debug(f"rotation interval [{low}, {high}] witnessed by {low_cycle} and {high_cycle}")
    return RotationInterval(
        alpha_min=float(low),
        alpha_max=float(high),
        min_cycle=list(low_cycle),
        max_cycle=list(high_cycle),
        exact=True,
    )


def cycle_measure_value(space: ShiftSpace, cycle: Sequence[int], pot: Potential) -> float:
    """Integral of pot against the periodic-orbit measure on cycle"""
    _check_space(space, pot)
    cycle = tuple(cycle)
    return birkhoff_average(pot, cycle * math.ceil(pot.memory / len(cycle)))


def _endpoint_cycle(interval: RotationInterval, alpha: float) -> Optional[List[int]]:
    if abs(alpha - interval.alpha_max) <= ENDPOINT_TOL:
        return interval.max_cycle
    if abs(alpha - interval.alpha_min) <= ENDPOINT_TOL:
        return interval.min_cycle
    return None


def _infeasible(interval: RotationInterval, alpha: float) -> bool:
    return alpha < interval.alpha_min - ENDPOINT_TOL or alpha > interval.alpha_max + ENDPOINT_TOL


class _LegendreSolver:
    """q -> P(q phi + psi) with derivative from the equilibrium state"""

    def __init__(self, space: ShiftSpace, phi: Potential, psi: Potential):
        self.space = space
        self.w_phi = phi.edge_matrix()
        self.w_psi = psi.edge_matrix()

    def pressure(self, q: float) -> float:
        return _log_radius(self.space, q * self.w_phi + self.w_psi)

    def derivative(self, q: float) -> float:
        m = _equilibrium_from_weights(self.space, q * self.w_phi + self.w_psi)
        return float(np.sum(m.pi[:, None] * m.p * self.w_phi))

    def solve(self, alpha: float) -> Optional[float]:
        """Root of derivative(q) = alpha, None when the cap is hit or the pressure fails to converge"""
        try:
            return self._bracket_and_bisect(alpha)
        except ConvergenceError as e:
            logger.warning(f"alpha={alpha}: {e}")
            return None

    def _bracket_and_bisect(self, alpha: float) -> Optional[float]:
        hi = 1.0
        while self.derivative(hi) < alpha:
            if hi >= settings.q_cap:
                return None
            hi *= 2.0
        lo = -1.0
        while self.derivative(lo) > alpha:
            if -lo >= settings.q_cap:
                return None
            lo *= 2.0
        return bisect(lambda q: self.derivative(q) - alpha, lo, hi, xtol=settings.bisection_tol)


def legendre_spectrum(space: ShiftSpace, phi: Potential, psi: Potential, alpha_grid: Sequence[float],
                      workers: Optional[int] = None) -> SpectrumCurve:
    """F(alpha) = inf_q [P(q phi + psi) - q alpha] over a grid of alpha"""
    _check_space(space, phi, psi)
    _require_edge_memory(phi, psi)
    start = time.time()
    interval = rotation_interval(space, phi)
    solver = _LegendreSolver(space, phi, psi)
    def solve_one(alpha: float):
        if _infeasible(interval, alpha):
            return None, None, False, False
        if interval.degenerate:
            return solver.pressure(0.0), 0.0, True, False
        cycle = _endpoint_cycle(interval, alpha)
        if cycle is not None:
            return cycle_measure_value(space, cycle, psi), None, True, True
        q = solver.solve(alpha)
        if q is None:
            logger.warning(f"alpha={alpha}: derivative never brackets alpha below q_cap, using endpoint value")
            edge = interval.max_cycle if alpha > (interval.alpha_min + interval.alpha_max) / 2 else interval.min_cycle
            return cycle_measure_value(space, edge, psi), None, True, True
        return solver.pressure(q) - q * alpha, q, True, False

    alphas = [float(a) for a in alpha_grid]
    workers = workers or settings.workers
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(solve_one, alphas))
    else:
        rows = [solve_one(a) for a in alphas]

    logger.info(f"legendre_spectrum: {len(alphas)} grid points in {time.time() - start:.2f}s")
    return SpectrumCurve(
        alphas=alphas,
        values=[r[0] for r in rows],
        q_opt=[r[1] for r in rows],
        feasible=[r[2] for r in rows],
        endpoint=[r[3] for r in rows],
        method="legendre",
    )


def second_differences(curve: SpectrumCurve) -> List[float]:
    """Slope decrements of F over consecutive feasible points (<= 0 when concave)"""
    points = [(a, v) for a, v, ok in zip(curve.alphas, curve.values, curve.feasible) if ok and v is not None]
    slopes = [(v2 - v1) / (a2 - a1) for (a1, v1), (a2, v2) in zip(points, points[1:])]
    gaps = [(a2 - a1) for (a1, _), (a2, _) in zip(points, points[1:])]
    return [(s2 - s1) * min(g1, g2) for s1, s2, g1, g2 in zip(slopes, slopes[1:], gaps, gaps[1:])]


def is_concave(curve: SpectrumCurve, slack: float = 1e-8) -> bool:
    return all(d <= slack for d in second_differences(curve))


def _simplex_rows(space: ShiftSpace, resolution: int) -> List[np.ndarray]:
    k = space.alphabet_size
    rows = []
    for i, succ in enumerate(space.successors):
        d = len(succ)
        options = []
        for bars in itertools.combinations(range(resolution + d - 1), d - 1):
            parts = np.diff(np.array((-1,) + bars + (resolution + d - 1,))) - 1
            row = np.zeros(k)
            row[list(succ)] = parts / resolution
            options.append(row)
        rows.append(np.array(options))
    return rows


def _cycle_matrix(space: ShiftSpace, cycle: Sequence[int]) -> np.ndarray:
    allowed = space.allowed.astype(float)
    p = allowed / allowed.sum(axis=1, keepdims=True)
    for i, s in enumerate(cycle):
        p[s] = 0.0
        p[s, cycle[(i + 1) % len(cycle)]] = 1.0
    return p


def constrained_variational(space: ShiftSpace, phi: Potential, psi: Potential, alpha: float,
                            grid_resolution: Optional[int] = None) -> VariationalResult:
    """max h(m) + int psi dm over order-1 Markov measures with int phi dm = alpha.

    A parameter grid of stochastic matrices locates the optimum within the
    grid slack; SLSQP then enforces the constraint exactly.
    """
    _check_space(space, phi, psi)
    _require_edge_memory(phi, psi)
    resolution = grid_resolution or settings.grid_resolution
    interval = rotation_interval(space, phi)
    if _infeasible(interval, alpha):
        raise InfeasibleError(
            f"alpha={alpha} outside rotation interval [{interval.alpha_min}, {interval.alpha_max}]"
        )
    w_phi, w_psi = phi.edge_matrix(), psi.edge_matrix()
    allowed = space.allowed

    cycle = None if interval.degenerate else _endpoint_cycle(interval, alpha)
    if cycle is not None:
        m = MarkovMeasure.from_matrix(space, _cycle_matrix(space, cycle))
        value = cycle_measure_value(space, cycle, psi)
        return VariationalResult(
            alpha=alpha, value=value, entropy=0.0, psi_integral=value,
            phi_integral=cycle_measure_value(space, cycle, phi),
            matrix=[list(r) for r in m.matrix], grid_points=0, feasible_points=1,
        )

    rows = _simplex_rows(space, resolution)
    total = math.prod(len(r) for r in rows)
    if total > settings.grid_cap:
        raise BudgetError(
            f"Markov grid has {total} matrices (cap {settings.grid_cap}); lower grid_resolution"
        )
    start = time.time()
    index = np.indices([len(r) for r in rows]).reshape(len(rows), -1).T
    p = np.stack([rows[i][index[:, i]] for i in range(len(rows))], axis=1)
    pi = stationary_vectors(p)
    entropy = np.sum(pi[:, :, None] * entr(p), axis=(1, 2))
    int_phi = np.sum(pi[:, :, None] * p * w_phi, axis=(1, 2))
    int_psi = np.sum(pi[:, :, None] * p * w_psi, axis=(1, 2))
    spread = float(w_phi[allowed].max() - w_phi[allowed].min())
    slack = spread / resolution
    feasible = np.abs(int_phi - alpha) <= slack + ENDPOINT_TOL
    if not feasible.any():
        raise InfeasibleError(
            f"no grid matrix satisfies the constraint at resolution {resolution}; use a finer grid_resolution"
        )
    objective = np.where(feasible, entropy + int_psi, -np.inf)
    best = int(np.argmax(objective))
    logger.info(
        f"constrained_variational alpha={alpha}: {int(feasible.sum())}/{total} feasible grid points, "
        f"grid optimum {objective[best]:.6f} ({time.time() - start:.2f}s)"
    )

    def unpack(x):
        full = np.zeros(allowed.shape)
        full[allowed] = np.clip(x, 0.0, 1.0)
        return full

    def integrals(x):
        mat = unpack(x)
        mat_pi = stationary_vectors(mat[None, :, :] / np.maximum(mat.sum(axis=1, keepdims=True), 1e-300))[0]
        return mat_pi, mat

    def neg_value(x):
        mat_pi, mat = integrals(x)
        return -float(np.sum(mat_pi[:, None] * entr(mat)) + np.sum(mat_pi[:, None] * mat * w_psi))

    constraints = [{"type": "eq", "fun": lambda x: unpack(x).sum(axis=1) - 1.0}]
    if not interval.degenerate:
        constraints.append({
            "type": "eq",
            "fun": lambda x: float(np.sum(integrals(x)[0][:, None] * integrals(x)[1] * w_phi)) - alpha,
        })
    x0 = p[best][allowed]
    result = minimize(
        neg_value, x0, method="SLSQP", bounds=[(0.0, 1.0)] * len(x0), constraints=constraints,
        options={"ftol": 1e-14, "maxiter": 1000},
    )

    refined = False
    chosen = p[best]
    candidate = unpack(result.x)
    if np.abs(candidate.sum(axis=1) - 1.0).max() <= 1e-8:
        m = MarkovMeasure.from_matrix(space, candidate)
        if abs(markov_integral(m, phi) - alpha) <= 1e-8:
            chosen, refined = candidate, True
    if not refined:
        logger.warning(f"local refinement failed ({result.message}); reporting the grid optimum")

    m = MarkovMeasure.from_matrix(space, chosen)
    h = markov_entropy(m)
    psi_int = markov_integral(m, psi)
    return VariationalResult(
        alpha=alpha,
        value=h + psi_int,
        entropy=h,
        psi_integral=psi_int,
        phi_integral=markov_integral(m, phi),
        matrix=[list(r) for r in m.matrix],
        grid_points=total,
        feasible_points=int(feasible.sum()),
        refined=refined,
    )


def level_sums(averages: np.ndarray, log_weights: np.ndarray, alphas: Sequence[float],
               delta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-alpha log sum of exp(log_weights) over |average - alpha| <= delta"""
    out = np.full(len(alphas), -np.inf)
    counts = np.zeros(len(alphas), dtype=np.int64)
    for i, alpha in enumerate(alphas):
        mask = np.abs(averages - alpha) <= delta + ENDPOINT_TOL
        c = int(mask.sum())
        if c:
            out[i] = float(logsumexp(log_weights[mask]))
            counts[i] = c
    return out, counts


def merge_level_sums(parts: Sequence[Tuple[np.ndarray, np.ndarray]]) -> Tuple[np.ndarray, np.ndarray]:
    logs = np.array([p[0] for p in parts])
    counts = np.sum([p[1] for p in parts], axis=0)
    merged = np.full(logs.shape[1], -np.inf)
    for i in range(logs.shape[1]):
        finite = logs[:, i][np.isfinite(logs[:, i])]
        if finite.size:
            merged[i] = float(logsumexp(finite))
    return merged, counts


def level_estimates(ns: Sequence[int], log_sums: np.ndarray, counts: np.ndarray, alphas: Sequence[float],
                    method: str) -> List[Optional[PressureEstimate]]:
    """Slope fits per alpha from (n x alpha) tables; None when fewer than two lengths are witnessed"""
    estimates = []
    for i, alpha in enumerate(alphas):
        nonempty = [j for j in range(len(ns)) if counts[j, i] > 0]
        skipped = [int(ns[j]) for j in range(len(ns)) if counts[j, i] == 0]
        if skipped:
            logger.debug(f"alpha={alpha}: empty level at n={skipped}")
        if len(nonempty) < 2:
            estimates.append(None)
            continue
        value, residual, fit_range = fit_slope([ns[j] for j in nonempty], [log_sums[j, i] for j in nonempty])
        estimates.append(PressureEstimate(
            value=value,
            n_range=[int(n) for n in ns],
            fit_range=fit_range,
            log_sums=[float(log_sums[j, i]) if counts[j, i] > 0 else None for j in range(len(ns))],
            residual=residual,
            counts=[int(c) for c in counts[:, i]],
            skipped=skipped,
            method=method,
        ))
    return estimates


def direct_level_spectrum(space: ShiftSpace, phi: Potential, psi: Potential, alpha_grid: Sequence[float],
                          schedule: Optional[DeltaSchedule] = None, n_range: Sequence[int] = (),
                          workers: Optional[int] = None) -> Tuple[SpectrumCurve, List[Optional[PressureEstimate]]]:
    """Restricted partition sums for every alpha from one enumeration pass per n"""
    _check_space(space, phi, psi)
    schedule = schedule or DeltaSchedule()
    ns = _check_n_range(list(n_range) or list(range(8, settings.nmax + 1)))
    alphas = [float(a) for a in alpha_grid]
    dense_phi, dense_psi = phi.dense(), psi.dense()
    start = time.time()
    logs, counts = [], []
    for n in ns:
        delta = schedule.delta(n)

        def reduce(block, n=n, delta=delta):
            averages = birkhoff_sums(phi, block, dense_phi) / n
            return level_sums(averages, birkhoff_sums(psi, block, dense_psi), alphas, delta)

        merged, c = merge_level_sums(map_word_blocks(space, n, reduce, workers))
        logs.append(merged)
        counts.append(c)
    estimates = level_estimates(ns, np.array(logs), np.array(counts), alphas, method="direct")
    logger.info(f"direct_level_spectrum: {len(alphas)} alphas, n={ns[0]}..{ns[-1]} in {time.time() - start:.2f}s")
    curve = SpectrumCurve(
        alphas=alphas,
        values=[e.value if e else None for e in estimates],
        q_opt=[None] * len(alphas),
        feasible=[e is not None for e in estimates],
        endpoint=[False] * len(alphas),
        method="direct",
    )
    return curve, estimates


def direct_level_pressure(space: ShiftSpace, phi: Potential, psi: Potential, alpha: float,
                          schedule: Optional[DeltaSchedule] = None, n_range: Sequence[int] = (),
                          workers: Optional[int] = None) -> PressureEstimate:
    """Pressure of psi on the level set {average of phi = alpha}"""
    _, estimates = direct_level_spectrum(space, phi, psi, [alpha], schedule, n_range, workers)
    if estimates[0] is None:
        logger.error(f"alpha={alpha}: level set not witnessed")
        raise InfeasibleError("level set not witnessed at this resolution")
    return estimates[0]


def bs_dimension(space: ShiftSpace, psi: Potential, level: Optional[Tuple[Potential, float]] = None) -> float:
    """Root s of P(Z, -s psi) = 0 for Z the whole space or a level set of phi"""
    _check_space(space, psi)
    if psi.values().min() <= 0:
        raise ValidationError("BS dimension needs a strictly positive psi")
    if level is None:
        def pressure(s: float) -> float:
            return transfer_pressure(space, psi.scaled(-s))
    else:
        phi, alpha = level
        _check_space(space, phi)
        interval = rotation_interval(space, phi)
        if _infeasible(interval, alpha):
            raise InfeasibleError(
                f"alpha={alpha} outside rotation interval [{interval.alpha_min}, {interval.alpha_max}]"
            )

        def pressure(s: float) -> float:
            return legendre_spectrum(space, phi, psi.scaled(-s), [alpha]).values[0]

    top = pressure(0.0)
    if top <= 0:
        return 0.0
    hi = 2.0 * top / float(psi.values().min())
    if pressure(hi) > 0:
        raise ConvergenceError("BS dimension bracket failed")
    s = bisect(pressure, 0.0, hi, xtol=settings.bisection_tol)
    logger.info(f"bs_dimension: s = {s:.12g}, residual pressure {pressure(s):.2e}")
    return s
