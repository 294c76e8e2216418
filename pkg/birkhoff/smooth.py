"""Interval, circle and skew-product maps with empirical diagnostics.

Ensembles are seeded per chunk from one SeedSequence, so histograms do not
depend on the worker count. Shadowing searches pull cylinders back through
the inverse branches with outward-rounded interval endpoints.
"""
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, ClassVar, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .config import settings
from .exceptions import BudgetError, InfeasibleError, ValidationError
from .logger import logger
from .schema import GapReport, HistogramReport, SpectrumCurve, SweepReport
from .thermo import DeltaSchedule, level_estimates, level_sums

Interval = Tuple[float, float]
Observable = Callable[[np.ndarray], np.ndarray]

CHUNK = 8192
BISECTION_STEPS = 64


class MPMap(BaseModel):
    """Manneville-Pomeau map: x(1 + 2^a x^a) on [0, 1/2], 2x - 1 on (1/2, 1]"""
    alpha: float = Field(..., gt=0.0, lt=1.0)

    model_config = ConfigDict(frozen=True, extra="forbid")

    circle: ClassVar[bool] = False

    @property
    def name(self) -> str:
        return f"mp(alpha={self.alpha})"

    def _left(self, x):
        return x * (1.0 + 2.0 ** self.alpha * x ** self.alpha)

    def apply(self, x):
        arr = np.asarray(x, dtype=float)
        if np.any((arr < 0.0) | (arr > 1.0)) or np.any(np.isnan(arr)):
            raise ValidationError(f"MP map is defined on [0, 1], got {x}")
        out = np.where(arr <= 0.5, self._left(arr), 2.0 * arr - 1.0)
        return float(out) if out.ndim == 0 else out

    def left_inverse(self, y):
        """Preimage in [0, 1/2] by bisection of the increasing left branch"""
        target = np.asarray(y, dtype=float)
        lo = np.zeros_like(target)
        hi = np.full_like(target, 0.5)
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            below = self._left(mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = 0.5 * (lo + hi)
        return float(out) if out.ndim == 0 else out

    def right_inverse(self, y):
        out = (np.asarray(y, dtype=float) + 1.0) / 2.0
        return float(out) if out.ndim == 0 else out

    def inverse_branches(self, y) -> Tuple:
        return self.left_inverse(y), self.right_inverse(y)

    @property
    def branches(self) -> List[Callable]:
        return [self.left_inverse, self.right_inverse]

    def orbits(self, rng: np.random.Generator, size: int, n: int, transient: int) -> Tuple[np.ndarray, np.ndarray]:
        x = rng.random(size)
        for _ in range(transient):
            x = self.apply(x)
        points = np.empty((size, n))
        for i in range(n):
            points[:, i] = x
            x = self.apply(x)
        return points, np.ones(size, dtype=bool)


class TorusExpandingMap(BaseModel):
    """x -> D x mod 1 on the torus with D = diag(multipliers)"""
    multipliers: List[int] = Field(..., min_length=1)

    model_config = ConfigDict(frozen=True, extra="forbid")

    circle: ClassVar[bool] = True

    @field_validator("multipliers")
    @classmethod
    def check_multipliers(cls, v):
        if any(d < 2 for d in v):
            raise ValueError(f"multipliers must be integers >= 2, got {v}")
        return v

    @property
    def name(self) -> str:
        return f"torus(d={self.multipliers})"

    @property
    def dimension(self) -> int:
        return len(self.multipliers)

    @property
    def degree(self) -> int:
        return self.multipliers[0]

    def apply(self, x):
        arr = np.asarray(x, dtype=float)
        d = np.array(self.multipliers, dtype=float) if self.dimension > 1 else float(self.degree)
        out = np.mod(d * arr, 1.0)
        return float(out) if out.ndim == 0 else out

    def inverse_branches(self, y) -> Tuple:
        """All d preimages of a point of the circle"""
        if self.dimension > 1:
            raise ValidationError("inverse branches are provided for the circle only")
        return tuple(branch(y) for branch in self.branches)

    @property
    def branches(self) -> List[Callable]:
        d = self.degree

        def branch(j):
            return lambda y: (np.asarray(y, dtype=float) + j) / d
        return [branch(j) for j in range(d)]

    def exactness_time(self, r: float) -> int:
        """Iterates after which every ball of radius r covers the torus"""
        if not 0 < r:
            raise ValidationError(f"radius must be positive, got {r}")
        if 2 * r >= 1:
            return 0
        return int(math.ceil(math.log(1.0 / (2 * r)) / math.log(min(self.multipliers)) - 1e-12))

    def orbits(self, rng: np.random.Generator, size: int, n: int, transient: int) -> Tuple[np.ndarray, np.ndarray]:
        coords = [_digit_orbits(rng, d, size, n, transient) for d in self.multipliers]
        points = coords[0] if self.dimension == 1 else np.stack(coords, axis=-1)
        return points, np.ones(size, dtype=bool)


class VianaMap(BaseModel):
    """(theta, x) -> (d theta mod 1, 1 - a x^2 + alpha cos(2 pi theta))"""
    d: int = Field(16, ge=16)
    a: float = 2.0
    alpha: float = 0.01
    escape_bound: float = Field(default_factory=lambda: settings.escape_bound, gt=0.0)

    model_config = ConfigDict(frozen=True, extra="forbid")

    @property
    def name(self) -> str:
        return f"viana(d={self.d}, a={self.a}, alpha={self.alpha})"

    def apply(self, theta, x):
        theta = np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)
        new_theta = np.mod(self.d * theta, 1.0)
        new_x = 1.0 - self.a * x ** 2 + self.alpha * np.cos(2 * np.pi * theta)
        if new_theta.ndim == 0:
            return float(new_theta), float(new_x)
        return new_theta, new_x

    def orbits(self, rng: np.random.Generator, size: int, n: int, transient: int) -> Tuple[np.ndarray, np.ndarray]:
        """Points (theta, x) of shape (size, n, 2); escaped orbits are frozen and flagged"""
        thetas = _digit_orbits(rng, self.d, size, n + transient, 0)
        x = rng.uniform(-1.0, 1.0, size)
        alive = np.ones(size, dtype=bool)
        xs = np.empty((size, n + transient))
        for i in range(n + transient):
            xs[:, i] = x
            step = 1.0 - self.a * x ** 2 + self.alpha * np.cos(2 * np.pi * thetas[:, i])
            alive &= np.abs(step) <= self.escape_bound
            x = np.where(alive, step, x)
        points = np.stack([thetas[:, transient:], xs[:, transient:]], axis=-1)
        return points, alive


Map = Union[MPMap, TorusExpandingMap, VianaMap]


def mp_apply(map: MPMap, x: float) -> float:
    return map.apply(x)


def mp_inverse_branches(map: MPMap, y: float) -> Tuple[float, float]:
    return map.inverse_branches(y)


def viana_apply(map: VianaMap, theta: float, x: float) -> Tuple[float, float]:
    if not 0.0 <= theta < 1.0:
        raise ValidationError(f"theta must lie in [0, 1), got {theta}")
    return map.apply(theta, x)


def _digit_orbits(rng: np.random.Generator, d: int, size: int, n: int, transient: int) -> np.ndarray:
    """Orbits of x -> d x mod 1 from random base-d expansions (exact in every coordinate)"""
    precision = int(math.ceil(53 / math.log2(d))) + 1
    total = n + transient
    digits = rng.integers(0, d, size=(size, total + precision))
    x = rng.random(size)
    orbit = np.empty((size, total))
    for j in range(total + precision - 1, -1, -1):
        x = (digits[:, j] + x) / d
        if j < total:
            orbit[:, j] = x
    return orbit[:, transient:]


def indicator(lo: float, hi: float, coordinate: Optional[int] = None) -> Observable:
    """1 on [lo, hi), optionally on one coordinate of vector-valued points"""
    def fn(points: np.ndarray) -> np.ndarray:
        values = points if coordinate is None else points[..., coordinate]
        return ((values >= lo) & (values < hi)).astype(float)
    return fn


def constant(c: float) -> Observable:
    def fn(points: np.ndarray) -> np.ndarray:
        shape = points.shape[:2]
        return np.full(shape, float(c))
    return fn


class OrbitEnsemble(BaseModel):
    """Birkhoff averages of an observable over seeded, Lebesgue-typical orbits"""
    seed: int
    n: int
    transient: int
    averages: np.ndarray
    escaped: int = 0

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def size(self) -> int:
        return int(self.averages.size)


def sample_ensemble(map: Map, observable: Observable, ensemble_size: int, n: int, seed: Optional[int] = None,
                    transient: Optional[int] = None, workers: Optional[int] = None) -> OrbitEnsemble:
    seed = settings.seed if seed is None else seed
    transient = settings.transient if transient is None else transient
    workers = workers or settings.workers
    sizes = [CHUNK] * (ensemble_size // CHUNK)
    if ensemble_size % CHUNK:
        sizes.append(ensemble_size % CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def task(args):
        size, seq = args
        points, alive = map.orbits(np.random.default_rng(seq), size, n, transient)
        return observable(points)[alive].mean(axis=1), int((~alive).sum())

    jobs = list(zip(sizes, seeds))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(task, jobs))
    else:
        parts = [task(job) for job in jobs]
    escaped = sum(p[1] for p in parts)
    if escaped:
        logger.warning(f"{map.name}: {escaped} of {ensemble_size} orbits left |x| <= {settings.escape_bound}")
    return OrbitEnsemble(seed=seed, n=n, transient=transient,
                         averages=np.concatenate([p[0] for p in parts]), escaped=escaped)


def _lattice_edges(averages: np.ndarray, n: int) -> np.ndarray:
    lo = int(math.floor(averages.min() * n + 1e-9))
    hi = int(math.ceil(averages.max() * n - 1e-9))
    return (np.arange(lo, hi + 2) - 0.5) / n


def empirical_spectrum(map: Map, observable: Observable, ensemble_size: int, n: int,
                       bins: Optional[Union[int, Sequence[float]]] = None, seed: Optional[int] = None,
                       transient: Optional[int] = None, workers: Optional[int] = None) -> HistogramReport:
    """Histogram of n-step averages and the rate -(1/n) log(fraction / modal fraction)"""
    if ensemble_size < 1000:
        raise ValidationError(f"ensemble_size must be at least 1000, got {ensemble_size}")
    if n < 1:
        raise ValidationError(f"orbit length must be positive, got {n}")
    start = time.time()
    ensemble = sample_ensemble(map, observable, ensemble_size, n, seed, transient, workers)
    if ensemble.size == 0:
        logger.error(f"{map.name}: every orbit escaped")
        raise InfeasibleError("empty ensemble after transient discard")
    averages = ensemble.averages
    edges = _lattice_edges(averages, n) if bins is None else bins
    counts, edges = np.histogram(averages, bins=edges)
    fractions = counts / ensemble.size
    modal = fractions.max()
    rates = [None if f == 0 else float(-math.log(f / modal) / n) for f in fractions]
    raw = [None if f == 0 else float(-math.log(f) / n) for f in fractions]
    logger.info(f"empirical_spectrum {map.name}: {ensemble.size} orbits, n={n}, {time.time() - start:.2f}s")
    return HistogramReport(
        centers=[float(c) for c in 0.5 * (edges[:-1] + edges[1:])],
        counts=[int(c) for c in counts],
        fractions=[float(f) for f in fractions],
        rates=rates,
        raw_rates=raw,
        n=n,
        ensemble_size=ensemble.size,
        escaped=ensemble.escaped,
        seed=ensemble.seed,
    )


def check_invariant_interval(map: VianaMap, size: int = 1000, n: int = 100, seed: Optional[int] = None) -> dict:
    """Escape statistics of the x-coordinate over n iterates"""
    rng = np.random.default_rng(settings.seed if seed is None else seed)
    points, alive = map.orbits(rng, size, n, 0)
    xs = points[alive, :, 1]
    report = {
        "size": size,
        "n": n,
        "escaped": int((~alive).sum()),
        "escape_bound": map.escape_bound,
        "x_min": float(xs.min()) if xs.size else None,
        "x_max": float(xs.max()) if xs.size else None,
    }
    if report["escaped"]:
        logger.warning(f"{map.name}: {report['escaped']}/{size} orbits escaped the invariant interval")
    return report


def _distance(map: Map, x, y):
    diff = np.abs(np.asarray(x) - np.asarray(y))
    return np.minimum(diff, 1.0 - diff) if map.circle else diff


def _ball(map: Map, centre: float, eps: float) -> List[Interval]:
    lo, hi = centre - eps, centre + eps
    if not map.circle:
        return [(max(lo, 0.0), min(hi, 1.0))]
    if eps >= 0.5:
        return [(0.0, 1.0)]
    if lo < 0.0:
        return [(0.0, hi), (lo + 1.0, 1.0)]
    if hi > 1.0:
        return [(0.0, hi - 1.0), (lo, 1.0)]
    return [(lo, hi)]


def _merge(intervals: List[Interval]) -> List[Interval]:
    merged: List[Interval] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def _intersect(a: List[Interval], b: List[Interval]) -> List[Interval]:
    out = []
    for lo1, hi1 in a:
        for lo2, hi2 in b:
            lo, hi = max(lo1, lo2), min(hi1, hi2)
            if lo <= hi:
                out.append((lo, hi))
    return _merge(out)


def _pullback(map: Map, intervals: List[Interval]) -> List[Interval]:
    """Union of branch images, endpoints rounded outward"""
    if not intervals:
        return []
    arr = np.array(intervals)
    out = []
    for branch in map.branches:
        lo = np.nextafter(np.asarray(branch(arr[:, 0])), -np.inf)
        hi = np.nextafter(np.asarray(branch(arr[:, 1])), np.inf)
        out.extend(zip(np.maximum(lo, 0.0).tolist(), np.minimum(hi, 1.0).tolist()))
    return _merge(out)


def _orbit(map: Map, x: float, n: int) -> List[float]:
    points = [float(x)]
    for _ in range(n - 1):
        points.append(float(map.apply(points[-1])))
    return points


def _tube(map: Map, orbit: Sequence[float], eps: float, tail: List[Interval]) -> List[Interval]:
    """Points at time 0 whose orbit stays eps-close to orbit and lands in tail at the last step"""
    current = _intersect(tail, _ball(map, orbit[-1], eps))
    for centre in reversed(orbit[:-1]):
        if not current:
            break
        current = _intersect(_pullback(map, current), _ball(map, centre, eps))
    return current


def _verify(map: Map, z: float, segments: Sequence[Tuple[float, int]], gap: int, eps: float) -> bool:
    (x1, n1), (x2, n2) = segments
    orbit = _orbit(map, z, n1 + gap + n2)
    first = _distance(map, orbit[:n1], _orbit(map, x1, n1))
    second = _distance(map, orbit[n1 + gap:], _orbit(map, x2, n2))
    return bool(first.max() < eps + 1e-9 and second.max() < eps + 1e-9)


def spec_gap_estimate(map: Map, segments: Sequence[Tuple[float, int]], eps: float,
                      p_max: int = 12) -> GapReport:
    """Smallest gap p with a point eps-shadowing both segments, p free iterates apart"""
    if isinstance(map, VianaMap) or getattr(map, "dimension", 1) > 1:
        raise ValidationError(f"{map.name}: gap estimation needs a one-dimensional map with inverse branches")
    if len(segments) != 2:
        raise ValidationError(f"expected two segments, got {len(segments)}")
    if not 0 < eps:
        raise ValidationError(f"eps must be positive, got {eps}")
    (x1, n1), (x2, n2) = segments
    if n1 < 1 or n2 < 1:
        raise ValidationError("segment lengths must be positive")
    orbit1, orbit2 = _orbit(map, x1, n1), _orbit(map, x2, n2)
    target = _tube(map, orbit2, eps, [(0.0, 1.0)])
    diagnostics = []
    report = dict(epsilon=eps, p_max=p_max, segment_lengths=[n1, n2])
    if not target:
        return GapReport(found=False, diagnostics=[{"reason": "second tube is empty"}], **report)
    free = target
    for p in range(p_max + 1):
        free = _pullback(map, free)
        if len(free) > settings.block_size:
            logger.warning(f"spec_gap_estimate: {len(free)} intervals at p={p}, stopping")
            diagnostics.append({"p": p, "intervals": len(free), "reason": "interval budget"})
            break
        start = _tube(map, orbit1, eps, free)
        diagnostics.append({
            "p": p,
            "intervals": len(free),
            "witness_intervals": len(start),
            "measure": float(sum(hi - lo for lo, hi in start)),
        })
        if not start:
            continue
        inside = any(lo <= x1 <= hi for lo, hi in start)
        widest = max(start, key=lambda iv: iv[1] - iv[0])
        z = float(x1) if inside else 0.5 * (widest[0] + widest[1])
        verified = _verify(map, z, segments, p, eps)
        logger.info(f"spec_gap_estimate {map.name}: gap {p} with witness {z!r} (verified={verified})")
        return GapReport(found=True, gap=p, witness=z, verified=verified, diagnostics=diagnostics, **report)
    logger.warning(f"spec_gap_estimate {map.name}: no gap up to p_max={p_max}")
    return GapReport(found=False, diagnostics=diagnostics, **report)


def gap_sweep(map: Map, x1: float, ns: Sequence[int], x2: float, n2: int, eps: float,
              p_max: int = 12) -> SweepReport:
    """p(n) and p(n)/n for a first segment of growing length n"""
    gaps, ratios = [], []
    for n in ns:
        result = spec_gap_estimate(map, [(x1, n), (x2, n2)], eps, p_max)
        gaps.append(result.gap if result.found else None)
        ratios.append(result.gap / n if result.found else None)
        logger.debug(f"gap_sweep n={n}: p={gaps[-1]}")
    found = [r for r in ratios if r is not None]
    return SweepReport(
        lengths=list(ns),
        gaps=gaps,
        ratios=ratios,
        nonincreasing=all(b <= a + 1e-12 for a, b in zip(found, found[1:])),
    )


def mp_level_spectrum(map: MPMap, alpha_grid: Sequence[float], n: int,
                      schedule: Optional[DeltaSchedule] = None, n_min: int = 8) -> SpectrumCurve:
    """Restricted cylinder counts for the average of the right-branch indicator"""
    if n > 22:
        raise BudgetError(f"depth {n} exceeds 22 (2^n cylinders)")
    if n < n_min + 2:
        raise ValidationError(f"depth {n} leaves fewer than three lengths above {n_min}")
    schedule = schedule or DeltaSchedule()
    alphas = [float(a) for a in alpha_grid]
    observable = indicator(0.5, 1.0 + 1e-12)
    centres = np.array([0.5])
    totals = np.zeros(1)
    ns, logs, counts = [], [], []
    for depth in range(1, n + 1):
        centres = np.concatenate([map.left_inverse(centres), map.right_inverse(centres)])
        totals = observable(centres) + np.tile(totals, 2)
        if depth < n_min:
            continue
        sums, c = level_sums(totals / depth, np.zeros_like(totals), alphas, schedule.delta(depth))
        ns.append(depth)
        logs.append(sums)
        counts.append(c)
    estimates = level_estimates(ns, np.array(logs), np.array(counts), alphas, method="mp-coding")
    feasible = [0.0 <= a <= 1.0 and e is not None for a, e in zip(alphas, estimates)]
    return SpectrumCurve(
        alphas=alphas,
        values=[e.value if ok else None for e, ok in zip(estimates, feasible)],
        q_opt=[None] * len(alphas),
        feasible=feasible,
        endpoint=[a in (0.0, 1.0) for a in alphas],
        method="mp-coding",
        note="coding-based, distortion-uncorrected",
    )
