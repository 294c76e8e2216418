"""Exact symbolic dynamics on one-sided subshifts of finite type.

Words are tuples of ints. Vectorised work (partition sums, restricted
counting) runs on numpy blocks of words that share a fixed prefix, so the
enumeration of all admissible n-words can be split across workers without
materializing k**n candidates.

Finite words stand for points through their periodic extension; this is the
convention used by every Birkhoff sum in the package.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import settings
from .exceptions import InfeasibleError, ValidationError
from .logger import logger

Word = Tuple[int, ...]

THETA = 0.5


class ShiftSpace(BaseModel):
    """Alphabet {0..k-1} with a 0/1 transition matrix"""
    alphabet_size: int = Field(..., ge=2, description="Number of symbols k")
    transition: Tuple[Tuple[int, ...], ...] = Field(..., description="k x k matrix with entries in {0, 1}")
    name: str = Field("", description="Label used in logs and reports")

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_transition(self):
        k = self.alphabet_size
        if len(self.transition) != k or any(len(row) != k for row in self.transition):
            raise ValueError(f"transition matrix must be {k}x{k}")
        if any(v not in (0, 1) for row in self.transition for v in row):
            raise ValueError("transition entries must be 0 or 1")
        for i in range(k):
            if not any(self.transition[i]):
                raise ValueError(f"symbol {i} has no successor (row {i} is all zero)")
            if not any(row[i] for row in self.transition):
                raise ValueError(f"symbol {i} has no predecessor (column {i} is all zero)")
        return self

    @classmethod
    def full(cls, k: int = 2) -> "ShiftSpace":
        return cls(alphabet_size=k, transition=tuple((1,) * k for _ in range(k)), name=f"full-{k}")

    @classmethod
    def golden_mean(cls) -> "ShiftSpace":
        return cls(alphabet_size=2, transition=((1, 1), (1, 0)), name="golden-mean")

    @classmethod
    def from_rows(cls, rows: Sequence[str], name: str = "") -> "ShiftSpace":
        """Build from rows written as 0/1 strings, e.g. ["11", "10"]"""
        return cls(
            alphabet_size=len(rows),
            transition=tuple(tuple(int(c) for c in row) for row in rows),
            name=name,
        )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.transition, dtype=np.int64)

    @property
    def allowed(self) -> np.ndarray:
        return np.array(self.transition, dtype=bool)

    @property
    def successors(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(
            tuple(j for j, v in enumerate(row) if v) for row in self.transition
        )

    def is_admissible(self, word: Sequence[int]) -> bool:
        if any(s < 0 or s >= self.alphabet_size for s in word):
            return False
        return all(self.transition[a][b] for a, b in zip(word, word[1:]))

    def rows(self) -> List[str]:
        return ["".join(str(v) for v in row) for row in self.transition]


class ShiftMetric(BaseModel):
    """d(x, y) = theta**j where j is the length of the longest common prefix"""
    theta: float = Field(THETA, gt=0.0, lt=1.0)
    horizon: int = Field(64, ge=1, description="Extra symbols compared beyond the window")

    model_config = ConfigDict(frozen=True)

    def _exponent(self, eps: float) -> float:
        return math.log(eps) / math.log(self.theta)

    def distance(self, x: Sequence[int], y: Sequence[int]) -> float:
        length = max(len(x), len(y)) + self.horizon
        j = common_prefix_length(periodic_extension(x, length), periodic_extension(y, length))
        return 0.0 if j >= length else self.theta ** j

    def bowen_distance(self, x: Sequence[int], y: Sequence[int], n: int) -> float:
        """max over i < n of d(sigma^i x, sigma^i y)"""
        length = max(len(x), len(y), n) + self.horizon
        j = common_prefix_length(periodic_extension(x, length), periodic_extension(y, length))
        if j >= length:
            return 0.0
        return self.theta ** max(0, j - n + 1)

    def ball_depth(self, n: int, eps: float) -> int:
        """Number of leading symbols shared by all points of B_n(x, eps)"""
        if eps <= 0:
            raise ValidationError(f"ball radius must be positive, got {eps}")
        if eps > 1.0:
            return 0
        return n + int(math.floor(self._exponent(eps) + 1e-9))

    def closeness_depth(self, eps: float) -> int:
        """Smallest j with theta**j <= eps"""
        if eps >= 1.0:
            return 0
        return int(math.ceil(self._exponent(eps) - 1e-9))


class Potential(BaseModel):
    """Locally constant function of finite memory on a shift space"""
    space: ShiftSpace
    memory: int = Field(..., ge=1)
    table: Dict[Word, float] = Field(..., description="Value for each admissible memory-word")
    name: str = ""

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_table(self):
        expected = set(enumerate_words(self.space, self.memory))
        keys = set(self.table)
        if keys != expected:
            missing = sorted(expected - keys)
            extra = sorted(keys - expected)
            raise ValueError(
                f"potential table must cover exactly the {len(expected)} admissible "
                f"{self.memory}-words (missing {missing[:4]}, not admissible {extra[:4]})"
            )
        return self

    @classmethod
    def from_table(cls, space: ShiftSpace, memory: int, table: Dict[Word, float], name: str = "") -> "Potential":
        return cls(space=space, memory=memory, table={tuple(w): float(v) for w, v in table.items()}, name=name)

    @classmethod
    def from_function(cls, space: ShiftSpace, memory: int, fn: Callable[[Word], float], name: str = "") -> "Potential":
        return cls(
            space=space,
            memory=memory,
            table={w: float(fn(w)) for w in enumerate_words(space, memory)},
            name=name,
        )

    @classmethod
    def constant(cls, space: ShiftSpace, c: float, memory: int = 1) -> "Potential":
        return cls.from_function(space, memory, lambda w: c, name=f"const({c:g})")

    @classmethod
    def indicator(cls, space: ShiftSpace, symbol: int) -> "Potential":
        return cls.from_function(space, 1, lambda w: 1.0 if w[0] == symbol else 0.0, name=f"1[{symbol}]")

    def value(self, word: Sequence[int]) -> float:
        return self.table[tuple(word[: self.memory])]

    def values(self) -> np.ndarray:
        return np.array(list(self.table.values()), dtype=float)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values())))

    @property
    def oscillation(self) -> float:
        v = self.values()
        return float(v.max() - v.min())

    def dense(self) -> np.ndarray:
        """Table over all k**memory words in lexicographic order.

        An inadmissible window takes the value of the admissible word sharing
        the longest prefix with it (lexicographically smallest on ties).
        """
        k, m = self.space.alphabet_size, self.memory
        admissible = list(self.table)
        out = np.empty(k ** m, dtype=float)
        for idx in range(k ** m):
            word = _index_to_word(idx, k, m)
            if word in self.table:
                out[idx] = self.table[word]
            else:
                best = max(admissible, key=lambda w: (common_prefix_length(w, word), [-s for s in w]))
                out[idx] = self.table[best]
        return out

    def lift(self, memory: int) -> "Potential":
        """Same function seen as a potential of larger memory"""
        if memory < self.memory:
            raise ValidationError(f"cannot lower memory from {self.memory} to {memory}")
        if memory == self.memory:
            return self
        return Potential.from_function(self.space, memory, lambda w: self.table[w[: self.memory]], name=self.name)

    def edge_matrix(self) -> np.ndarray:
        """W[i, j] = value seen on the edge i -> j (memory <= 2)"""
        k = self.space.alphabet_size
        if self.memory > 2:
            raise ValidationError(
                f"memory {self.memory} > 2: recode onto the higher-block shift first (recode_higher_block)"
            )
        dense = self.dense()
        if self.memory == 1:
            return np.repeat(dense[:, None], k, axis=1)
        return dense.reshape(k, k)

    def scaled(self, c: float) -> "Potential":
        return Potential(space=self.space, memory=self.memory, table={w: c * v for w, v in self.table.items()})


def linear_combination(terms: Sequence[Tuple[float, Potential]]) -> Potential:
    """sum of c_i * pot_i, lifted to the largest memory"""
    if not terms:
        raise ValidationError("linear combination needs at least one term")
    space = terms[0][1].space
    if any(pot.space != space for _, pot in terms):
        raise ValidationError("potentials live on different shift spaces")
    memory = max(pot.memory for _, pot in terms)
    lifted = [(c, pot.lift(memory)) for c, pot in terms]
    table = {w: sum(c * pot.table[w] for c, pot in lifted) for w in lifted[0][1].table}
    return Potential(space=space, memory=memory, table=table)


def _index_to_word(idx: int, k: int, m: int) -> Word:
    digits = []
    for _ in range(m):
        idx, r = divmod(idx, k)
        digits.append(r)
    return tuple(reversed(digits))


def common_prefix_length(x: Sequence[int], y: Sequence[int]) -> int:
    j = 0
    for a, b in zip(x, y):
        if a != b:
            break
        j += 1
    return j


def periodic_extension(word: Sequence[int], length: int) -> Word:
    if not word:
        raise ValidationError("cannot extend an empty word")
    reps = length // len(word) + 1
    return tuple(word) * reps if len(word) * reps == length else (tuple(word) * reps)[:length]


def enumerate_words(space: ShiftSpace, n: int, prefix: Word = ()) -> Iterator[Word]:
    """Admissible n-words in lexicographic order, depth-first with prefix pruning"""
    if n < 1:
        raise ValidationError(f"word length must be >= 1, got {n}")
    prefix = tuple(prefix)
    if len(prefix) > n or not space.is_admissible(prefix):
        return
    successors = space.successors
    k = space.alphabet_size
    word = list(prefix)

    def extend() -> Iterator[Word]:
        if len(word) == n:
            yield tuple(word)
            return
        for s in (range(k) if not word else successors[word[-1]]):
            word.append(s)
            yield from extend()
            word.pop()

    yield from extend()


def count_words(space: ShiftSpace, n: int) -> int:
    """1^T A^(n-1) 1 in exact integer arithmetic"""
    if n < 1:
        raise ValidationError(f"word length must be >= 1, got {n}")
    successors = space.successors
    v = [1] * space.alphabet_size
    for _ in range(n - 1):
        v = [sum(v[j] for j in successors[i]) for i in range(space.alphabet_size)]
    return sum(v)


def _block_dtype(k: int):
    return np.int8 if k <= 127 else np.int32


def extend_block(allowed: np.ndarray, block: np.ndarray, steps: int) -> np.ndarray:
    """Append `steps` admissible symbols to every row, keeping lexicographic order"""
    k = allowed.shape[0]
    for _ in range(steps):
        rows = block.shape[0]
        keep = allowed[block[:, -1].astype(np.int64)].reshape(-1)
        parents = np.repeat(block, k, axis=0)[keep]
        symbols = np.tile(np.arange(k, dtype=block.dtype), rows)[keep]
        block = np.concatenate([parents, symbols[:, None]], axis=1)
    return block


def block_prefixes(space: ShiftSpace, n: int, block_size: Optional[int] = None) -> Tuple[List[Word], int]:
    """Prefixes partitioning the n-words into blocks of at most ~block_size words"""
    block_size = block_size or settings.block_size
    k = space.alphabet_size
    suffix = max(1, int(math.floor(math.log(block_size) / math.log(k))))
    prefix_len = max(0, n - suffix)
    if prefix_len == 0:
        return [()], n
    return list(enumerate_words(space, prefix_len)), n - prefix_len


def build_block(space: ShiftSpace, prefix: Word, suffix_len: int) -> np.ndarray:
    dtype = _block_dtype(space.alphabet_size)
    if prefix:
        start = np.array([prefix], dtype=dtype)
        return extend_block(space.allowed, start, suffix_len)
    start = np.arange(space.alphabet_size, dtype=dtype)[:, None]
    return extend_block(space.allowed, start, suffix_len - 1)


def word_blocks(space: ShiftSpace, n: int, block_size: Optional[int] = None) -> Iterator[np.ndarray]:
    """All admissible n-words as numpy blocks, lexicographic across blocks"""
    prefixes, suffix_len = block_prefixes(space, n, block_size)
    for prefix in prefixes:
        yield build_block(space, prefix, suffix_len)


def map_word_blocks(
    space: ShiftSpace,
    n: int,
    fn: Callable[[np.ndarray], object],
    workers: Optional[int] = None,
    block_size: Optional[int] = None,
) -> List[object]:
    """fn applied to every block; results in prefix order for any worker count"""
    prefixes, suffix_len = block_prefixes(space, n, block_size)
    workers = workers or settings.workers

    def task(prefix: Word):
        return fn(build_block(space, prefix, suffix_len))

    if workers <= 1 or len(prefixes) == 1:
        return [task(p) for p in prefixes]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(task, prefixes))


def birkhoff_sum(pot: Potential, word: Sequence[int], n: Optional[int] = None) -> float:
    """S_n pot along the periodic extension of word (n defaults to len(word))"""
    word = tuple(word)
    m = pot.memory
    if len(word) < m:
        raise ValidationError(f"word of length {len(word)} is shorter than potential memory {m}")
    n = len(word) if n is None else n
    k = pot.space.alphabet_size
    dense = pot.dense()
    length = len(word)
    total = 0.0
    for i in range(n):
        idx = 0
        for j in range(m):
            idx = idx * k + word[(i + j) % length]
        total += dense[idx]
    return float(total)


def birkhoff_average(pot: Potential, word: Sequence[int]) -> float:
    return birkhoff_sum(pot, word) / len(word)


def birkhoff_sums(pot: Potential, block: np.ndarray, dense: Optional[np.ndarray] = None) -> np.ndarray:
    """Vectorised birkhoff_sum over the rows of a word block"""
    words = block.astype(np.int64)
    rows, length = words.shape
    m = pot.memory
    if length < m:
        raise ValidationError(f"words of length {length} are shorter than potential memory {m}")
    dense = pot.dense() if dense is None else dense
    k = pot.space.alphabet_size
    ext = np.concatenate([words, words[:, : m - 1]], axis=1) if m > 1 else words
    idx = np.zeros((rows, length), dtype=np.int64)
    for j in range(m):
        idx = idx * k + ext[:, j: j + length]
    return dense[idx].sum(axis=1)


def separated_set(space: ShiftSpace, n: int, eps: float, metric: Optional[ShiftMetric] = None) -> List[Word]:
    """Greedy maximal (n, eps)-separated set among the admissible n-words"""
    if not 0 < eps <= 1:
        raise ValidationError(f"eps must lie in (0, 1], got {eps}")
    metric = metric or ShiftMetric()
    depth = metric.ball_depth(n, eps)
    seen = set()
    chosen = []
    for w in enumerate_words(space, n):
        key = periodic_extension(w, depth)
        if key not in seen:
            seen.add(key)
            chosen.append(w)
    logger.debug(f"separated_set n={n} eps={eps}: {len(chosen)} words at depth {depth}")
    return chosen


def variation(pot: Potential, eps: float, metric: Optional[ShiftMetric] = None) -> float:
    """sup |pot(x) - pot(y)| over d(x, y) <= eps"""
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    metric = metric or ShiftMetric()
    depth = metric.closeness_depth(eps)
    if depth >= pot.memory:
        return 0.0
    groups: Dict[Word, List[float]] = {}
    for w, v in pot.table.items():
        groups.setdefault(w[:depth], []).append(v)
    return float(max(max(vals) - min(vals) for vals in groups.values()))


def mixing_gap(space: ShiftSpace) -> int:
    """Primitivity index: uniform specification gap of a mixing SFT"""
    allowed = space.allowed
    if allowed.all():
        return 0
    a = space.matrix
    k = space.alphabet_size
    power = a.copy()
    # Wielandt: a primitive k x k matrix has A^((k-1)^2+1) > 0
    for m in range(1, (k - 1) ** 2 + 2):
        if (power > 0).all():
            return m
        power = ((power @ a) > 0).astype(np.int64)
    raise InfeasibleError("no uniform specification gap: transition matrix is not primitive")


@lru_cache(maxsize=None)
def bridge(space: ShiftSpace, a: int, c: int, g: int) -> Word:
    """Lexicographically smallest b of length g with a.b.c admissible"""
    if g == 0:
        if space.transition[a][c]:
            return ()
    else:
        for b in enumerate_words(space, g):
            if space.transition[a][b[0]] and space.transition[b[-1]][c]:
                return b
    raise InfeasibleError(f"no admissible bridge of length {g} from {a} to {c}")


def recode_higher_block(space: ShiftSpace, pot: Potential) -> Tuple[ShiftSpace, Potential]:
    """Recode a memory-m potential as a memory-2 potential on the (m-1)-block shift"""
    m = pot.memory
    if m <= 2:
        return space, pot
    states = list(enumerate_words(space, m - 1))
    index = {w: i for i, w in enumerate(states)}
    rows = tuple(
        tuple(1 if u[1:] == v[:-1] else 0 for v in states) for u in states
    )
    block_space = ShiftSpace(alphabet_size=len(states), transition=rows, name=f"{space.name}[{m - 1}-block]")
    table = {}
    for u in states:
        for v in states:
            if u[1:] == v[:-1]:
                table[(index[u], index[v])] = pot.table[u + (v[-1],)]
    logger.info(f"Recoded memory-{m} potential onto {len(states)}-state block shift")
    return block_space, Potential(space=block_space, memory=2, table=table, name=pot.name)
