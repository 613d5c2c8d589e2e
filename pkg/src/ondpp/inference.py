"""Streaming and online MAP inference for low-rank NDPPs.

Every algorithm here sees the kernel one column pair (v_t, b_t) at a time and
keeps only the columns of its current solution S (plus the stash T for the
local-search variants). Objective values are principal minors
f(S) = det(V_S^T V_S + B_S^T C B_S); f of the empty set is 1.

Step functions mutate the state they are given and return it, so they can be
driven point by point or through :func:`run_online`.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .core import DetCounter, NdppModel, as_subset, det_columns, f_det, f_det_batch

logger = logging.getLogger(__name__)

ONLINE_ALGORITHMS = ("partition", "greedy", "lss", "two-neighbor")
OFFLINE_ALGORITHMS = ("offline", "brute")
ALGORITHMS = ONLINE_ALGORITHMS + OFFLINE_ALGORITHMS

BRUTE_FORCE_LIMIT = 10**6


class ConfigurationError(ValueError):
    pass


class StreamOverrunError(RuntimeError):
    pass


class InstanceTooLargeError(ValueError):
    pass


class LocalSearchDivergence(RuntimeError):
    """Raised when a local search exceeds its iteration safety cap."""


@dataclass
class StreamPoint:
    """One arriving column pair.

    ``index`` is the item id reported in solutions. For an unpermuted model
    replay it equals the stream position.
    """

    index: int
    v: np.ndarray
    b: np.ndarray


def stream_from_model(model: NdppModel, order: Sequence[int] | None = None) -> Iterator[StreamPoint]:
    order = range(model.n) if order is None else order
    for i in order:
        yield StreamPoint(int(i), model.V[:, i].copy(), model.B[:, i].copy())


def _evaluate(C, cols, counter, indices, extra) -> float:
    lookup = {p.index: (p.v, p.b) for p in extra}
    pairs = [lookup[i] if i in lookup else cols[i] for i in sorted(indices)]
    if not pairs:
        return det_columns(np.zeros((C.shape[0], 0)), np.zeros((C.shape[0], 0)), C, counter)
    Vs = np.column_stack([p[0] for p in pairs])
    Bs = np.column_stack([p[1] for p in pairs])
    return det_columns(Vs, Bs, C, counter)


@dataclass
class SwapRecord:
    step: int
    before: float
    after: float
    items: int  # elements exchanged by the move (2 for a double swap)
    full: bool  # |S| == k when the move was taken


@dataclass
class InferenceState:
    C: np.ndarray
    k: int
    alpha: float = 1.0
    strategy: str = "first"
    S: list[int] = field(default_factory=list)
    T: list[int] = field(default_factory=list)
    cols: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    prev: StreamPoint | None = None
    value: float = 1.0
    swap_count: int = 0  # replaced elements, so a double swap counts twice
    counter: DetCounter = field(default_factory=DetCounter)
    swaps: list[SwapRecord] = field(default_factory=list)
    val_nz: float | None = None
    step: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"k must be positive, got {self.k}")
        if self.alpha < 1.0:
            raise ConfigurationError(f"alpha must be >= 1, got {self.alpha}")
        if self.strategy not in ("first", "best"):
            raise ConfigurationError(f"unknown local search strategy {self.strategy!r}")

    def evaluate(self, indices: Iterable[int], extra: Sequence[StreamPoint] = ()) -> float:
        """f on a candidate set; ``extra`` supplies columns not yet cached."""
        return _evaluate(self.C, self.cols, self.counter, indices, extra)

    def _record(self, new_value: float, items: int = 1) -> None:
        self.swaps.append(SwapRecord(self.step, self.value, new_value, items, len(self.S) == self.k))
        self.swap_count += items
        self.value = new_value

    @property
    def swaps_after_fill(self) -> int:
        return sum(s.items for s in self.swaps if s.full)


def _without(S: Sequence[int], out: Iterable[int]) -> list[int]:
    out = set(out)
    return [i for i in S if i not in out]


def _try_insert(state: InferenceState, pt: StreamPoint) -> bool:
    if len(state.S) >= state.k:
        return False
    value = state.evaluate(state.S + [pt.index], [pt])
    if value > 0.0:
        state.S = sorted(state.S + [pt.index])
        state.cols[pt.index] = (pt.v, pt.b)
        state.value = value
        if len(state.S) == state.k and state.val_nz is None:
            state.val_nz = value
        return True
    return False


def _best_single_swap(state: InferenceState, pt: StreamPoint) -> tuple[int | None, float]:
    best_j, best_val = None, -math.inf
    for j in state.S:
        val = state.evaluate(_without(state.S, [j]) + [pt.index], [pt])
        if val > best_val:
            best_j, best_val = j, val
    return best_j, best_val


def online_greedy_step(state: InferenceState, pt: StreamPoint) -> InferenceState:
    """Insert while there is room, otherwise replace the best element if f improves."""
    state.step += 1
    if _try_insert(state, pt) or not state.S:
        return state
    j, val = _best_single_swap(state, pt)
    if val > state.value:
        del state.cols[j]
        state.S = sorted(_without(state.S, [j]) + [pt.index])
        state.cols[pt.index] = (pt.v, pt.b)
        state._record(val)
    return state


def _apply_move(state: InferenceState, removed: Sequence[int], added: Sequence[int], value: float) -> None:
    """Exchange elements between S and T; ``added`` must already be cached."""
    state.S = sorted(_without(state.S, removed) + list(added))
    state.T = sorted(_without(state.T, added) + list(removed))
    state._record(value, len(removed))


def _search_cap(state: InferenceState) -> int:
    return 10 * state.k * max(len(state.T), 1)


def _local_search(state: InferenceState, r: int) -> InferenceState:
    iterations = 0
    cap = _search_cap(state)
    while state.T:
        threshold = state.alpha * state.value
        chosen = None
        for removed, added in neighborhood_moves(state.S, state.T, r):
            val = state.evaluate(_without(state.S, removed) + list(added))
            if val > threshold:
                if state.strategy == "first":
                    chosen = (removed, added, val)
                    break
                if chosen is None or val > chosen[2]:
                    chosen = (removed, added, val)
        if chosen is None:
            break
        _apply_move(state, *chosen)
        iterations += 1
        if iterations > cap:
            raise LocalSearchDivergence(
                f"local search exceeded {cap} improving moves (|S|={len(state.S)}, |T|={len(state.T)})"
            )
    return state


def local_search_1(state: InferenceState) -> InferenceState:
    """Swap single elements of S with stash elements until no swap beats alpha."""
    return _local_search(state, 1)


def local_search_2(state: InferenceState) -> InferenceState:
    """Like :func:`local_search_1` but over moves exchanging up to two elements."""
    return _local_search(state, 2)


def online_lss_step(state: InferenceState, pt: StreamPoint) -> InferenceState:
    state.step += 1
    if _try_insert(state, pt) or not state.S:
        return state
    j, val = _best_single_swap(state, pt)
    if val > state.alpha * state.value:
        state.cols[pt.index] = (pt.v, pt.b)
        state.S = sorted(_without(state.S, [j]) + [pt.index])
        state.T = sorted(state.T + [j])
        state._record(val)
        local_search_1(state)
    return state


def online_two_neighbor_step(state: InferenceState, pt: StreamPoint) -> InferenceState:
    """Single swaps with the new point, or double swaps bringing in (t-1, t)."""
    state.step += 1
    try:
        if _try_insert(state, pt) or not state.S:
            return state
        j, single_val = _best_single_swap(state, pt)
        pair, double_val = None, -math.inf
        prev = state.prev
        if prev is not None and prev.index not in state.S and prev.index != pt.index:
            for a, b in itertools.combinations(state.S, 2):
                val = state.evaluate(_without(state.S, [a, b]) + [prev.index, pt.index], [prev, pt])
                if val > double_val:
                    pair, double_val = (a, b), val
        # Ties go to the single swap.
        if single_val >= double_val:
            removed, added, best = [j], [pt], single_val
        else:
            removed, added, best = list(pair), [prev, pt], double_val
        if best > state.alpha * state.value:
            for p in added:
                state.cols[p.index] = (p.v, p.b)
            _apply_move(state, removed, [p.index for p in added], best)
            local_search_2(state)
        return state
    finally:
        state.prev = pt


def neighborhood_moves(S: Sequence[int], T: Sequence[int], r: int) -> Iterator[tuple[tuple, tuple]]:
    """Yield (removed, added) pairs for every non-trivial member of N_r(S, T).

    Order: single swaps (a ascending, then c ascending) before double swaps
    (pairs of S lexicographic, then pairs of T lexicographic).
    """
    if r not in (1, 2):
        raise ValueError(f"only r in (1, 2) is supported, got {r}")
    S, T = sorted(S), sorted(T)
    for j in range(1, r + 1):
        for removed in itertools.combinations(S, j):
            for added in itertools.combinations(T, j):
                yield removed, added


def enumerate_neighborhood(S: Sequence[int], T: Sequence[int], r: int) -> list[list[int]]:
    """All S' in S u T with |S'| = |S| and |S' \\ S| <= r, starting with S itself."""
    if set(S) & set(T):
        raise ValueError("S and T must be disjoint")
    S = sorted(S)
    out = [list(S)]
    for removed, added in neighborhood_moves(S, T, r):
        out.append(sorted(_without(S, removed) + list(added)))
    return out


def partition_index(t: int, n: int, k: int) -> int:
    """1-based partition of 0-based stream position t: ceil((t + 1) k / n)."""
    return -(-(t + 1) * k // n)


@dataclass
class PartitionState:
    C: np.ndarray
    n: int
    k: int
    S: list[int] = field(default_factory=list)
    cols: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    best: tuple[StreamPoint, float] | None = None
    position: int = 0
    value: float = 1.0
    counter: DetCounter = field(default_factory=DetCounter)
    swap_count: int = 0  # never changes; kept so traces share one schema

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"k must be positive, got {self.k}")
        if self.k > self.n:
            raise ConfigurationError(f"k={self.k} exceeds declared stream length n={self.n}")

    @property
    def i(self) -> int:
        return partition_index(min(self.position, self.n - 1), self.n, self.k)

    def evaluate(self, indices: Iterable[int], extra: Sequence[StreamPoint] = ()) -> float:
        return _evaluate(self.C, self.cols, self.counter, indices, extra)


def partition_greedy_step(state: PartitionState, pt: StreamPoint) -> PartitionState:
    """Track the best f(S_{i-1} + t) inside partition i; commit it at the boundary.

    A partition whose candidates all have zero value commits nothing.
    """
    t = state.position
    if t >= state.n:
        raise StreamOverrunError(f"stream longer than declared n={state.n}")
    i = partition_index(t, state.n, state.k)
    val = state.evaluate(state.S + [pt.index], [pt])
    if val > 0.0 and (state.best is None or val > state.best[1]):
        state.best = (pt, val)
    state.position += 1
    boundary = t == state.n - 1 or partition_index(t + 1, state.n, state.k) != i
    if boundary and state.best is not None:
        chosen, chosen_val = state.best
        state.S = sorted(state.S + [chosen.index])
        state.cols[chosen.index] = (chosen.v, chosen.b)
        state.value = chosen_val
    if boundary:
        state.best = None
    return state


def offline_greedy(model: NdppModel, k: int, counter: DetCounter | None = None) -> list[int]:
    """k rounds over the full ground set, each adding the item maximizing f(S + j)."""
    if k > model.n:
        raise ConfigurationError(f"k={k} exceeds n={model.n}")
    S: list[int] = []
    for _ in range(k):
        best_j, best_val = None, 0.0
        for j in range(model.n):
            if j in S:
                continue
            val = f_det(model, S + [j], counter)
            if val > best_val:
                best_j, best_val = j, val
        if best_j is None:
            logger.warning("offline greedy stopped at |S|=%d: every marginal is zero", len(S))
            break
        S = sorted(S + [best_j])
    return S


def brute_force_map(
    model: NdppModel, k: int, counter: DetCounter | None = None, chunk: int = 65536
) -> tuple[list[int], float]:
    """Exhaustive argmax of f over all k-subsets; ties go to the lexicographically first."""
    if k > model.n:
        raise ConfigurationError(f"k={k} exceeds n={model.n}")
    total = math.comb(model.n, k)
    if total > BRUTE_FORCE_LIMIT:
        raise InstanceTooLargeError(f"C({model.n},{k}) = {total} subsets exceeds {BRUTE_FORCE_LIMIT}")
    combos = itertools.combinations(range(model.n), k)
    best_subset, best_val = None, -math.inf
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        vals = f_det_batch(model, block.reshape(-1, k), counter)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_subset, best_val = block[j].tolist(), float(vals[j])
    return as_subset(best_subset), best_val


@dataclass
class TraceRow:
    step: int
    algorithm: str
    objective: float
    det_evals: int
    swaps: int


@dataclass
class InferenceResult:
    algorithm: str
    S: list[int]
    value: float
    trace: list[TraceRow]
    det_evals: int
    swap_count: int
    state: InferenceState | PartitionState | None = None


_STEPS: dict[str, Callable] = {
    "greedy": online_greedy_step,
    "lss": online_lss_step,
    "two-neighbor": online_two_neighbor_step,
}


def run_online(
    algorithm: str,
    points: Iterable[StreamPoint],
    C: np.ndarray,
    k: int,
    alpha: float = 1.0,
    n: int | None = None,
    strategy: str = "first",
) -> InferenceResult:
    """Drive one streaming/online algorithm over ``points``, tracing every step.

    ``alpha`` is ignored by the greedy and partition algorithms; ``n`` is
    required by the partition algorithm.
    """
    C = np.asarray(C, dtype=np.float64)
    if algorithm == "partition":
        if n is None:
            raise ConfigurationError("partition greedy needs the stream length n in advance")
        state = PartitionState(C, n, k)
        step = partition_greedy_step
    elif algorithm in _STEPS:
        state = InferenceState(C, k, alpha=alpha if algorithm != "greedy" else 1.0, strategy=strategy)
        step = _STEPS[algorithm]
    else:
        raise ConfigurationError(f"unknown online algorithm {algorithm!r}")
    trace = []
    for t, pt in enumerate(points):
        step(state, pt)
        trace.append(TraceRow(t, algorithm, state.value if state.S else 0.0,
                              state.counter.evaluations, state.swap_count))
    value = state.value if state.S else 0.0
    return InferenceResult(algorithm, list(state.S), value, trace,
                           state.counter.evaluations, state.swap_count, state)


def run_offline(algorithm: str, model: NdppModel, k: int) -> InferenceResult:
    counter = DetCounter()
    if algorithm == "offline":
        S = offline_greedy(model, k, counter)
        value = f_det(model, S) if S else 0.0
    elif algorithm == "brute":
        S, value = brute_force_map(model, k, counter)
    else:
        raise ConfigurationError(f"unknown offline algorithm {algorithm!r}")
    row = TraceRow(model.n - 1, algorithm, value, counter.evaluations, 0)
    return InferenceResult(algorithm, S, value, [row], counter.evaluations, 0)
