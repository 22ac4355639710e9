"""Coupled samplers for the lineage-counting processes.

Three block-counting processes are driven by one stream of marked
arrivals:

* ``kingman``  -- the Kingman coalescent (pairwise coalescence only),
* ``mutation`` -- the coalescent with lineages killed at rate ``theta/2``,
* ``asg``      -- the ancestral selection graph, which in addition
  branches at rate ``sigma/2`` per lineage.

An arrival is a pair mark ``(i, j)``, a mutation mark ``i`` or a
selection mark ``i``; a process applies it only when its current count
covers the mark's indices. Only marks that can affect at least one
process are generated, and indices are drawn when the mark fires.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels

__all__ = [
    "ModelParams",
    "MarkKind",
    "Mark",
    "EventRecord",
    "CountPath",
    "CoupledTrajectory",
    "EntranceLaw",
    "EventCapExceeded",
    "COORDINATES",
    "sample_arrival",
    "apply_mark",
    "simulate_coupled",
    "simulate_birth_death",
    "counts_at_times",
    "hitting_time",
]

COORDINATES = ("kingman", "mutation", "asg")
DEFAULT_EVENT_CAP = 10**8


class EventCapExceeded(RuntimeError):
    """A trajectory needed more events than its safety cap allows."""


@dataclasses.dataclass(frozen=True)
class ModelParams:
    """Mutation rate ``theta`` and selection rate ``sigma`` (coalescent units)."""

    theta: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        for name in ("theta", "sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    def death_rate(self, n):
        return n * (n - 1 + self.theta) / 2

    def birth_rate(self, n):
        return self.sigma * n / 2

    def holding_rate(self, n):
        return n * (n - 1 + self.theta + self.sigma) / 2

    def up_probability(self, n):
        """Probability that the next jump from level ``n`` is upward."""
        denom = n - 1 + self.theta + self.sigma
        if np.any(np.asarray(denom) <= 0):
            raise ValueError(f"level {n} is absorbing")
        return self.sigma / denom


class MarkKind(enum.IntEnum):
    PAIR = _kernels.PAIR
    MUTATION = _kernels.MUTATION
    SELECTION = _kernels.SELECTION


class Mark(NamedTuple):
    """An arrival mark. ``j`` is only meaningful for pair marks (0 otherwise)."""

    kind: MarkKind
    i: int
    j: int = 0

    @classmethod
    def pair(cls, i: int, j: int) -> "Mark":
        if not 1 <= i < j:
            raise ValueError(f"pair mark needs 1 <= i < j, got ({i}, {j})")
        return cls(MarkKind.PAIR, i, j)

    @classmethod
    def mutation(cls, i: int) -> "Mark":
        if i < 1:
            raise ValueError(f"mutation mark needs i >= 1, got {i}")
        return cls(MarkKind.MUTATION, i)

    @classmethod
    def selection(cls, i: int) -> "Mark":
        if i < 1:
            raise ValueError(f"selection mark needs i >= 1, got {i}")
        return cls(MarkKind.SELECTION, i)


class EventRecord(NamedTuple):
    time: float
    mark: Mark
    applied: tuple[bool, bool, bool]


def _check_counts(counts) -> tuple[int, int, int]:
    a, b, c = (int(x) for x in counts)
    if min(a, b, c) < 0 or b > a or b > c:
        raise ValueError(f"counts {counts} violate 0 <= mutation <= min(kingman, asg)")
    return a, b, c


def arrival_rates(counts, params: ModelParams) -> tuple[float, float, float]:
    """Rates of pair, mutation and selection marks that can change ``counts``."""
    a, _, c = _check_counts(counts)
    m = max(a, c)
    return 0.5 * m * (m - 1), 0.5 * params.theta * c, 0.5 * params.sigma * c


def sample_arrival(counts, params: ModelParams, rng: np.random.Generator):
    """Draw the holding time and mark of the next effective arrival.

    Returns ``None`` when no mark can change any of the three counts
    (the triple is absorbed). The draw order matches the compiled sampler.
    """
    r_pair, r_mut, r_sel = arrival_rates(counts, params)
    total = r_pair + r_mut + r_sel
    if total <= 0:
        return None
    a, _, c = (int(x) for x in counts)
    m = max(a, c)
    h = rng.standard_exponential() / total
    u = rng.random() * total
    if u < r_pair:
        i0 = int(rng.integers(0, m))
        j0 = int(rng.integers(0, m - 1))
        if j0 >= i0:
            j0 += 1
        return h, Mark.pair(min(i0, j0) + 1, max(i0, j0) + 1)
    i = int(rng.integers(0, c)) + 1
    if u < r_pair + r_mut:
        return h, Mark.mutation(i)
    return h, Mark.selection(i)


def apply_mark(counts, mark: Mark) -> tuple[tuple[int, int, int], tuple[bool, bool, bool]]:
    """Thin one mark against each process.

    A pair mark ``(i, j)`` merges two lineages in every process with at
    least ``j`` lineages; a mutation mark ``i`` kills a lineage in the
    mutation and ASG processes when ``i`` is within their count; a
    selection mark ``i`` branches the ASG when ``i`` is within its count.
    """
    a, b, c = _check_counts(counts)
    if mark.kind == MarkKind.PAIR:
        hit = (a >= mark.j, b >= mark.j, c >= mark.j)
        new = (a - hit[0], b - hit[1], c - hit[2])
    elif mark.kind == MarkKind.MUTATION:
        hit = (False, mark.i <= b, mark.i <= c)
        new = (a, b - hit[1], c - hit[2])
    else:
        hit = (False, False, mark.i <= c)
        new = (a, b, c + hit[2])
    return new, hit


def _coord_index(coordinate) -> int:
    if isinstance(coordinate, str):
        return COORDINATES.index(coordinate)
    idx = int(coordinate)
    if idx not in (0, 1, 2):
        raise ValueError(f"unknown coordinate {coordinate!r}")
    return idx


@dataclasses.dataclass(frozen=True)
class CountPath:
    """Right-continuous piecewise-constant lineage count on ``[start_time, end_time]``.

    ``counts[0]`` holds on ``[start_time, times[0])`` and ``counts[i]`` on
    ``[times[i-1], times[i])``.
    """

    start_time: float
    times: np.ndarray
    counts: np.ndarray
    end_time: float
    params: ModelParams | None = None
    stop_reason: str = ""

    def __post_init__(self):
        if len(self.counts) != len(self.times) + 1:
            raise ValueError("counts must have one entry more than times")

    @property
    def n_start(self) -> int:
        return int(self.counts[0])

    @property
    def edges(self) -> np.ndarray:
        """Segment boundaries ``[start, times..., end]``."""
        return np.concatenate(([self.start_time], self.times, [self.end_time]))

    def count_at(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.start_time) or np.any(t > self.end_time):
            raise ValueError(
                f"time outside path coverage [{self.start_time}, {self.end_time}]")
        return self.counts[np.searchsorted(self.times, t, side="right")]

    def hitting_time(self, level: int):
        """First time the count is ``<= level``; ``None`` if not reached."""
        if self.counts[0] <= level:
            return self.start_time
        idx = np.flatnonzero(self.counts[1:] <= level)
        if idx.size == 0:
            return None
        return float(self.times[idx[0]])

    def then(self, other: "CountPath") -> "CountPath":
        """Concatenate ``other``, which must start where and when this path ends."""
        if other.start_time != self.end_time or other.counts[0] != self.counts[-1]:
            raise ValueError("paths do not join")
        return CountPath(self.start_time, np.concatenate((self.times, other.times)),
                         np.concatenate((self.counts, other.counts[1:])), other.end_time,
                         self.params, other.stop_reason)

    def shifted(self, dt: float) -> "CountPath":
        return dataclasses.replace(self, start_time=self.start_time + dt,
                                   times=self.times + dt, end_time=self.end_time + dt)


@dataclasses.dataclass(frozen=True)
class CoupledTrajectory:
    """The three coupled counts driven by one arrival stream."""

    n0: int
    params: ModelParams
    start_time: float
    times: np.ndarray
    kinds: np.ndarray
    mark_i: np.ndarray
    mark_j: np.ndarray
    applied: np.ndarray  # (events, 3) bool
    counts: np.ndarray  # (events + 1, 3), row 0 is the initial state
    stop_time: float
    stop_reason: str
    stop_level: int | None = None

    def __len__(self):
        return len(self.times)

    @cached_property
    def events(self) -> list[EventRecord]:
        out = []
        for t, k, i, j, ap in zip(self.times, self.kinds, self.mark_i, self.mark_j, self.applied):
            out.append(EventRecord(float(t), Mark(MarkKind(int(k)), int(i), int(j)),
                                   (bool(ap[0]), bool(ap[1]), bool(ap[2]))))
        return out

    def counts_at(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.start_time) or np.any(t > self.stop_time):
            raise ValueError("time outside trajectory coverage")
        return self.counts[np.searchsorted(self.times, t, side="right")]

    def path(self, coordinate="asg") -> CountPath:
        """Jump-only path of one coordinate."""
        c = _coord_index(coordinate)
        changed = self.applied[:, c]
        return CountPath(self.start_time, self.times[changed],
                         np.concatenate(([self.counts[0, c]], self.counts[1:, c][changed])),
                         self.stop_time, self.params, self.stop_reason)

    def order_violations(self) -> int:
        """Number of states where the mutation count exceeds either other count."""
        k, m, s = self.counts[:, 0], self.counts[:, 1], self.counts[:, 2]
        return int(np.count_nonzero((m > k) | (m > s)))


@dataclasses.dataclass(frozen=True)
class EntranceLaw:
    """Approximate law of the first time a process started from infinity hits
    level ``n``: a gamma distribution matched on mean and variance."""

    n: int
    mean: float
    var: float

    def sample(self, rng: np.random.Generator) -> float:
        if self.var <= 0:
            return self.mean
        shape = self.mean**2 / self.var
        return float(rng.gamma(shape, self.var / self.mean))


def _initial_capacity(n0: int, max_events: int) -> int:
    return int(min(max_events, max(1024, 2 * n0 + 1024)))


def simulate_coupled(params: ModelParams, n0: int, rng: np.random.Generator, *,
                     stop_level: int | None = 1, stop_coordinate="all",
                     horizon: float | None = None, start_time: float = 0.0,
                     max_events: int = DEFAULT_EVENT_CAP) -> CoupledTrajectory:
    """Simulate the coupled triple from ``n0`` lineages each.

    Stops when the chosen coordinate (``"all"``: every coordinate) is at
    or below ``stop_level``, when time reaches ``horizon``, or when no
    further event can occur.
    """
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    if stop_level is None and horizon is None:
        raise ValueError("need a stop level or a horizon")
    if stop_level is not None and stop_level < 1 and horizon is None:
        raise ValueError("stop level must be >= 1")
    coord = -1 if stop_coordinate == "all" else _coord_index(stop_coordinate)
    level = -1 if stop_level is None else int(stop_level)
    hz = math.inf if horizon is None else float(horizon)

    state = np.array([n0, n0, n0], dtype=np.int64)
    t = float(start_time)
    cap = _initial_capacity(n0, max_events)
    chunks = []
    total = 0
    while True:
        buf = (np.empty(cap), np.empty(cap, np.int8), np.empty(cap, np.int64),
               np.empty(cap, np.int64), np.empty((cap, 3), np.bool_), np.empty((cap, 3), np.int64))
        k, status, t = _kernels.coupled_chunk(rng, state, t, params.theta, params.sigma,
                                              level, coord, hz, *buf)
        chunks.append(tuple(x[:k] for x in buf))
        total += k
        if status != _kernels.RUNNING:
            break
        if total >= max_events:
            raise EventCapExceeded(f"more than {max_events} events")
        cap = min(2 * cap, max_events - total)

    cat = [np.concatenate([c[f] for c in chunks]) for f in range(6)]
    counts = np.concatenate((np.array([[n0, n0, n0]]), cat[5]))
    reason = {1: "level", 2: "horizon", 3: "absorbed"}[status]
    return CoupledTrajectory(n0, params, float(start_time), cat[0], cat[1], cat[2], cat[3],
                             cat[4], counts, float(t), reason, stop_level)


def simulate_birth_death(params: ModelParams, n0: int, rng: np.random.Generator, *,
                         stop_level: int | None = 1, horizon: float | None = None,
                         start_time: float = 0.0,
                         max_events: int = DEFAULT_EVENT_CAP) -> CountPath:
    """Simulate the ASG lineage count alone (the third coordinate's marginal law).

    Faster than :func:`simulate_coupled` when the coupling is not needed.
    """
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    if stop_level is None and horizon is None:
        raise ValueError("need a stop level or a horizon")
    level = -1 if stop_level is None else int(stop_level)
    hz = math.inf if horizon is None else float(horizon)
    state = np.array([n0], dtype=np.int64)
    t = float(start_time)
    cap = _initial_capacity(n0, max_events)
    times, counts = [], []
    total = 0
    while True:
        bt, bc = np.empty(cap), np.empty(cap, np.int64)
        k, status, t = _kernels.birth_death_chunk(rng, state, t, params.theta, params.sigma,
                                                  level, hz, bt, bc)
        times.append(bt[:k])
        counts.append(bc[:k])
        total += k
        if status != _kernels.RUNNING:
            break
        if total >= max_events:
            raise EventCapExceeded(f"more than {max_events} events")
        cap = min(2 * cap, max_events - total)
    reason = {1: "level", 2: "horizon", 3: "absorbed"}[status]
    return CountPath(float(start_time), np.concatenate(times),
                     np.concatenate([[n0]] + counts), float(t), params, reason)


def counts_at_times(params: ModelParams, n0: int, rng: np.random.Generator, query,
                    start_time: float = 0.0, stop_level: int | None = None):
    """ASG lineage count at each of the sorted ``query`` times, without storing the path.

    Uses the generator exactly as :func:`simulate_birth_death` with the
    same ``stop_level`` and the horizon at the last query, so the two
    agree draw for draw. Queries before ``start_time`` return -1 and
    queries after the stop level is reached return -2. With
    ``stop_level`` the time at which it was reached is returned as well.
    """
    q = np.ascontiguousarray(query, dtype=float)
    if q.size and np.any(np.diff(q) < 0):
        raise ValueError("query times must be sorted")
    out = np.empty(q.size, dtype=np.int64)
    level = -1 if stop_level is None else int(stop_level)
    _, t = _kernels.birth_death_at_times(rng, int(n0), float(start_time), params.theta,
                                         params.sigma, level, q, out)
    if stop_level is None:
        return out
    return out, float(t)


def simulate_coupled_reference(params: ModelParams, n0: int, rng: np.random.Generator, *,
                               stop_level: int = 1, max_events: int = 10**6) -> list[EventRecord]:
    """Event-by-event sampler built from :func:`sample_arrival` and
    :func:`apply_mark`. Slow; kept as a cross-check of the compiled loop."""
    counts = (n0, n0, n0)
    t = 0.0
    out = []
    while max(counts[0], counts[2]) > stop_level:
        arrival = sample_arrival(counts, params, rng)
        if arrival is None:
            break
        h, mark = arrival
        t += h
        counts, applied = apply_mark(counts, mark)
        out.append(EventRecord(t, mark, applied))
        if len(out) > max_events:
            raise EventCapExceeded(f"more than {max_events} events")
    return out


def hitting_time(trajectory, coordinate="asg", level: int = 1):
    """First time the chosen count is ``<= level``, or ``None`` if the
    trajectory stopped before reaching it."""
    if level < 0:
        raise ValueError("level must be >= 0")
    if isinstance(trajectory, CountPath):
        return trajectory.hitting_time(level)
    return trajectory.path(coordinate).hitting_time(level)


def embedded_jump_counts(paths: Sequence[CountPath], n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-level tallies ``(ups, jumps)`` of the embedded jump chain."""
    ups = np.zeros(n_max + 1, dtype=np.int64)
    jumps = np.zeros(n_max + 1, dtype=np.int64)
    for p in paths:
        before = p.counts[:-1]
        step = np.diff(p.counts)
        np.add.at(jumps, before, 1)
        np.add.at(ups, before[step > 0], 1)
    return ups, jumps
