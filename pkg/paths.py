#!/usr/bin/env python3
"""
Jump-time-stamped paths
Trajectories of a chain, projected well-label paths and their CSV dumps
"""

from dataclasses import dataclass
from typing import Hashable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import InvalidHorizon, StateNotFound, ValidationError
from markov_chain import StateSpace


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Piecewise-constant path on [0, horizon).

    States are stored as indices into ``space``. ``times[k]`` is the time of
    the k-th jump and ``states[k]`` the state entered there. A jump at the
    horizon itself is not part of the path.
    """

    space: StateSpace
    start: int
    times: np.ndarray
    states: np.ndarray
    horizon: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=np.int64)
        if not self.horizon > 0:
            raise InvalidHorizon(f"horizon must be positive, got {self.horizon!r}")
        if times.shape != states.shape or times.ndim != 1:
            raise ValidationError("times and states must be 1-d arrays of equal length")
        if times.size:
            if times[0] <= 0 or np.any(np.diff(times) <= 0):
                raise ValidationError("jump times must be positive and strictly increasing")
            if times[-1] > self.horizon:
                raise ValidationError("jump after the horizon")
            visited = np.concatenate(([self.start], states))
            if np.any(visited[1:] == visited[:-1]):
                raise ValidationError("consecutive states must differ")
        times.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "horizon", float(self.horizon))

    @classmethod
    def from_events(cls, start, events: Iterable[Tuple[float, Hashable]], horizon: float,
                    space: Optional[StateSpace] = None) -> "Trajectory":
        """
        Build from labels: ``events`` are (jump time, new state) pairs.

        Without a state space one is made from the labels in order of
        appearance. Events at or after the horizon are dropped.
        """
        events = [(float(t), s) for t, s in events if t < horizon]
        if space is None:
            seen = []
            for label in [start] + [s for _, s in events]:
                if label not in seen:
                    seen.append(label)
            space = StateSpace(tuple(seen))
        times = np.array([t for t, _ in events], dtype=float)
        states = np.array([space.index(s) for _, s in events], dtype=np.int64)
        return cls(space, space.index(start), times, states, horizon)

    @property
    def n_jumps(self) -> int:
        return int(self.times.size)

    def segments(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(left endpoints, durations, state indices) of the constant pieces"""
        left = np.concatenate(([0.0], self.times))
        right = np.concatenate((self.times, [self.horizon]))
        visited = np.concatenate(([self.start], self.states))
        return left, right - left, visited

    def events(self) -> List[Tuple[float, Hashable]]:
        return [(float(t), self.space.label(int(s))) for t, s in zip(self.times, self.states)]

    def state_at(self, t: float):
        k = int(np.searchsorted(self.times, t, side='right'))
        idx = self.start if k == 0 else int(self.states[k - 1])
        return self.space.label(idx)


def membership_mask(space: StateSpace, labels: Iterable) -> np.ndarray:
    mask = np.zeros(len(space), dtype=bool)
    for label in labels:
        if label not in space:
            raise StateNotFound(f"state {label!r} is not in the state space")
        mask[space.index(label)] = True
    return mask


def occupation_time(traj: Trajectory, labels: Iterable) -> float:
    """T^F at the horizon: total time spent in the given states"""
    mask = membership_mask(traj.space, labels)
    _, durations, visited = traj.segments()
    return float(durations[mask[visited]].sum())


@dataclass(frozen=True, eq=False)
class ProjectedPath:
    """
    Well-label path with jump times tau_1 < tau_2 < ...

    kind is "X" for the trace projection and "X_hat" for the last-visited
    well on the original clock.
    """

    kind: str
    start: Hashable
    jump_times: np.ndarray
    labels: Tuple[Hashable, ...]
    horizon: float

    def __post_init__(self):
        taus = np.asarray(self.jump_times, dtype=float)
        if taus.size != len(self.labels):
            raise ValidationError("one label per jump time is required")
        if taus.size and (taus[0] <= 0 or np.any(np.diff(taus) <= 0)):
            raise ValidationError("projected jump times must be strictly increasing")
        taus.setflags(write=False)
        object.__setattr__(self, "jump_times", taus)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_jumps(self) -> int:
        return len(self.labels)

    def sojourns(self) -> np.ndarray:
        """T_n = tau_n - tau_{n-1}, tau_0 = 0"""
        return np.diff(np.concatenate(([0.0], self.jump_times)))

    def count(self, t: float) -> int:
        """N_t: number of jumps in [0, t]"""
        return int(np.searchsorted(self.jump_times, t, side='right'))

    def value_at(self, t: float):
        k = self.count(t)
        return self.start if k == 0 else self.labels[k - 1]

    def visits(self) -> List[Hashable]:
        return [self.start] + list(self.labels)

    def transitions(self) -> List[Tuple[Hashable, Hashable, float]]:
        """(from, to, sojourn in from) for every jump"""
        values = self.visits()
        sojourns = self.sojourns()
        return [(values[k], values[k + 1], float(sojourns[k])) for k in range(self.n_jumps)]

    def time_in(self) -> dict:
        """Total time spent under each label up to the horizon"""
        edges = np.concatenate(([0.0], self.jump_times, [self.horizon]))
        totals = {}
        for label, dt in zip(self.visits(), np.diff(edges)):
            totals[label] = totals.get(label, 0.0) + float(dt)
        return totals


def dump_trajectory(traj: Trajectory, filename: str):
    """CSV with columns t,state; the first row is the start at t=0"""
    left, _, visited = traj.segments()
    with open(filename, 'w') as f:
        f.write("t,state\n")
        for t, s in zip(left, visited):
            f.write(f"{t:.17g},{_csv_label(traj.space.label(int(s)))}\n")


def dump_projected(paths: Sequence[ProjectedPath], filename: str):
    """CSV with columns t,label,kind for one or more projected paths"""
    with open(filename, 'w') as f:
        f.write("t,label,kind\n")
        for path in paths:
            f.write(f"{0.0:.17g},{_csv_label(path.start)},{path.kind}\n")
            for t, label in zip(path.jump_times, path.labels):
                f.write(f"{t:.17g},{_csv_label(label)},{path.kind}\n")


def _csv_label(label) -> str:
    if isinstance(label, tuple):
        return '"' + " ".join(str(v) for v in label) + '"'
    if isinstance(label, float):
        return f"{label:.17g}"
    return str(label)
