"""The environment time scale gamma and its level-k discretization.

``TimeScale`` is an increasing cadlag function on [0, T] built from
piecewise-constant densities plus finitely many atoms.  It is evaluated
through a breakpoint table whose cumulative values are the single source
of truth for every downstream computation.

``DiscreteTimeScale`` holds the discrete clock of level k,
``gamma_k(t) = floor(beta_k * gamma(t))``, materialized as an ordered list
of clock events (times where the clock advances).  The right-continuous
inverse and the index sets J_k / J_k+ are read off that list, which keeps
floor-boundary decisions consistent everywhere.  Scaled values within
``SNAP_TOL`` of an integer are snapped before flooring so that exact atom
arithmetic survives float evaluation of gamma.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

# Absolute tolerance on the gamma scale for recognizing exact multiples
# of 1/beta_k; floor is discontinuous and unsnapped values would shift
# generation counts by one.
SNAP_TOL = 1e-12


@dataclass(frozen=True)
class GammaPiece:
    """Constant density of the continuous part on [start, end)."""

    start: float
    end: float
    density: float


@dataclass(frozen=True)
class GammaAtom:
    """Point mass of gamma at ``time`` in (0, T]."""

    time: float
    mass: float


@dataclass(frozen=True)
class ContinuousSeg:
    """A maximal constant-density stretch inside a query window."""

    lo: float
    hi: float
    density: float
    interval: int  # index into the breakpoint table, keys coefficient lookup

    @property
    def gamma_mass(self) -> float:
        return self.density * (self.hi - self.lo)


@dataclass(frozen=True)
class AtomSeg:
    """A gamma atom inside a query window."""

    time: float
    mass: float
    atom_index: int


class TimeScale:
    """Increasing cadlag gamma on [0, T] with gamma(0) = 0."""

    def __init__(self, horizon: float, pieces: tuple[GammaPiece, ...],
                 atoms: tuple[GammaAtom, ...]):
        if horizon <= 0.0:
            raise ValueError("horizon must be positive")
        self.horizon = float(horizon)
        prev_end = 0.0
        for p in pieces:
            if not (0.0 <= p.start < p.end <= horizon):
                raise ValueError(f"piece [{p.start},{p.end}) outside [0,{horizon}]")
            if p.start < prev_end:
                raise ValueError("pieces overlap or are unordered")
            if p.density < 0.0:
                raise ValueError("gamma density must be nonnegative")
            prev_end = p.end
        prev_t = 0.0
        for a in atoms:
            if not (0.0 < a.time <= horizon):
                raise ValueError(f"atom time {a.time} outside (0,{horizon}]")
            if a.time <= prev_t:
                raise ValueError("atoms must be strictly ordered")
            if a.mass <= 0.0:
                raise ValueError("atom mass must be positive")
            prev_t = a.time
        self.pieces = pieces
        self.atoms = atoms

        # Breakpoint table: times[0]=0 < ... < times[n]=T, density per
        # interval [times[i], times[i+1]), atom mass sitting at times[i].
        cuts = {0.0, self.horizon}
        cuts.update(p.start for p in pieces)
        cuts.update(p.end for p in pieces)
        cuts.update(a.time for a in atoms)
        self.times: list[float] = sorted(cuts)
        n = len(self.times) - 1
        self.densities: list[float] = [0.0] * n
        for p in pieces:
            i0 = self.times.index(p.start)
            i1 = self.times.index(p.end)
            for i in range(i0, i1):
                self.densities[i] = p.density
        self.atom_mass: list[float] = [0.0] * (n + 1)
        self.atom_index: list[int] = [-1] * (n + 1)
        for j, a in enumerate(atoms):
            i = self.times.index(a.time)
            self.atom_mass[i] = a.mass
            self.atom_index[i] = j
        # cum[i] = gamma(times[i]), right-continuous (atom at times[i] included)
        self.cum: list[float] = [0.0] * (n + 1)
        acc = 0.0
        for i in range(1, n + 1):
            acc += self.densities[i - 1] * (self.times[i] - self.times[i - 1])
            acc += self.atom_mass[i]
            self.cum[i] = acc
        self.total = self.cum[n]

    # -- evaluation ----------------------------------------------------

    def _locate(self, t: float) -> int:
        """Largest i with times[i] <= t."""
        return bisect.bisect_right(self.times, t) - 1

    def value(self, t: float) -> float:
        """gamma(t), right-continuous."""
        if t <= 0.0:
            return 0.0
        if t >= self.horizon:
            return self.total
        i = self._locate(t)
        if self.times[i] == t:
            return self.cum[i]
        return self.cum[i] + self.densities[i] * (t - self.times[i])

    def value_left(self, t: float) -> float:
        """gamma(t-), the left limit."""
        if t <= 0.0:
            return 0.0
        i = self._locate(t)
        if self.times[i] == t:
            return self.cum[i] - self.atom_mass[i]
        return self.cum[i] + self.densities[i] * (min(t, self.horizon) - self.times[i])

    def mass_at(self, t: float) -> float:
        i = self._locate(t)
        return self.atom_mass[i] if self.times[i] == t else 0.0

    # -- segment iteration ---------------------------------------------

    def segments(self, lo: float, hi: float, include_right_atom: bool = True):
        """Yield the gamma measure on an interval between lo and hi.

        Defaults to the (lo, hi] convention of the backward equation;
        cell integrals use (lo, hi) via ``include_right_atom=False``.  The
        atom at lo, if any, is never included.  Zero-density stretches are
        skipped (they carry no mass).
        """
        if hi <= lo:
            return
        i = self._locate(lo)
        while self.times[i] < hi:
            s0 = max(lo, self.times[i])
            s1 = min(hi, self.times[i + 1])
            if s1 > s0 and self.densities[i] > 0.0:
                yield ContinuousSeg(s0, s1, self.densities[i], i)
            i += 1
            t = self.times[i]
            if t < hi or (t == hi and include_right_atom):
                if self.atom_mass[i] > 0.0:
                    yield AtomSeg(t, self.atom_mass[i], self.atom_index[i])
            if i == len(self.times) - 1:
                break


@dataclass(frozen=True)
class ClockEvent:
    """One advance of the discrete clock: gamma_k jumps at ``time``.

    ``level_before`` = gamma_k(time-), ``level_after`` = gamma_k(time).
    ``atom_index`` is set when a gamma atom sits at this time (the jump
    then may span several generations), -1 for a continuous crossing.
    """

    time: float
    level_before: int
    level_after: int
    atom_index: int

    @property
    def span(self) -> int:
        return self.level_after - self.level_before

    @property
    def in_j_plus(self) -> bool:
        return self.span > 1


class DiscreteTimeScale:
    """The level-k clock gamma_k = floor(beta_k * gamma) and its inverse."""

    def __init__(self, timescale: TimeScale, level: int, beta: float):
        if level < 1:
            raise ValueError("level k must be >= 1")
        if beta < 0.0:
            raise ValueError("beta_k must be nonnegative")
        self.timescale = timescale
        self.level = level
        self.beta = float(beta)
        self._snap = self.beta * SNAP_TOL
        self.events: list[ClockEvent] = self._build_events()
        self._event_times = [e.time for e in self.events]
        self.n_generations = self.events[-1].level_after if self.events else 0

    def _floor_scaled(self, g: float) -> int:
        x = self.beta * g
        r = round(x)
        if abs(x - r) <= self._snap:
            return int(r)
        return int(math.floor(x))

    def _build_events(self) -> list[ClockEvent]:
        ts = self.timescale
        if self.beta == 0.0:
            return []
        events: list[ClockEvent] = []
        level = 0
        for i in range(len(ts.times) - 1):
            t0, t1 = ts.times[i], ts.times[i + 1]
            d = ts.densities[i]
            g0 = ts.cum[i]
            g1_left = g0 + d * (t1 - t0)
            top = self._floor_scaled(g1_left)
            if top > level and d > 0.0:
                last_exact = abs(self.beta * g1_left - top) <= self._snap
                for lv in range(level + 1, top + 1):
                    if lv == top and last_exact:
                        s = t1
                    else:
                        s = t0 + (lv / self.beta - g0) / d
                        s = min(max(s, t0), t1)
                    events.append(ClockEvent(s, lv - 1, lv, -1))
                level = top
            if ts.atom_mass[i + 1] > 0.0:
                new_level = self._floor_scaled(ts.cum[i + 1])
                if new_level > level:
                    t_atom = ts.times[i + 1]
                    if events and events[-1].time == t_atom:
                        prev = events.pop()
                        events.append(ClockEvent(t_atom, prev.level_before, new_level,
                                                 ts.atom_index[i + 1]))
                    else:
                        events.append(ClockEvent(t_atom, level, new_level,
                                                 ts.atom_index[i + 1]))
                    level = new_level
        for a, b in zip(events, events[1:]):
            if a.level_after != b.level_before or a.time > b.time:
                raise AssertionError("clock event list is inconsistent")
            if a.time == b.time:
                raise AssertionError(
                    "coincident clock events; the time scale is too steep for this level"
                )
        return events

    def gamma_k(self, t: float) -> int:
        """floor(beta_k * gamma(t)), read off the event list."""
        j = bisect.bisect_right(self._event_times, t)
        return self.events[j - 1].level_after if j else 0

    def gamma_k_left(self, t: float) -> int:
        j = bisect.bisect_left(self._event_times, t)
        return self.events[j - 1].level_after if j else 0

    def inverse(self, i: int) -> float:
        """gamma_k^{-1}(i) = inf{s >= 0 : gamma_k(s) >= i}."""
        if i <= 0:
            return 0.0
        if i > self.n_generations:
            raise ValueError(f"level {i} is never reached on [0, T] "
                             f"(gamma_k(T) = {self.n_generations})")
        lo, hi = 0, len(self.events) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if self.events[mid].level_after >= i:
                hi = mid
            else:
                lo = mid + 1
        return self.events[lo].time

    def events_between(self, r: float, t: float) -> list[ClockEvent]:
        """J_k(r, t]: clock events with time in (r, t]."""
        j0 = bisect.bisect_right(self._event_times, r)
        j1 = bisect.bisect_right(self._event_times, t)
        return self.events[j0:j1]
