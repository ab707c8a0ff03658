"""Pure-Python event loop for the SLQ(d) and JSQ(d) systems.

This is the reference implementation and the fallback used when the compiled
kernel is unavailable.  It draws from the same numpy bit generators, in the
same order, as ``_ckernel.pyx``; both produce bit-identical raw output.
"""

from __future__ import annotations

import heapq
import math
from collections import deque

import numpy as np

# event priorities at equal times
COMPLETION, BACKOFF, ARRIVAL = 0, 1, 2

SELECT_LONGEST = 0
SELECT_FIRST_NONEMPTY = 1  # deliberately wrong policy, negative control only


class _Streams:
    """Uniform draws from five independent numpy generators."""

    def __init__(self, generators):
        self.arrival, self.service, self.backoff, self.sampling, self.tiebreak = (
            g.random for g in generators
        )


def _exp(u: float, rate: float) -> float:
    return -math.log1p(-u) / rate


class _Window:
    """Time-integrals over the observation window, plus batch snapshots.

    ``levels[k]`` counts queues with exactly ``k`` jobs; its time-integral is
    accumulated lazily, only when the count changes.
    """

    def __init__(self, n_queues: int):
        self.active = False
        self.t_last = 0.0
        self.queued = 0  # jobs held in queues
        self.busy = 0
        self.area_queued = 0.0
        self.area_busy = 0.0
        self.levels = [n_queues]
        self.level_area = [0.0]
        self.level_last = [0.0]
        self.snapshots = []  # (t, area_queued, area_busy)
        self.t_start = math.nan
        self.t_end = math.nan

    def advance(self, t: float) -> None:
        if self.active:
            dt = t - self.t_last
            self.area_queued += self.queued * dt
            self.area_busy += self.busy * dt
        self.t_last = t

    def move(self, old: int, new: int, t: float) -> None:
        """A queue changed length from ``old`` to ``new`` at time ``t``."""
        if new >= len(self.levels):
            self.levels.append(0)
            self.level_area.append(0.0)
            self.level_last.append(t)
        for k in (old, new):
            if self.active:
                self.level_area[k] += self.levels[k] * (t - self.level_last[k])
            self.level_last[k] = t
        self.levels[old] -= 1
        self.levels[new] += 1
        self.queued += new - old

    def open(self, t: float) -> None:
        self.advance(t)
        self.active = True
        self.t_start = t
        self.t_last = t
        self.level_last = [t] * len(self.levels)
        self.snapshots.append((t, 0.0, 0.0))

    def snapshot(self, t: float) -> None:
        self.advance(t)
        self.snapshots.append((t, self.area_queued, self.area_busy))

    def close(self, t: float) -> None:
        self.advance(t)
        for k in range(len(self.levels)):
            self.level_area[k] += self.levels[k] * (t - self.level_last[k])
            self.level_last[k] = t
        self.snapshots.append((t, self.area_queued, self.area_busy))
        self.active = False
        self.t_end = t


class _Recorder:
    def __init__(self, warmup: int, n_arrivals: int, n_batches: int, keep_trace: bool):
        self.warmup = warmup
        self.n_obs = n_arrivals - warmup
        self.nb = max(1, min(n_batches, self.n_obs))
        self.sum = [0.0] * self.nb
        self.sumsq = [0.0] * self.nb
        self.count = [0] * self.nb
        self.trace = [] if keep_trace else None

    def batch_of(self, idx: int) -> int:
        return (idx - self.warmup) * self.nb // self.n_obs

    def depart(self, arrived: float, idx: int, now: float) -> None:
        if idx < self.warmup:
            return
        w = now - arrived
        b = self.batch_of(idx)
        self.sum[b] += w
        self.sumsq[b] += w * w
        self.count[b] += 1
        if self.trace is not None:
            self.trace.append(w)


class SlqState:
    """Mutable SLQ(d) system state with one handler per event kind.

    Queue lengths count waiting jobs only; a job leaves its queue when a
    server starts serving it.
    """

    def __init__(self, n, m, d, lam, mu, gamma, with_replacement, generators,
                 n_arrivals=1, warmup=0, n_batches=30, keep_trace=False,
                 selection=SELECT_LONGEST):
        self.n, self.m, self.d = n, m, d
        self.lam, self.mu, self.gamma = lam, mu, gamma
        self.with_replacement = with_replacement
        self.selection = selection
        self.rng = _Streams(generators)
        self.queues = [deque() for _ in range(n)]  # (arrival time, job index)
        self.lengths = [0] * n
        self.perm = list(range(n))
        self.serving = [None] * m  # None when idle, else (arrival time, job index)
        self.calendar = []
        self.seq = 0
        self.now = 0.0
        self.n_arrivals = n_arrivals
        self.warmup = warmup
        self.arrivals = 0
        self.departures = 0
        self.successes = 0
        self.failures = 0
        self.window = _Window(n)
        self.rec = _Recorder(warmup, n_arrivals, n_batches, keep_trace)

    # -- calendar -----------------------------------------------------------
    def schedule(self, t, kind, sid):
        heapq.heappush(self.calendar, (t, kind, self.seq, sid))
        self.seq += 1

    def start(self):
        for s in range(self.m):
            self.schedule(_exp(self.rng.backoff(), self.gamma), BACKOFF, s)
        self.schedule(_exp(self.rng.arrival(), self.n * self.lam), ARRIVAL, -1)

    # -- policy -------------------------------------------------------------
    def sample_longest(self):
        """Index of the longest of d sampled queues, or None if all are empty."""
        n, lengths, u = self.n, self.lengths, self.rng.sampling
        best, best_len, ties = None, 0, 0
        perm = self.perm
        for k in range(self.d):
            if self.with_replacement:
                idx = int(u() * n)
            else:
                j = k + int(u() * (n - k))
                perm[k], perm[j] = perm[j], perm[k]
                idx = perm[k]
            ln = lengths[idx]
            if self.selection == SELECT_FIRST_NONEMPTY:
                if ln > 0 and best is None:
                    best = idx
                continue
            if ln > best_len:
                best, best_len, ties = idx, ln, 1
            elif ln == best_len and ln > 0:
                ties += 1
                if self.rng.tiebreak() * ties < 1.0:
                    best = idx
        return best

    def _try_serve(self, sid):
        f = self.sample_longest()
        t = self.now
        if f is None:
            self.failures += 1
            if self.serving[sid] is not None:
                self.window.busy -= 1
            self.serving[sid] = None
            self.schedule(t + _exp(self.rng.backoff(), self.gamma), BACKOFF, sid)
            return
        self.successes += 1
        if self.serving[sid] is None:
            self.window.busy += 1
        self.serving[sid] = self.queues[f].popleft()
        ln = self.lengths[f]
        self.lengths[f] = ln - 1
        self.window.move(ln, ln - 1, t)
        self.schedule(t + _exp(self.rng.service(), self.mu), COMPLETION, sid)

    # -- handlers -----------------------------------------------------------
    def handle_arrival(self):
        t = self.now
        idx = self.arrivals
        w = self.window
        if idx == self.warmup:
            w.open(t)
        elif idx > self.warmup and self.rec.batch_of(idx) != self.rec.batch_of(idx - 1):
            w.snapshot(t)
        if idx == self.n_arrivals - 1:
            w.close(t)
        f = int(self.rng.arrival() * self.n)
        self.queues[f].append((t, idx))
        ln = self.lengths[f]
        self.lengths[f] = ln + 1
        w.move(ln, ln + 1, t)
        self.arrivals += 1
        if self.arrivals < self.n_arrivals:
            self.schedule(t + _exp(self.rng.arrival(), self.n * self.lam), ARRIVAL, -1)
        return f

    def handle_completion(self, sid):
        arrived, idx = self.serving[sid]
        self.departures += 1
        self.rec.depart(arrived, idx, self.now)
        self._try_serve(sid)

    def handle_backoff_expiry(self, sid):
        self._try_serve(sid)

    # -- loop ---------------------------------------------------------------
    def in_system(self):
        return sum(self.lengths) + sum(s is not None for s in self.serving)

    def step(self):
        t, kind, _, sid = heapq.heappop(self.calendar)
        self.window.advance(t)
        self.now = t
        if kind == ARRIVAL:
            self.handle_arrival()
        elif kind == COMPLETION:
            self.handle_completion(sid)
        else:
            self.handle_backoff_expiry(sid)
        return kind

    def done(self):
        return self.arrivals >= self.n_arrivals and self.departures == self.arrivals

    def run(self, check_invariants=False):
        self.start()
        while not self.done():
            self.step()
            if check_invariants:
                assert self.arrivals == self.departures + self.in_system()
        return _raw(self, self.n)


class JsqState:
    """JSQ(d): arrivals join the shortest of d sampled server queues.

    Queue lengths include the job in service.
    """

    def __init__(self, n, m, d, lam, mu, gamma, with_replacement, generators,
                 n_arrivals=1, warmup=0, n_batches=30, keep_trace=False,
                 selection=SELECT_LONGEST):
        self.n, self.m, self.d = n, m, d
        self.lam, self.mu = lam, mu
        self.with_replacement = with_replacement
        self.rng = _Streams(generators)
        self.queues = [deque() for _ in range(m)]
        self.lengths = [0] * m
        self.perm = list(range(m))
        self.calendar = []
        self.seq = 0
        self.now = 0.0
        self.n_arrivals = n_arrivals
        self.warmup = warmup
        self.arrivals = 0
        self.departures = 0
        self.successes = 0
        self.failures = 0
        self.window = _Window(m)
        self.rec = _Recorder(warmup, n_arrivals, n_batches, keep_trace)

    def schedule(self, t, kind, sid):
        heapq.heappush(self.calendar, (t, kind, self.seq, sid))
        self.seq += 1

    def start(self):
        self.schedule(_exp(self.rng.arrival(), self.n * self.lam), ARRIVAL, -1)

    def sample_shortest(self):
        m, lengths, u = self.m, self.lengths, self.rng.sampling
        best, best_len, ties = -1, 0, 0
        perm = self.perm
        for k in range(self.d):
            if self.with_replacement:
                idx = int(u() * m)
            else:
                j = k + int(u() * (m - k))
                perm[k], perm[j] = perm[j], perm[k]
                idx = perm[k]
            ln = lengths[idx]
            if best < 0 or ln < best_len:
                best, best_len, ties = idx, ln, 1
            elif ln == best_len:
                ties += 1
                if self.rng.tiebreak() * ties < 1.0:
                    best = idx
        return best

    def handle_arrival(self):
        t = self.now
        idx = self.arrivals
        w = self.window
        if idx == self.warmup:
            w.open(t)
        elif idx > self.warmup and self.rec.batch_of(idx) != self.rec.batch_of(idx - 1):
            w.snapshot(t)
        if idx == self.n_arrivals - 1:
            w.close(t)
        s = self.sample_shortest()
        self.queues[s].append((t, idx))
        ln = self.lengths[s]
        self.lengths[s] = ln + 1
        w.move(ln, ln + 1, t)
        if ln == 0:
            w.busy += 1
            self.schedule(t + _exp(self.rng.service(), self.mu), COMPLETION, s)
        self.arrivals += 1
        if self.arrivals < self.n_arrivals:
            self.schedule(t + _exp(self.rng.arrival(), self.n * self.lam), ARRIVAL, -1)
        return s

    def handle_completion(self, sid):
        t = self.now
        arrived, idx = self.queues[sid].popleft()
        self.departures += 1
        self.rec.depart(arrived, idx, t)
        ln = self.lengths[sid]
        self.lengths[sid] = ln - 1
        self.window.move(ln, ln - 1, t)
        if ln > 1:
            self.schedule(t + _exp(self.rng.service(), self.mu), COMPLETION, sid)
        else:
            self.window.busy -= 1

    def in_system(self):
        return sum(self.lengths)

    def step(self):
        t, kind, _, sid = heapq.heappop(self.calendar)
        self.window.advance(t)
        self.now = t
        if kind == ARRIVAL:
            self.handle_arrival()
        else:
            self.handle_completion(sid)
        return kind

    def done(self):
        return self.arrivals >= self.n_arrivals and self.departures == self.arrivals

    def run(self, check_invariants=False):
        self.start()
        while not self.done():
            self.step()
            if check_invariants:
                assert self.arrivals == self.departures + self.in_system()
        return _raw(self, self.m)


def _raw(state, n_queues):
    w, rec = state.window, state.rec
    return {
        "arrivals": state.arrivals,
        "departures": state.departures,
        "in_system": state.in_system(),
        "successes": state.successes,
        "failures": state.failures,
        "t_end": state.now,
        "t_start_window": w.t_start,
        "t_end_window": w.t_end,
        "level_area": list(w.level_area),
        "snapshots": list(w.snapshots),
        "batch_sum": list(rec.sum),
        "batch_sumsq": list(rec.sumsq),
        "batch_count": list(rec.count),
        "trace": rec.trace,
        "n_queues": n_queues,
    }


def simulate(policy, n, m, d, lam, mu, gamma, with_replacement, generators,
             n_arrivals, warmup, n_batches=30, keep_trace=False,
             selection=SELECT_LONGEST):
    cls = JsqState if policy == "JSQ" else SlqState
    state = cls(n, m, d, lam, mu, gamma, with_replacement, generators,
                n_arrivals, warmup, n_batches, keep_trace, selection)
    return state.run()


def sample_longest_many(lengths, d, with_replacement, generators, draws):
    """Repeat the SLQ sampler ``draws`` times on fixed queue lengths (-1 = failed)."""
    n = len(lengths)
    state = SlqState(n, 1, d, 1.0, 1.0, 1.0, with_replacement, generators)
    state.lengths = [int(v) for v in lengths]
    out = np.empty(draws, dtype=np.int64)
    for k in range(draws):
        f = state.sample_longest()
        out[k] = -1 if f is None else f
    return out
