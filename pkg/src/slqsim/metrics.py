"""Steady-state statistics and simulated-vs-analytic comparison."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

DEFAULT_BATCHES = 30


class SimulationBug(RuntimeError):
    pass


def batch_means_ci(batch_means, level: float = 0.95) -> tuple[float, float, float]:
    """Grand mean, standard error and CI half-width from equally weighted batches."""
    b = np.asarray(batch_means, dtype=float)
    b = b[np.isfinite(b)]
    if len(b) == 0:
        return math.nan, math.nan, math.nan
    mean = float(b.mean())
    if len(b) < 2:
        return mean, math.nan, math.nan
    se = float(b.std(ddof=1) / math.sqrt(len(b)))
    half = float(stats.t.ppf(0.5 + level / 2, len(b) - 1) * se)
    return mean, se, half


class ResponseTimeAccumulator:
    """Running mean of response times with batch means for confidence intervals.

    Observations are assigned to ``n_batches`` consecutive batches of
    ``batch_size`` departures each; the last batch absorbs any excess.
    """

    def __init__(self, expected: int, n_batches: int = DEFAULT_BATCHES):
        self.n_batches = max(1, min(n_batches, expected))
        self.batch_size = max(1, expected // self.n_batches)
        self.count = 0
        self.total = 0.0
        self.batch_sum = np.zeros(self.n_batches)
        self.batch_count = np.zeros(self.n_batches, dtype=np.int64)
        self.last_time = -math.inf

    def record_departure(self, response_time: float, now: float) -> "ResponseTimeAccumulator":
        if not response_time >= 0:
            raise SimulationBug(f"negative response time {response_time!r} at t={now}")
        b = min(self.count // self.batch_size, self.n_batches - 1)
        self.batch_sum[b] += response_time
        self.batch_count[b] += 1
        self.total += response_time
        self.count += 1
        self.last_time = now
        return self

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else math.nan

    def batch_means(self) -> np.ndarray:
        used = self.batch_count > 0
        return self.batch_sum[used] / self.batch_count[used]

    def confidence(self, level: float = 0.95) -> tuple[float, float]:
        """(standard error, half-width) from the batch means."""
        _, se, half = batch_means_ci(self.batch_means(), level)
        return se, half


def tail_from_level_areas(level_area, n_queues: int, window: float) -> np.ndarray:
    """Time-averaged fraction of queues with at least i jobs, i = 0..max level."""
    if not window > 0:
        raise ValueError("observation window must have positive length")
    dens = np.asarray(level_area, dtype=float) / (n_queues * window)
    # suffix sums, smallest terms first
    return np.cumsum(dens[::-1])[::-1]


def time_average_tail(log, n_queues: int) -> np.ndarray:
    """Time-averaged tail from an occupancy log.

    ``log`` is a sequence of ``(t, lengths)`` pairs: the queue lengths hold
    from ``t`` until the next entry's time; the final entry only marks the
    window end.  The integral is exact (piecewise constant state).
    """
    if len(log) < 2:
        raise ValueError("need at least a start state and an end time")
    t0, t_end = log[0][0], log[-1][0]
    if not t_end > t0:
        raise ValueError("observation window must have positive length")
    top = max(int(max(lengths)) for _, lengths in log[:-1])
    area = np.zeros(top + 1)
    for (t, lengths), (t_next, _) in zip(log[:-1], log[1:]):
        counts = np.bincount(np.asarray(lengths, dtype=np.int64), minlength=top + 1)
        area += counts * (t_next - t)
    return tail_from_level_areas(area, n_queues, t_end - t0)


def density_from_tail(tail) -> np.ndarray:
    """Fraction with exactly i jobs: tail_i - tail_{i+1}."""
    t = np.asarray(tail, dtype=float)
    return t - np.append(t[1:], 0.0)


def total_variation(p, q) -> float:
    n = max(len(p), len(q))
    a = np.zeros(n)
    b = np.zeros(n)
    a[: len(p)] = p
    b[: len(q)] = q
    return 0.5 * float(np.abs(a - b).sum())


def percentage_error(simulated: float, predicted_waiting: float, mu: float) -> float:
    """100 |1 - (w_pi + 1/mu) / w_bar| for predicted waiting time w_pi."""
    if not simulated > 0:
        raise ValueError("simulated mean response time must be positive")
    return 100.0 * abs(1.0 - (predicted_waiting + 1.0 / mu) / simulated)


def relative_error_pct(simulated: float, predicted_response: float) -> float:
    """Percentage error against an already complete response-time prediction."""
    if not simulated > 0:
        raise ValueError("simulated mean response time must be positive")
    return 100.0 * abs(1.0 - predicted_response / simulated)


@dataclass
class MetricsReport:
    config: dict
    seed: int | None
    n_arrivals: int
    backend: str
    mean_response_time: float
    response_half_width: float
    response_std_error: float
    busy_fraction: float
    mean_queue_length: float
    mean_jobs_in_system: float
    predicted_response_time: float
    percentage_error: float
    arrivals: int
    departures: int
    observed_departures: int
    successful_samplings: int
    failed_samplings: int
    simulated_time: float
    wall_clock_seconds: float
    tail: list = field(default_factory=list)
    predicted_tail: list = field(default_factory=list)

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)

    def to_text(self) -> str:
        c = self.config
        rows = [
            ("policy", f"{c['policy']}(d={c['d']})"),
            ("n, m", f"{c['n']}, {c['m']}"),
            ("lambda, mu, gamma", f"{c['lambda']:.6g}, {c['mu']:.6g}, {c['gamma']:.6g}"),
            ("mean response time", f"{self.mean_response_time:.6g} +/- {self.response_half_width:.3g}"),
            ("predicted", f"{self.predicted_response_time:.6g}"),
            ("percentage error", f"{self.percentage_error:.3f}%"),
            ("busy fraction", f"{self.busy_fraction:.6g}"),
            ("mean queue length", f"{self.mean_queue_length:.6g}"),
            ("arrivals/departures", f"{self.arrivals}/{self.departures}"),
            ("samplings ok/failed", f"{self.successful_samplings}/{self.failed_samplings}"),
            ("wall clock", f"{self.wall_clock_seconds:.2f}s ({self.backend})"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def build_report(out, predicted: float | None) -> MetricsReport:
    """Pair a :class:`~slqsim.engine.SimOutput` with an analytic prediction."""
    pred = math.nan if predicted is None else predicted
    err = relative_error_pct(out.mean_response_time, pred) if predicted is not None else math.nan
    return MetricsReport(
        config=out.config.to_dict(),
        seed=out.seed,
        n_arrivals=out.n_arrivals,
        backend=out.backend,
        mean_response_time=out.mean_response_time,
        response_half_width=out.response_half_width,
        response_std_error=out.response_std_error,
        busy_fraction=out.busy_fraction,
        mean_queue_length=out.mean_queue_length,
        mean_jobs_in_system=out.mean_jobs_in_system,
        predicted_response_time=pred,
        percentage_error=err,
        arrivals=out.arrivals,
        departures=out.departures,
        observed_departures=out.observed_departures,
        successful_samplings=out.successful_samplings,
        failed_samplings=out.failed_samplings,
        simulated_time=out.simulated_time,
        wall_clock_seconds=out.wall_clock_seconds,
        tail=[float(v) for v in out.tail],
    )
