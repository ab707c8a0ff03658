from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from slqsim import engine
from slqsim.metrics import DEFAULT_BATCHES, batch_means_ci, tail_from_level_areas
from slqsim.model import Policy, SamplingMode, SystemConfig, config_errors, ConfigError

STREAM_NAMES = ("arrivals", "service", "backoff", "sampling", "tiebreak")
DEFAULT_WARMUP = 0.1
SELECT_LONGEST = 0
SELECT_FIRST_NONEMPTY = 1


def make_streams(seed: int) -> list[np.random.Generator]:
    """One independent PCG64 generator per purpose, derived from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def _kernel(backend: str | None):
    name = backend or engine.DEFAULT_BACKEND
    try:
        return name, engine.BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}") from None


@dataclass
class SimOutput:
    config: SystemConfig
    seed: int
    n_arrivals: int
    warmup_count: int
    backend: str
    arrivals: int
    departures: int
    in_system_end: int
    successful_samplings: int
    failed_samplings: int
    simulated_time: float
    window: tuple[float, float]
    wall_clock_seconds: float
    batch_response_means: np.ndarray
    batch_counts: np.ndarray
    response_sum: float
    response_sumsq: float
    observed_departures: int
    tail: np.ndarray  # time-averaged fraction of queues with >= i jobs
    busy_fraction: float
    mean_queue_length: float  # per queue; SLQ counts waiting jobs, JSQ includes service
    mean_jobs_in_system: float
    batch_busy: np.ndarray
    batch_queue_length: np.ndarray
    batch_jobs_in_system: np.ndarray
    trace: np.ndarray | None = field(default=None, repr=False)
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def mean_response_time(self) -> float:
        if self.observed_departures == 0:
            return math.nan
        return self.response_sum / self.observed_departures

    @property
    def response_std_error(self) -> float:
        return batch_means_ci(self.batch_response_means)[1]

    @property
    def response_half_width(self) -> float:
        return batch_means_ci(self.batch_response_means)[2]

    def std_error(self, name: str) -> float:
        """Batch-means standard error of ``busy``, ``queue_length`` or ``jobs_in_system``."""
        return batch_means_ci(getattr(self, f"batch_{name}"))[1]

    def density(self) -> np.ndarray:
        t = self.tail
        return t - np.append(t[1:], 0.0)

    @property
    def conserved(self) -> bool:
        return self.arrivals == self.departures + self.in_system_end


def _summarize(raw, config, seed, n_arrivals, warmup, backend, wall) -> SimOutput:
    n_queues = raw["n_queues"]
    t0, t1 = raw["t_start_window"], raw["t_end_window"]
    T = t1 - t0
    jsq = config.policy is Policy.JSQ

    snaps = np.asarray(raw["snapshots"], dtype=float).reshape(-1, 3)
    dt = np.diff(snaps[:, 0])
    dq = np.diff(snaps[:, 1])
    db = np.diff(snaps[:, 2])
    ok = dt > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        b_busy = db[ok] / (config.m * dt[ok])
        b_queue = dq[ok] / (n_queues * dt[ok])
        b_sys = (dq[ok] + (0 if jsq else db[ok])) / dt[ok]

    if T > 0:
        area_q, area_b = snaps[-1, 1], snaps[-1, 2]
        tail = tail_from_level_areas(raw["level_area"], n_queues, T)
        busy = area_b / (config.m * T)
        qlen = area_q / (n_queues * T)
        in_sys = (area_q + (0 if jsq else area_b)) / T
    else:
        tail = np.array([1.0])
        busy = qlen = in_sys = math.nan

    counts = np.asarray(raw["batch_count"], dtype=np.int64)
    sums = np.asarray(raw["batch_sum"], dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        bmeans = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    trace = None if raw["trace"] is None else np.asarray(raw["trace"], dtype=float)
    return SimOutput(
        config=config,
        seed=seed,
        n_arrivals=n_arrivals,
        warmup_count=warmup,
        backend=backend,
        arrivals=raw["arrivals"],
        departures=raw["departures"],
        in_system_end=raw["in_system"],
        successful_samplings=raw["successes"],
        failed_samplings=raw["failures"],
        simulated_time=raw["t_end"],
        window=(t0, t1),
        wall_clock_seconds=wall,
        batch_response_means=bmeans[counts > 0],
        batch_counts=counts,
        response_sum=float(math.fsum(sums)),
        response_sumsq=float(math.fsum(raw["batch_sumsq"])),
        observed_departures=int(counts.sum()),
        tail=tail,
        busy_fraction=busy,
        mean_queue_length=qlen,
        mean_jobs_in_system=in_sys,
        batch_busy=b_busy,
        batch_queue_length=b_queue,
        batch_jobs_in_system=b_sys,
        trace=trace,
        raw=raw,
    )


def _run(config, seed, n_arrivals, warmup_fraction, n_batches, keep_trace, backend, selection):
    errors = config_errors(config)
    if errors:
        raise ConfigError(errors)
    if n_arrivals < 1:
        raise ValueError("n_arrivals must be at least 1")
    if not 0.0 <= warmup_fraction < 1.0:
        raise ValueError("warmup_fraction must lie in [0, 1)")
    name, kernel = _kernel(backend)
    warmup = int(math.floor(warmup_fraction * n_arrivals))
    gens = make_streams(seed)
    wr = config.sampling_mode is SamplingMode.WITH_REPLACEMENT
    start = time.perf_counter()
    raw = kernel.simulate(
        config.policy.value, config.n, config.m, config.d, float(config.lam),
        float(config.mu), float(config.gamma), wr, gens, int(n_arrivals), warmup,
        int(n_batches), bool(keep_trace), int(selection),
    )
    wall = time.perf_counter() - start
    return _summarize(raw, config, seed, n_arrivals, warmup, name, wall)


def run_simulation(
    config: SystemConfig,
    seed: int,
    n_arrivals: int,
    warmup_fraction: float = DEFAULT_WARMUP,
    n_batches: int = DEFAULT_BATCHES,
    keep_trace: bool = False,
    backend: str | None = None,
    selection: int = SELECT_LONGEST,
) -> SimOutput:
    """Simulate until ``n_arrivals`` jobs have arrived, then drain the system.

    Statistics cover jobs with arrival index >= floor(warmup_fraction *
    n_arrivals); time averages cover the interval from the first such arrival
    to the last arrival.  Dispatches on ``config.policy``.
    """
    return _run(config, seed, n_arrivals, warmup_fraction, n_batches, keep_trace, backend, selection)


def run_jsq_simulation(
    config: SystemConfig,
    seed: int,
    n_arrivals: int,
    warmup_fraction: float = DEFAULT_WARMUP,
    n_batches: int = DEFAULT_BATCHES,
    keep_trace: bool = False,
    backend: str | None = None,
) -> SimOutput:
    if config.policy is not Policy.JSQ:
        raise ValueError("run_jsq_simulation needs policy=JSQ")
    return _run(config, seed, n_arrivals, warmup_fraction, n_batches, keep_trace, backend, SELECT_LONGEST)


def sample_longest(
    lengths,
    d: int,
    sampling_mode: SamplingMode | str,
    seed: int = 0,
    draws: int = 1,
    backend: str | None = None,
) -> np.ndarray:
    """Run the SLQ sampler ``draws`` times on fixed queue lengths.

    Returns the chosen queue index per draw, -1 where every sampled queue
    was empty.
    """
    mode = SamplingMode(sampling_mode) if not isinstance(sampling_mode, SamplingMode) else sampling_mode
    wr = mode is SamplingMode.WITH_REPLACEMENT
    if not wr and d > len(lengths):
        raise ValueError("d exceeds the number of queues under WithoutReplacement")
    _, kernel = _kernel(backend)
    return kernel.sample_longest_many(list(lengths), d, wr, make_streams(seed), draws)
