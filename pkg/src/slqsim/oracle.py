"""Exact stationary analysis of small SLQ(d) systems.

The continuous-time Markov chain tracks the number of waiting jobs per flow
(capped at a buffer ``B``; arrivals to a full queue are lost) and, for each
server, whether it is idle or serving a job of flow f.  Servers are
exchangeable, so a server configuration is stored as the count of servers
in each status.
"""

from __future__ import annotations

import itertools
import math
import warnings
from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, MatrixRankWarning, gmres, spilu, spsolve

from slqsim.model import SamplingMode, SystemConfig

MAX_STATES = 200_000
DIRECT_LIMIT = 5_000  # larger chains use ILU-preconditioned GMRES


class StateSpaceOverflow(ValueError):
    pass


class ReducibleChain(RuntimeError):
    pass


@dataclass(frozen=True)
class CtmcSpec:
    n: int
    m: int
    d: int
    buffer: int
    lam: float
    mu: float
    gamma: float
    sampling_mode: SamplingMode = SamplingMode.WITHOUT_REPLACEMENT

    @classmethod
    def from_config(cls, config: SystemConfig, buffer: int) -> "CtmcSpec":
        return cls(config.n, config.m, config.d, buffer, config.lam, config.mu,
                   config.gamma, config.sampling_mode)

    def to_config(self) -> SystemConfig:
        return SystemConfig(n=self.n, m=self.m, d=self.d, lam=self.lam, mu=self.mu,
                            gamma=self.gamma, sampling_mode=self.sampling_mode)

    def state_count_bound(self) -> int:
        return (self.buffer + 1) ** self.n * math.comb(self.m + self.n, self.n)


@lru_cache(maxsize=None)
def _draw_patterns(n: int, d: int, with_replacement: bool) -> tuple[tuple[int, ...], ...]:
    if with_replacement:
        return tuple(itertools.product(range(n), repeat=d))
    return tuple(itertools.permutations(range(n), d))


def selection_distribution(lengths, d: int, sampling_mode: SamplingMode) -> dict[int, float]:
    """Probability that a sampling round serves each flow; key -1 is failure.

    Each equally likely ordered draw selects its longest queue; ties split
    uniformly over the tied draws, matching the simulator's tie-break.
    """
    wr = SamplingMode(sampling_mode) is SamplingMode.WITH_REPLACEMENT
    patterns = _draw_patterns(len(lengths), d, wr)
    weight = 1.0 / len(patterns)
    out: dict[int, float] = {}
    for draw in patterns:
        top = max(lengths[i] for i in draw)
        if top == 0:
            out[-1] = out.get(-1, 0.0) + weight
            continue
        tied = [i for i in draw if lengths[i] == top]
        share = weight / len(tied)
        for i in tied:
            out[i] = out.get(i, 0.0) + share
    return out


class Generator:
    """Sparse generator with its state index; rows sum to zero."""

    def __init__(self, spec: CtmcSpec, states: list, Q: sparse.csr_matrix):
        self.spec = spec
        self.states = states
        self.index = {s: k for k, s in enumerate(states)}
        self.Q = Q

    def __len__(self):
        return len(self.states)


def _transitions(state, spec: CtmcSpec, select):
    """Yield (target, rate) pairs out of ``state``; self-loops are omitted."""
    q, servers = state  # servers = (idle, busy_flow_0, ..., busy_flow_{n-1})
    n = spec.n
    for f in range(n):
        if q[f] < spec.buffer:
            nq = q[:f] + (q[f] + 1,) + q[f + 1:]
            yield (nq, servers), spec.lam

    def after_sampling(src_slot, rate):
        for g, p in select(q).items():
            s = list(servers)
            s[src_slot] -= 1
            if g < 0:
                s[0] += 1
                target = (q, tuple(s))
            else:
                s[1 + g] += 1
                target = (q[:g] + (q[g] - 1,) + q[g + 1:], tuple(s))
            if target != state:
                yield target, rate * p

    for f in range(n):
        c = servers[1 + f]
        if c:
            yield from after_sampling(1 + f, c * spec.mu)
    if servers[0]:
        yield from after_sampling(0, servers[0] * spec.gamma)


def build_generator(spec: CtmcSpec) -> Generator:
    """Generator over the states reachable from the empty, all-idle state."""
    if spec.state_count_bound() > MAX_STATES:
        raise StateSpaceOverflow(
            f"state space bound {spec.state_count_bound()} exceeds {MAX_STATES}"
        )
    cache: dict = {}

    def select(q):
        if q not in cache:
            cache[q] = selection_distribution(q, spec.d, spec.sampling_mode)
        return cache[q]

    start = ((0,) * spec.n, (spec.m,) + (0,) * spec.n)
    index = {start: 0}
    states = [start]
    rows, cols, vals = [], [], []
    todo = deque([start])
    while todo:
        s = todo.popleft()
        k = index[s]
        for target, rate in _transitions(s, spec, select):
            if rate == 0.0:
                continue
            j = index.get(target)
            if j is None:
                j = index[target] = len(states)
                states.append(target)
                todo.append(target)
            rows.append(k)
            cols.append(j)
            vals.append(rate)
    size = len(states)
    off = sparse.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    off.sum_duplicates()
    out_rate = np.asarray(off.sum(axis=1)).ravel()
    Q = (off - sparse.diags(out_rate)).tocsr()
    return Generator(spec, states, Q)


def _solve(A, b):
    if A.shape[0] <= DIRECT_LIMIT:
        with np.errstate(all="raise"), warnings.catch_warnings():
            warnings.simplefilter("error", MatrixRankWarning)
            try:
                return spsolve(A, b)
            except MatrixRankWarning as exc:
                raise RuntimeError(str(exc)) from None
    # direct LU fills in badly on these lattice chains
    ilu = spilu(A, drop_tol=1e-5, fill_factor=20)
    M = LinearOperator(A.shape, ilu.solve)
    x, info = gmres(A, b, M=M, rtol=1e-14, atol=0.0, restart=50, maxiter=1000)
    if info != 0:
        raise RuntimeError(f"GMRES did not converge (info={info})")
    return x


def stationary_distribution(gen: Generator | sparse.spmatrix | np.ndarray) -> np.ndarray:
    """Solve pi Q = 0 with sum(pi) = 1; residual ||pi Q||_inf is checked < 1e-10."""
    Q = gen.Q if isinstance(gen, Generator) else gen
    Q = sparse.csr_matrix(Q)
    size = Q.shape[0]
    if size == 1:
        return np.ones(1)
    # pin pi_0 = 1 and drop its balance equation; keeps the system sparse
    At = Q.T.tocsc()
    A = At[1:, 1:]
    b = -np.asarray(At[1:, 0].todense()).ravel()
    try:
        rest = _solve(A, b)
    except (RuntimeError, FloatingPointError) as exc:
        raise ReducibleChain(f"singular balance equations: {exc}") from exc
    pi = np.concatenate([[1.0], np.atleast_1d(rest)])
    pi = pi / pi.sum()
    if not np.all(np.isfinite(pi)):
        raise ReducibleChain("singular balance equations")
    res = float(np.abs(Q.T @ pi).max())
    if res > 1e-10 or pi.min() < -1e-12:
        raise ReducibleChain(f"stationary solve residual {res:.3g}, min {pi.min():.3g}")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass(frozen=True)
class ExactMetrics:
    mean_queue_length: float  # waiting jobs per flow
    busy_fraction: float
    mean_jobs_in_system: float
    mean_response_time: float
    blocking_probability: float
    accepted_rate: float
    in_service_per_flow: float


def exact_metrics(pi: np.ndarray, gen: Generator) -> ExactMetrics:
    spec = gen.spec
    q = np.array([s[0] for s in gen.states], dtype=float)  # (states, n)
    srv = np.array([s[1] for s in gen.states], dtype=float)  # (states, n + 1)
    waiting = pi @ q.sum(axis=1)
    busy = pi @ (spec.m - srv[:, 0])
    blocked = pi @ (q >= spec.buffer).mean(axis=1)
    accepted = spec.n * spec.lam * (1.0 - blocked)
    in_service = pi @ srv[:, 1:]
    return ExactMetrics(
        mean_queue_length=float(waiting / spec.n),
        busy_fraction=float(busy / spec.m),
        mean_jobs_in_system=float(waiting + busy),
        mean_response_time=float((waiting + busy) / accepted),
        blocking_probability=float(blocked),
        accepted_rate=float(accepted),
        in_service_per_flow=float(in_service.mean()),
    )


def solve(spec: CtmcSpec) -> ExactMetrics:
    gen = build_generator(spec)
    return exact_metrics(stationary_distribution(gen), gen)


def reaches_empty(gen: Generator) -> bool:
    """True when the empty all-idle state is reachable from every state."""
    Qt = gen.Q.T.tocsr()
    seen = np.zeros(len(gen), dtype=bool)
    seen[0] = True
    todo = [0]
    while todo:
        k = todo.pop()
        row = Qt.indices[Qt.indptr[k]:Qt.indptr[k + 1]]
        for j in row:
            if not seen[j]:
                seen[j] = True
                todo.append(j)
    return bool(seen.all())
