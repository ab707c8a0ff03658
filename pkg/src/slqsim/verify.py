"""Cross-checks run by ``slqsim verify``.

Each check returns a :class:`CheckResult`; the command exits nonzero when any
check fails.  ``mutate`` swaps the longest-queue rule for "serve the first
non-empty sampled queue", a negative control the oracle check must catch.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from slqsim import equilibrium as eq
from slqsim import meanfield as mf
from slqsim import oracle
from slqsim.engine import run_simulation
from slqsim.engine.simulation import SELECT_FIRST_NONEMPTY, SELECT_LONGEST
from slqsim.model import SystemConfig

GRID_D = (1, 2, 3, 5)
GRID_LOAD = (0.5, 0.9, 0.99)
GRID_GAMMA = (0.5, 1.0, 10.0)
QUICK_GRID = [(1, 0.9, 1.0), (2, 0.5, 0.5), (2, 0.99, 10.0), (5, 0.9, 1.0)]

ORACLE_SPECS = (
    oracle.CtmcSpec(n=2, m=1, d=1, buffer=40, lam=0.2, mu=1.0, gamma=1.0),
    oracle.CtmcSpec(n=2, m=1, d=2, buffer=40, lam=0.2, mu=1.0, gamma=1.0),
    oracle.CtmcSpec(n=3, m=2, d=2, buffer=20, lam=0.15, mu=1.0, gamma=1.0),
    # heavier load: the mutant's bias is largest here
    oracle.CtmcSpec(n=3, m=2, d=2, buffer=16, lam=0.3, mu=1.0, gamma=1.0),
)
POST_WARMUP_ARRIVALS = 10**6
Z_LIMIT = 3.0
DRIFT_TOL = 1e-10
RELAX_TOL = 1e-6
EXACT_TOL = 1e-12


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _grid(quick: bool):
    if quick:
        return QUICK_GRID
    return [(d, l, g) for d in GRID_D for l in GRID_LOAD for g in GRID_GAMMA]


def _cfg(d, load, gamma) -> SystemConfig:
    return SystemConfig.baseline(d=d, load=load, gamma=gamma)


def check_d1_exact() -> CheckResult:
    t0 = time.perf_counter()
    worst = 0.0
    for load in GRID_LOAD:
        for gamma in GRID_GAMMA:
            cfg = _cfg(1, load, gamma)
            prof = eq.slq_equilibrium(cfg)
            rho = prof.rho
            powers = rho ** np.arange(len(prof.pi))
            q, _ = eq.mean_queue_size(prof)
            worst = max(worst, float(np.abs(prof.pi - powers).max()),
                        abs(q - rho / (1 - rho)) / max(1.0, rho / (1 - rho)))
    return CheckResult("d=1 closed form", worst < EXACT_TOL, f"max deviation {worst:.2e}",
                       time.perf_counter() - t0)


def check_drift(quick: bool) -> CheckResult:
    t0 = time.perf_counter()
    worst = 0.0
    for d, load, gamma in _grid(quick):
        cfg = _cfg(d, load, gamma)
        prof = eq.slq_equilibrium(cfg)
        worst = max(worst, mf.residual(mf.MeanFieldState(prof.pi.copy(), prof.epsilon), cfg))
    return CheckResult("drift at equilibrium", worst < DRIFT_TOL, f"sup-norm {worst:.2e}",
                       time.perf_counter() - t0)


def relaxation_error(cfg: SystemConfig) -> float:
    prof = eq.slq_equilibrium(cfg)
    state, _ = mf.find_fixed_point_by_relaxation(cfg)
    k = min(len(state.x), len(prof.pi))
    err = float(np.abs(state.x[:k] - prof.pi[:k]).max())
    if len(state.x) > k:
        err = max(err, float(np.abs(state.x[k:]).max()))
    if len(prof.pi) > k:
        err = max(err, float(np.abs(prof.pi[k:]).max()))
    return max(err, abs(state.y - prof.epsilon))


def check_relaxation(quick: bool) -> CheckResult:
    t0 = time.perf_counter()
    worst, where = 0.0, None
    for point in _grid(quick):
        try:
            err, label = relaxation_error(_cfg(*point)), point
        except mf.RelaxationError as exc:
            err, label = math.inf, f"{point}: {exc}"
        if err >= worst:
            worst, where = err, label
    return CheckResult("relaxation vs recursion", worst < RELAX_TOL,
                       f"sup-norm {worst:.2e} (worst at d, load, gamma = {where})",
                       time.perf_counter() - t0)


def oracle_zscores(spec: oracle.CtmcSpec, seed: int, n_arrivals: int,
                   selection: int = SELECT_LONGEST) -> dict[str, tuple[float, float, float]]:
    """{metric: (simulated, exact, z)} for queue length, busy fraction and response time."""
    exact = oracle.solve(spec)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = run_simulation(spec.to_config(), seed, n_arrivals, selection=selection)
    pairs = {
        "queue": (out.mean_queue_length, exact.mean_queue_length, out.std_error("queue_length")),
        "busy": (out.busy_fraction, exact.busy_fraction, out.std_error("busy")),
        "response": (out.mean_response_time, exact.mean_response_time, out.response_std_error),
    }
    return {k: (s, e, abs(s - e) / se) for k, (s, e, se) in pairs.items()}


def check_oracle(spec: oracle.CtmcSpec, arrivals: int, mutate: bool, seed: int = 7) -> CheckResult:
    t0 = time.perf_counter()
    sel = SELECT_FIRST_NONEMPTY if mutate else SELECT_LONGEST
    z = oracle_zscores(spec, seed, arrivals, sel)
    worst = max(v[2] for v in z.values())
    detail = ", ".join(f"{k} {s:.5g} vs {e:.5g} (z={zz:.2f})" for k, (s, e, zz) in z.items())
    name = f"oracle n={spec.n} m={spec.m} d={spec.d} lambda={spec.lam}"
    return CheckResult(name, worst <= Z_LIMIT, detail, time.perf_counter() - t0)


def run_checks(quick: bool = False, mutate: bool | str = False,
               arrivals: int | None = None) -> list[CheckResult]:
    if arrivals is None:
        post = POST_WARMUP_ARRIVALS // 5 if quick else POST_WARMUP_ARRIVALS
        arrivals = math.ceil(post / 0.9)
    results = [check_d1_exact(), check_drift(quick), check_relaxation(quick)]
    results += [check_oracle(s, arrivals, bool(mutate)) for s in ORACLE_SPECS]
    return results
