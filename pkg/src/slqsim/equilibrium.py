"""Fixed point of the mean-field equations and Little's-law predictions.

For SLQ(d) the equilibrium tail is given by the recursion

    pi_1     = 1 - (1 - rho)^(1/d)
    pi_{i+1} = 1 - (1 - rho * pi_i)^(1/d)

with busy fraction eps = lambda/(r mu) and
rho = lambda / (r (gamma (1 - eps) + mu eps)).  For d = 1 the tail is the
geometric sequence rho^i.  The JSQ(d) supermarket tail is
(lambda/(r mu))^((d^i - 1)/(d - 1)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from slqsim.model import Policy, SystemConfig, load_summary

DEFAULT_TAIL_TOL = 1e-14
# hard cap on profile length; reached only for d=1 with rho extremely close to 1
MAX_LEVELS = 10_000_000


class UnstableConfigError(ValueError):
    """The equilibrium exists only for lambda/(r mu) < 1."""


@dataclass(frozen=True)
class EquilibriumProfile:
    pi: np.ndarray  # pi[0] = 1, pi[i] = fraction of queues with at least i jobs
    epsilon: float
    rho: float
    tail_tol: float
    policy: Policy
    tail_bound: float  # upper bound on sum_{i > cut} pi_i

    @property
    def cut(self) -> int:
        return len(self.pi) - 1

    def density(self) -> np.ndarray:
        """Fraction of queues with exactly i jobs, i = 0..cut."""
        nxt = np.append(self.pi[1:], 0.0)
        return self.pi - nxt


def _check_stable(config: SystemConfig) -> None:
    if not config.offered_load < 1.0:
        raise UnstableConfigError(
            f"equilibrium requires lambda/(r mu) < 1, got {config.offered_load:.6g}"
        )


def _geometric(ratio: float, tail_tol: float) -> np.ndarray:
    if ratio <= 0.0:
        return np.ones(1)
    # largest i with ratio^i >= tail_tol
    cut = max(0, math.floor(math.log(tail_tol) / math.log(ratio)))
    while cut > 0 and ratio**cut < tail_tol:
        cut -= 1
    while ratio ** (cut + 1) >= tail_tol:
        cut += 1
    if cut > MAX_LEVELS:
        raise ValueError(f"profile would need {cut} levels; raise tail_tol")
    return ratio ** np.arange(cut + 1, dtype=float)


def _tail_bound(pi: np.ndarray, ratio: float) -> float:
    # pi_{cut+k} <= ratio^k pi_cut, so the dropped mass is at most pi_cut ratio/(1-ratio)
    if len(pi) == 1:
        return 0.0 if ratio <= 0 else ratio / (1.0 - ratio)
    return float(pi[-1] * ratio / (1.0 - ratio))


def slq_equilibrium(config: SystemConfig, tail_tol: float = DEFAULT_TAIL_TOL) -> EquilibriumProfile:
    _check_stable(config)
    ls = load_summary(config)
    rho, d = ls.rho, config.d
    if d == 1:
        pi = _geometric(rho, tail_tol)
    else:
        # 1 - (1 - a)^(1/d) == -expm1(log1p(-a) / d), exact for small a
        vals = [1.0]
        p = -math.expm1(math.log1p(-rho) / d)
        while p >= tail_tol:
            vals.append(p)
            if len(vals) > MAX_LEVELS:
                raise ValueError("equilibrium recursion did not reach tail_tol")
            p = -math.expm1(math.log1p(-rho * p) / d)
        pi = np.array(vals)
    return EquilibriumProfile(
        pi=pi,
        epsilon=ls.offered_load,
        rho=rho,
        tail_tol=tail_tol,
        policy=Policy.SLQ,
        tail_bound=_tail_bound(pi, rho),
    )


def jsq_equilibrium(config: SystemConfig, tail_tol: float = DEFAULT_TAIL_TOL) -> EquilibriumProfile:
    _check_stable(config)
    load = config.offered_load
    d = config.d
    if d == 1:
        pi = _geometric(load, tail_tol)
    else:
        vals = [1.0]
        i = 1
        if load > 0:
            log_load = math.log(load)
            while True:
                # exponent (d^i - 1)/(d - 1) = 1 + d + ... + d^(i-1)
                expo = (d**i - 1) // (d - 1)
                p = math.exp(expo * log_load)
                if p < tail_tol:
                    break
                vals.append(p)
                i += 1
        pi = np.array(vals)
    # pi_{i+1} <= load * pi_i holds for the JSQ tail as well
    return EquilibriumProfile(
        pi=pi,
        epsilon=load,
        rho=load,
        tail_tol=tail_tol,
        policy=Policy.JSQ,
        tail_bound=_tail_bound(pi, load),
    )


def equilibrium(config: SystemConfig, tail_tol: float = DEFAULT_TAIL_TOL) -> EquilibriumProfile:
    if config.policy is Policy.JSQ:
        return jsq_equilibrium(config, tail_tol)
    return slq_equilibrium(config, tail_tol)


def mean_queue_size(profile: EquilibriumProfile) -> tuple[float, float]:
    """Mean queue size sum_{i>=1} pi_i and the truncation error bound."""
    # sum smallest-first
    return float(math.fsum(profile.pi[1:][::-1])), float(profile.tail_bound)


def predicted_response_time(profile: EquilibriumProfile, lam: float, mu: float, r: float | None = None) -> float:
    """Mean response time (waiting plus service) predicted at equilibrium.

    SLQ queues hold waiting jobs only, so the prediction is q/lambda + 1/mu.
    JSQ queues sit at servers and include the job in service; their per-queue
    arrival rate is lambda/r, so the sojourn time is q r / lambda and ``r``
    must be given.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    q, _ = mean_queue_size(profile)
    if profile.policy is Policy.JSQ:
        if r is None:
            raise ValueError("JSQ prediction needs the server-to-queue ratio r")
        return q * r / lam
    return q / lam + 1.0 / mu


def predict(config: SystemConfig, tail_tol: float = DEFAULT_TAIL_TOL) -> float:
    """Predicted mean response time for ``config`` under its policy."""
    return predicted_response_time(equilibrium(config, tail_tol), config.lam, config.mu, config.r)


def profile_csv_rows(profile: EquilibriumProfile):
    """Rows (i, pi_i, density_i) for CSV export."""
    dens = profile.density()
    for i, (p, q) in enumerate(zip(profile.pi, dens)):
        yield i, float(p), float(q)
