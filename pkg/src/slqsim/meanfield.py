"""Mean-field ODEs for SLQ(d) and JSQ(d) and their numerical integration.

The state is a truncated tail vector ``x`` with ``x[0] = 1`` and ``x[i]`` the
fraction of queues holding at least ``i`` jobs, plus (for SLQ) the busy
server fraction ``y``.  Levels beyond the truncation are closed with
``x[I_max + 1] = 0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp

from slqsim.model import Policy, SystemConfig, load_summary

DEFAULT_I_MAX = 64
OVERFLOW_THRESHOLD = 1e-6
CLAMP_TOL = 1e-12


class TruncationOverflow(RuntimeError):
    """The last retained level carries more mass than the overflow threshold."""


class MonotonicityError(RuntimeError):
    pass


class RelaxationError(RuntimeError):
    def __init__(self, message: str, state: "MeanFieldState", residual: float):
        super().__init__(message)
        self.state = state
        self.residual = residual


@dataclass
class MeanFieldState:
    x: np.ndarray
    y: float = 0.0
    t: float = 0.0

    @classmethod
    def empty(cls, i_max: int = DEFAULT_I_MAX) -> "MeanFieldState":
        x = np.zeros(i_max + 1)
        x[0] = 1.0
        return cls(x=x, y=0.0, t=0.0)

    @property
    def i_max(self) -> int:
        return len(self.x) - 1

    def padded(self, i_max: int) -> "MeanFieldState":
        if i_max <= self.i_max:
            return self
        x = np.zeros(i_max + 1)
        x[: len(self.x)] = self.x
        return MeanFieldState(x=x, y=self.y, t=self.t)

    def check(self, tol: float = CLAMP_TOL) -> None:
        x = self.x
        if x[0] != 1.0:
            raise ValueError("x[0] must equal 1")
        if np.any(x < -tol) or np.any(x > 1 + tol):
            raise ValueError("tail fractions must lie in [0, 1]")
        if np.any(np.diff(x) > tol):
            raise ValueError("tail must be non-increasing")
        if not -tol <= self.y <= 1 + tol:
            raise ValueError("busy fraction must lie in [0, 1]")


def _dbar_pow_diff(x: np.ndarray, d: int) -> np.ndarray:
    """(1 - x_{i+1})^d - (1 - x_i)^d for i = 0..I with x_{I+1} = 0.

    Written as (1-x_i)^d * expm1(d (log1p(-x_{i+1}) - log1p(-x_i))) to keep
    relative accuracy deep in the tail.
    """
    x_next = np.empty_like(x)
    x_next[:-1] = x[1:]
    x_next[-1] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        l_i = np.log1p(-x)
        l_n = np.log1p(-x_next)
        out = np.exp(d * l_i) * np.expm1(d * (l_n - l_i))
    # x_i == 1 makes l_i = -inf; fall back to the direct form there
    bad = ~np.isfinite(out)
    if np.any(bad):
        out[bad] = (1 - x_next[bad]) ** d - (1 - x[bad]) ** d
    return out


def slq_drift(state: MeanFieldState, config: SystemConfig) -> tuple[np.ndarray, float]:
    """Time derivative (dx, dy) of the SLQ(d) mean-field equations."""
    return _slq_rhs(state.x, state.y, config)


def _slq_rhs(x: np.ndarray, y: float, config: SystemConfig) -> tuple[np.ndarray, float]:
    lam, mu, gam, d, r = config.lam, config.mu, config.gamma, config.d, config.r
    ybar = 1.0 - y
    sel = r * (gam * ybar + mu * y)
    dx = np.empty_like(x)
    dx[0] = 0.0
    dx[1:] = lam * (x[:-1] - x[1:]) - sel * _dbar_pow_diff(x, d)[1:]
    fail = math.exp(d * math.log1p(-x[1])) if x[1] < 1.0 else 0.0  # (1 - x_1)^d
    success = -math.expm1(d * math.log1p(-x[1])) if x[1] < 1.0 else 1.0
    dy = gam * ybar * success - mu * y * fail
    return dx, dy


def jsq_drift(state: MeanFieldState, config: SystemConfig) -> np.ndarray:
    """Time derivative of the JSQ(d) supermarket equations (server queues)."""
    return _jsq_rhs(state.x, config)


def _jsq_rhs(x: np.ndarray, config: SystemConfig) -> np.ndarray:
    lam, mu, d, r = config.lam, config.mu, config.d, config.r
    xd = x**d
    x_next = np.append(x[1:], 0.0)
    dx = np.empty_like(x)
    dx[0] = 0.0
    dx[1:] = (lam / r) * (xd[:-1] - xd[1:]) - mu * (x[1:] - x_next[1:])
    return dx


def drift(state: MeanFieldState, config: SystemConfig) -> tuple[np.ndarray, float]:
    if config.policy is Policy.JSQ:
        return _jsq_rhs(state.x, config), 0.0
    return _slq_rhs(state.x, state.y, config)


def default_dt(config: SystemConfig) -> float:
    if config.policy is Policy.JSQ:
        fastest = max(config.lam / config.r, config.mu)
    else:
        fastest = max(config.lam, config.mu, config.gamma)
    return 0.01 / fastest


def _clamp(x: np.ndarray, y: float) -> tuple[np.ndarray, float]:
    x = np.clip(x, 0.0, 1.0)
    x[0] = 1.0
    rises = np.diff(x)
    if np.any(rises > 0):
        if rises.max() > CLAMP_TOL:
            i = int(np.argmax(rises))
            raise MonotonicityError(
                f"tail increases by {rises.max():.3g} between levels {i} and {i + 1}"
            )
        x = np.minimum.accumulate(x)
    return x, min(max(y, 0.0), 1.0)


@dataclass
class Trajectory:
    states: list[MeanFieldState] = field(default_factory=list)

    @property
    def final(self) -> MeanFieldState:
        return self.states[-1]

    def write_csv(self, fh) -> None:
        """Columns t, y, x_1..x_I (states padded to a common width)."""
        width = max(s.i_max for s in self.states)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "y"] + [f"x_{i}" for i in range(1, width + 1)])
        for s in self.states:
            xs = s.padded(width).x
            w.writerow([repr(s.t), repr(s.y)] + [repr(float(v)) for v in xs[1:]])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self.write_csv(fh)


def integrate(
    initial: MeanFieldState,
    config: SystemConfig,
    t_end: float,
    dt: float | None = None,
    record_every: int = 1,
    auto_extend: bool = True,
    max_i: int = 1 << 16,
) -> Trajectory:
    """Fixed-step classical RK4 from ``initial.t`` to ``t_end``.

    Every ``record_every``-th state is kept, plus the initial and final ones.
    When the last level exceeds the overflow threshold the truncation is
    doubled (``auto_extend``) or :class:`TruncationOverflow` is raised.
    """
    if dt is None:
        dt = default_dt(config)
    if dt <= 0:
        raise ValueError("dt must be positive")
    initial.check()
    jsq = config.policy is Policy.JSQ

    def rhs(x, y):
        if jsq:
            return _jsq_rhs(x, config), 0.0
        return _slq_rhs(x, y, config)

    x = initial.x.astype(float).copy()
    y = float(initial.y)
    t = float(initial.t)
    traj = Trajectory([MeanFieldState(x.copy(), y, t)])
    n_steps = max(0, math.ceil((t_end - t) / dt - 1e-9))
    for k in range(n_steps):
        h = min(dt, t_end - t)
        k1x, k1y = rhs(x, y)
        k2x, k2y = rhs(x + 0.5 * h * k1x, y + 0.5 * h * k1y)
        k3x, k3y = rhs(x + 0.5 * h * k2x, y + 0.5 * h * k2y)
        k4x, k4y = rhs(x + h * k3x, y + h * k3y)
        x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        y = y + (h / 6.0) * (k1y + 2 * k2y + 2 * k3y + k4y)
        t = t + h if k < n_steps - 1 else t_end
        x, y = _clamp(x, y)
        if x[-1] > OVERFLOW_THRESHOLD:
            if not auto_extend or 2 * (len(x) - 1) > max_i:
                raise TruncationOverflow(
                    f"x[{len(x) - 1}] = {x[-1]:.3g} exceeds {OVERFLOW_THRESHOLD}; raise I_max"
                )
            x = np.concatenate([x, np.zeros(len(x) - 1)])
        if (k + 1) % record_every == 0 or k == n_steps - 1:
            traj.states.append(MeanFieldState(x.copy(), y, t))
    return traj


def residual(state: MeanFieldState, config: SystemConfig) -> float:
    dx, dy = drift(state, config)
    return float(max(np.max(np.abs(dx)), abs(dy)))


def relaxation_levels(config: SystemConfig, floor: float = 1e-13) -> int:
    """Truncation level at which the d=1 dominating tail rho^i drops below ``floor``."""
    ratio = load_summary(config).rho if config.policy is Policy.SLQ else config.offered_load
    need = math.ceil(math.log(floor) / math.log(ratio)) if 0 < ratio < 1 else 1
    return max(DEFAULT_I_MAX, 1 << max(0, need - 1).bit_length())


def _stiff_segment(x0, y0, t0, t1, config, rtol, atol):
    jsq = config.policy is Policy.JSQ
    nx = len(x0) - 1  # x[0] is fixed at 1 and not integrated
    size = nx if jsq else nx + 1

    def unpack(z):
        x = np.empty(nx + 1)
        x[0] = 1.0
        x[1:] = z[:nx]
        return x, (z[nx] if not jsq else 0.0)

    def f(_t, z):
        x, y = unpack(z)
        if jsq:
            return _jsq_rhs(x, config)[1:]
        dx, dy = _slq_rhs(x, y, config)
        out = np.empty(size)
        out[:nx] = dx[1:]
        out[nx] = dy
        return out

    # tridiagonal in x plus the y column and the dy/dx_1 entry
    pattern = sparse.diags([1, 1, 1], [-1, 0, 1], shape=(size, size), format="lil")
    if not jsq:
        pattern[:, nx] = 1
        pattern[nx, 0] = 1
    z0 = np.append(x0[1:], y0) if not jsq else x0[1:].copy()
    sol = solve_ivp(
        f, (t0, t1), z0, method="BDF", rtol=rtol, atol=atol,
        jac_sparsity=pattern.tocsc(), t_eval=[t1],
    )
    if not sol.success:
        raise RuntimeError(f"stiff integrator failed: {sol.message}")
    x, y = unpack(sol.y[:, -1])
    x, y = _clamp(x, y)
    return x, y


def find_fixed_point_by_relaxation(
    config: SystemConfig,
    tol: float = 1e-12,
    max_t: float = 1e12,
    method: str = "bdf",
    i_max: int | None = None,
    dt: float | None = None,
    initial: MeanFieldState | None = None,
) -> tuple[MeanFieldState, float]:
    """Integrate from the empty state until the sup-norm drift drops below ``tol``.

    ``method="rk4"`` uses the fixed-step integrator; ``method="bdf"`` uses a
    stiff variable-step BDF integrator, which is the only practical option
    near critical load where the slowest mode decays on a 1e7 s scale.
    Returns the state and its residual; raises :class:`RelaxationError`
    (carrying both) when ``max_t`` is reached first.
    """
    if not config.offered_load < 1.0:
        raise ValueError(f"relaxation requires lambda/(r mu) < 1, got {config.offered_load:.6g}")
    if i_max is None:
        i_max = relaxation_levels(config)
    state = initial.padded(i_max) if initial is not None else MeanFieldState.empty(i_max)
    res = residual(state, config)
    if method == "rk4":
        step = dt or default_dt(config)
        chunk = 1000 * step
        while res >= tol and state.t < max_t:
            t_next = min(state.t + chunk, max_t)
            state = integrate(state, config, t_next, step, record_every=1 << 62).final
            res = residual(state, config)
    elif method == "bdf":
        chunk = 10.0 / min(config.lam, config.r * min(config.mu, config.gamma))
        while res >= tol and state.t < max_t:
            t_next = min(state.t + chunk, max_t)
            x, y = _stiff_segment(state.x, state.y, state.t, t_next, config, 1e-11, 1e-16)
            if x[-1] > OVERFLOW_THRESHOLD:
                x = np.concatenate([x, np.zeros(len(x) - 1)])
            state = MeanFieldState(x, y, t_next)
            res = residual(state, config)
            chunk *= 2.0
    else:
        raise ValueError(f"unknown method {method!r}")
    if res >= tol:
        raise RelaxationError(
            f"residual {res:.3g} above tol {tol:.3g} at t={state.t:.6g}", state, res
        )
    return state, res
