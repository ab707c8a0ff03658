import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slqsim import equilibrium as eq
from slqsim import meanfield as mf
from slqsim.model import SystemConfig

GRID = [(d, l, g) for d in (1, 2, 3, 5) for l in (0.5, 0.9, 0.99) for g in (0.5, 1.0, 10.0)]


def base(**kw):
    return SystemConfig.baseline(**kw)


def at_equilibrium(cfg):
    p = eq.equilibrium(cfg)
    return mf.MeanFieldState(p.pi.copy(), p.epsilon if cfg.policy.value == "SLQ" else 0.0), p


@pytest.mark.parametrize("d,load,gamma", GRID)
def test_zero_drift_at_equilibrium(d, load, gamma):
    cfg = base(d=d, load=load, gamma=gamma)
    state, _ = at_equilibrium(cfg)
    dx, dy = mf.slq_drift(state, cfg)
    assert max(np.abs(dx).max(), abs(dy)) < 1e-10


def test_empty_state_drift():
    cfg = base()
    dx, dy = mf.slq_drift(mf.MeanFieldState.empty(8), cfg)
    assert dx[1] == pytest.approx(cfg.lam, rel=1e-15)
    assert np.all(dx[2:] == 0.0)
    assert dy == 0.0


def test_hand_evaluated_drift():
    x = np.zeros(6)
    x[:2] = [1.0, 0.5]
    dx, _ = mf.slq_drift(mf.MeanFieldState(x, 0.5), base())
    assert dx[1] == pytest.approx(0.0225 - 0.0375, abs=1e-16)


def test_drift_deep_tail_keeps_relative_accuracy():
    # (1 - 1e-20)^2 - (1 - 2e-20)^2 underflows naively; expect ~ -2e-20 * sel
    x = np.array([1.0, 2e-20, 1e-20])
    cfg = base()
    dx, _ = mf.slq_drift(mf.MeanFieldState(x, 0.0), cfg)
    sel = cfg.r * cfg.gamma
    want = cfg.lam * 1e-20 - sel * 2 * 1e-20
    assert dx[2] == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_jsq_zero_drift_at_equilibrium(d):
    cfg = base(d=d, policy="JSQ")
    state, _ = at_equilibrium(cfg)
    assert np.abs(mf.jsq_drift(state, cfg)).max() < 1e-10


def test_jsq_empty_drift():
    cfg = base(policy="JSQ")
    dx = mf.jsq_drift(mf.MeanFieldState.empty(8), cfg)
    assert dx[1] == pytest.approx(cfg.lam / cfg.r)


def test_rk4_reaches_equilibrium_from_empty():
    cfg = base()
    final = mf.integrate(mf.MeanFieldState.empty(), cfg, 4000.0, 0.25, record_every=10**9).final
    _, p = at_equilibrium(cfg)
    k = len(p.pi)
    assert np.abs(final.x[:k] - p.pi).max() < 1e-6
    assert np.abs(final.x[k:]).max(initial=0.0) < 1e-6
    assert abs(final.y - p.epsilon) < 1e-6


def test_step_halving():
    cfg = base()
    a = mf.integrate(mf.MeanFieldState.empty(), cfg, 50.0, 0.1).final
    b = mf.integrate(mf.MeanFieldState.empty(), cfg, 50.0, 0.05).final
    assert np.abs(a.x - b.x).max() < 1e-8
    assert abs(a.y - b.y) < 1e-8


def test_no_arrivals_decays_monotonically():
    cfg = SystemConfig(n=200, m=10, d=2, lam=0.0, mu=1.0, gamma=1.0)
    x = np.array([1.0, 0.6, 0.3, 0.1, 0.0])
    traj = mf.integrate(mf.MeanFieldState(x, 0.4), cfg, 200.0, 0.1)
    xs = np.array([s.x for s in traj.states])
    assert np.all(np.diff(xs[:, 1:], axis=0) <= 1e-15)
    assert traj.final.x[1] < x[1]


def test_trajectory_has_initial_and_final():
    traj = mf.integrate(mf.MeanFieldState.empty(8), base(), 1.0, 0.1, record_every=4)
    assert traj.states[0].t == 0.0
    assert traj.final.t == 1.0
    assert [s.t for s in traj.states][1:-1] == pytest.approx([0.4, 0.8])


def test_truncation_overflow():
    cfg = base(load=0.99)
    with pytest.raises(mf.TruncationOverflow):
        mf.integrate(mf.MeanFieldState.empty(2), cfg, 500.0, 0.5, auto_extend=False)
    grown = mf.integrate(mf.MeanFieldState.empty(2), cfg, 500.0, 0.5).final
    assert grown.i_max > 2


def test_bad_initial_state_rejected():
    with pytest.raises(ValueError):
        mf.integrate(mf.MeanFieldState(np.array([1.0, 0.2, 0.5]), 0.0), base(), 1.0)
    with pytest.raises(ValueError):
        mf.integrate(mf.MeanFieldState.empty(4), base(), 1.0, dt=0.0)


def test_relaxation_baseline_point():
    cfg = base()
    state, res = mf.find_fixed_point_by_relaxation(cfg, tol=1e-9)
    assert res < 1e-9
    _, p = at_equilibrium(cfg)
    assert np.abs(state.x[: len(p.pi)] - p.pi).max() < 1e-7


def test_relaxation_rk4_method():
    cfg = base(load=0.5)
    state, res = mf.find_fixed_point_by_relaxation(cfg, tol=1e-9, method="rk4", dt=0.25)
    _, p = at_equilibrium(cfg)
    assert res < 1e-9
    assert np.abs(state.x[: len(p.pi)] - p.pi).max() < 1e-7


def test_relaxation_d1_geometric():
    cfg = base(d=1)
    # slow mode: a 1e-9 residual still leaves ~1e-6 distance here
    state, _ = mf.find_fixed_point_by_relaxation(cfg)
    rho = eq.slq_equilibrium(cfg).rho
    assert np.abs(state.x - rho ** np.arange(len(state.x))).max() < 1e-7


def test_relaxation_rejects_unstable():
    with pytest.raises(ValueError):
        mf.find_fixed_point_by_relaxation(base(load=1.0))


def test_relaxation_reports_budget_exhaustion():
    with pytest.raises(mf.RelaxationError) as info:
        mf.find_fixed_point_by_relaxation(base(), tol=1e-12, max_t=10.0)
    assert info.value.residual > 1e-12
    assert info.value.state.t == pytest.approx(10.0)


def test_relaxation_levels():
    assert mf.relaxation_levels(base(load=0.5)) == 64
    assert mf.relaxation_levels(base(load=0.99, gamma=0.5)) == 8192


def test_csv_export():
    traj = mf.integrate(mf.MeanFieldState.empty(3), base(), 0.2, 0.1)
    buf = io.StringIO()
    traj.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,y,x_1,x_2,x_3"
    assert len(lines) == 1 + len(traj.states)


@st.composite
def tails(draw):
    k = draw(st.integers(1, 12))
    steps = draw(st.lists(st.floats(0.0, 1.0), min_size=k, max_size=k))
    x = np.concatenate([[1.0], np.cumprod(steps)])
    return np.concatenate([x, np.zeros(4)])


@settings(max_examples=40, deadline=None)
@given(tails(), st.floats(0.0, 1.0), st.integers(1, 5), st.floats(0.1, 1.5))
def test_trajectory_invariants(x, y, d, load):
    cfg = base(d=d, load=load)
    traj = mf.integrate(mf.MeanFieldState(x, y), cfg, 20.0, 0.05)
    for s in traj.states:
        assert s.x[0] == 1.0
        assert np.all(np.diff(s.x) <= mf.CLAMP_TOL)
        assert np.all((s.x >= 0) & (s.x <= 1))
        assert 0.0 <= s.y <= 1.0
