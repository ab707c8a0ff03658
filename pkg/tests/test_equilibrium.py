import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slqsim import equilibrium as eq
from slqsim.model import SystemConfig

# 40-digit reference values, computed independently before the build
PI_D2 = [1.0, 0.683772233983162, 0.379834707988947, 0.188736317335758]
Q_D2 = 1.4158539382551
W_D2 = 32.4634208501133
W_BY_D = {
    1: 201.0,
    2: 32.4634208501133,
    3: 19.2983847358964,
    4: 14.13335518449,
    5: 11.3143001013232,
    6: 9.51929555162167,
    7: 8.26882023399783,
    8: 7.34461417702573,
}


def base(**kw):
    return SystemConfig.baseline(**kw)


def test_d2_profile_frozen_values():
    p = eq.slq_equilibrium(base())
    assert p.epsilon == pytest.approx(0.9, rel=1e-15)
    assert p.rho == pytest.approx(0.9, rel=1e-15)
    assert p.pi[1] == pytest.approx(1 - math.sqrt(0.1), abs=1e-15)
    np.testing.assert_allclose(p.pi[:4], PI_D2, rtol=0, atol=1e-14)


def test_d2_mean_queue_and_prediction():
    p = eq.slq_equilibrium(base())
    q, bound = eq.mean_queue_size(p)
    assert q == pytest.approx(Q_D2, abs=1e-12)
    assert 0 <= bound < 1e-12  # pi_cut * rho / (1 - rho) with pi_cut < 1e-14
    assert eq.predict(base()) == pytest.approx(W_D2, abs=1e-9)


@pytest.mark.parametrize("d", sorted(W_BY_D))
def test_prediction_by_d(d):
    assert eq.predict(base(d=d)) == pytest.approx(W_BY_D[d], rel=1e-11)


@pytest.mark.parametrize("load,gamma", [(0.9, 1.0), (0.5, 1.0), (0.9, 0.5), (0.99, 10.0)])
def test_d1_is_geometric(load, gamma):
    p = eq.slq_equilibrium(base(d=1, load=load, gamma=gamma))
    rho = p.rho
    np.testing.assert_allclose(p.pi, rho ** np.arange(len(p.pi)), rtol=0, atol=1e-12)
    q, _ = eq.mean_queue_size(p)
    assert q == pytest.approx(rho / (1 - rho), rel=1e-11)


def test_d1_mean_queue_examples():
    assert eq.mean_queue_size(eq.slq_equilibrium(base(d=1, load=0.9)))[0] == pytest.approx(9.0, rel=1e-12)
    assert eq.mean_queue_size(eq.slq_equilibrium(base(d=1, load=0.5)))[0] == pytest.approx(1.0, rel=1e-12)
    assert eq.predict(base(d=1)) == pytest.approx(201.0, rel=1e-12)


def test_light_traffic_limit():
    p = eq.slq_equilibrium(base(load=1e-9))
    assert p.epsilon < 1e-8
    assert p.pi[1:].max(initial=0.0) < 1e-8


def test_zero_queue_gives_pure_service_time():
    p = eq.slq_equilibrium(base(load=1e-20))
    assert eq.predicted_response_time(p, 1.0, 2.0) == pytest.approx(0.5, abs=1e-12)


def test_unstable_rejected():
    with pytest.raises(eq.UnstableConfigError):
        eq.slq_equilibrium(base(load=1.0))
    with pytest.raises(eq.UnstableConfigError):
        eq.jsq_equilibrium(base(load=1.2, policy="JSQ"))


def test_tail_bound_covers_truncated_mass():
    cfg = base(d=2, load=0.99)
    coarse = eq.slq_equilibrium(cfg, tail_tol=1e-4)
    fine = eq.slq_equilibrium(cfg, tail_tol=1e-15)
    dropped = math.fsum(fine.pi[coarse.cut + 1:])
    assert dropped <= coarse.tail_bound


def test_jsq_frozen_values():
    p = eq.jsq_equilibrium(base(policy="JSQ"))
    np.testing.assert_allclose(p.pi[:4], [1.0, 0.9, 0.729, 0.4782969], rtol=1e-14)


def test_jsq_d1_is_geometric():
    p = eq.jsq_equilibrium(base(d=1, policy="JSQ"))
    np.testing.assert_allclose(p.pi, 0.9 ** np.arange(len(p.pi)), rtol=1e-12)


def test_jsq_prediction_is_sojourn_time():
    cfg = base(policy="JSQ")
    q, _ = eq.mean_queue_size(eq.jsq_equilibrium(cfg))
    assert eq.predict(cfg) == pytest.approx(q * cfg.r / cfg.lam, rel=1e-15)
    # d=1: M/M/1 at arrival rate lambda/r per server
    assert eq.predict(base(d=1, policy="JSQ")) == pytest.approx(1 / (1 - 0.9), rel=1e-11)


def test_jsq_prediction_needs_r():
    p = eq.jsq_equilibrium(base(policy="JSQ"))
    with pytest.raises(ValueError):
        eq.predicted_response_time(p, 0.045, 1.0)


def test_density_sums_to_one_and_csv_rows():
    p = eq.slq_equilibrium(base())
    assert p.density().sum() == pytest.approx(1.0, abs=1e-15)
    rows = list(eq.profile_csv_rows(p))
    assert rows[0] == (0, 1.0, pytest.approx(1 - PI_D2[1]))
    assert len(rows) == p.cut + 1


GRID = [(d, l, g) for d in (1, 2, 3, 5) for l in (0.5, 0.9, 0.99) for g in (0.5, 1.0, 10.0)]


@pytest.mark.parametrize("d,load,gamma", GRID)
def test_dominated_by_geometric(d, load, gamma):
    p = eq.slq_equilibrium(base(d=d, load=load, gamma=gamma))
    i = np.arange(len(p.pi))
    assert np.all(p.pi <= p.rho**i * (1 + 1e-12))
    assert np.all(np.diff(p.pi) <= 0)


@pytest.mark.parametrize("load,gamma", [(l, g) for l in (0.5, 0.9, 0.99) for g in (0.5, 1.0, 10.0)])
def test_monotone_in_d(load, gamma):
    profiles = [eq.slq_equilibrium(base(d=d, load=load, gamma=gamma)).pi for d in range(1, 9)]
    for a, b in zip(profiles, profiles[1:]):
        k = min(len(a), len(b))
        assert np.all(b[2:k] <= a[2:k] * (1 + 1e-12))
        assert len(b) <= len(a)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.floats(0.01, 0.98), st.floats(0.1, 10.0))
def test_recursion_fixed_point_property(d, load, gamma):
    p = eq.slq_equilibrium(base(d=d, load=load, gamma=gamma))
    pi = p.pi
    # 1 - (1 - pi_{i+1})^d == rho * pi_i
    lhs = -np.expm1(d * np.log1p(-pi[1:]))
    np.testing.assert_allclose(lhs, p.rho * pi[:-1], rtol=1e-12, atol=1e-300)
