import json
import math

import numpy as np
import pytest

from slqsim.engine import run_simulation
from slqsim.equilibrium import predict
from slqsim.metrics import (
    ResponseTimeAccumulator,
    SimulationBug,
    batch_means_ci,
    build_report,
    density_from_tail,
    percentage_error,
    relative_error_pct,
    tail_from_level_areas,
    time_average_tail,
    total_variation,
)
from slqsim.model import SystemConfig


def test_single_departure():
    acc = ResponseTimeAccumulator(expected=1).record_departure(2.0, 5.0)
    assert acc.mean == 2.0


def test_three_departures_batch_variance():
    acc = ResponseTimeAccumulator(expected=3, n_batches=3)
    for w in (1.0, 2.0, 3.0):
        acc.record_departure(w, 0.0)
    assert acc.mean == 2.0
    np.testing.assert_array_equal(acc.batch_means(), [1.0, 2.0, 3.0])
    se, half = acc.confidence()
    assert se == pytest.approx(1 / math.sqrt(3))
    assert half > 0


def test_negative_response_is_a_bug():
    with pytest.raises(SimulationBug):
        ResponseTimeAccumulator(expected=2).record_departure(-1e-9, 1.0)


def test_law_of_large_numbers():
    rng = np.random.default_rng(0)
    acc = ResponseTimeAccumulator(expected=10**6)
    for w in rng.exponential(1.0, 10**6):
        acc.record_departure(float(w), 0.0)
    se, _ = acc.confidence()
    assert abs(acc.mean - 1.0) < 3 * se
    assert len(acc.batch_means()) == 30


def test_batch_means_ci_degenerate():
    assert math.isnan(batch_means_ci([])[0])
    m, se, half = batch_means_ci([4.0])
    assert m == 4.0 and math.isnan(se) and math.isnan(half)


def test_static_window_tail_is_instantaneous():
    tail = time_average_tail([(0.0, [0, 2, 1, 1]), (5.0, None)], 4)
    np.testing.assert_allclose(tail, [1.0, 0.75, 0.25])


def test_two_half_windows_average():
    log = [(0.0, [0, 0]), (1.0, [2, 0]), (2.0, None)]
    np.testing.assert_allclose(time_average_tail(log, 2), [1.0, 0.25, 0.25])


def test_zero_length_window_rejected():
    with pytest.raises(ValueError):
        time_average_tail([(1.0, [0]), (1.0, None)], 1)
    with pytest.raises(ValueError):
        tail_from_level_areas([1.0], 1, 0.0)


def test_density_and_total_variation():
    dens = density_from_tail([1.0, 0.5, 0.2])
    np.testing.assert_allclose(dens, [0.5, 0.3, 0.2])
    assert total_variation([0.5, 0.5], [0.5, 0.25, 0.25]) == pytest.approx(0.25)
    assert total_variation(dens, dens) == 0.0


def test_percentage_error_examples():
    assert percentage_error(201.0, 200.0, 1.0) == 0.0
    assert percentage_error(200.0, 200.0, 1.0) == pytest.approx(0.5)
    assert relative_error_pct(200.0, 201.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        percentage_error(0.0, 1.0, 1.0)


def test_report_serialization():
    cfg = SystemConfig.baseline()
    out = run_simulation(cfg, 1, 50_000)
    rep = build_report(out, predict(cfg))
    data = json.loads(rep.to_json())
    assert data["config"]["lambda"] == 0.045
    assert data["percentage_error"] >= 0
    assert data["response_half_width"] > 0
    assert data["arrivals"] == 50_000
    text = rep.to_text()
    assert "percentage error" in text and "SLQ(d=2)" in text


def test_report_without_prediction():
    cfg = SystemConfig.baseline(load=1.1)
    out = run_simulation(cfg, 1, 2_000)
    rep = build_report(out, None)
    assert math.isnan(rep.predicted_response_time)
    assert math.isnan(rep.percentage_error)
