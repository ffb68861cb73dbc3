"""Delay, LOS, queues, intent satisfaction and energy metrics."""

import math
import statistics

import pytest
from hypothesis import given, strategies as st

from lidsa.core import Approach, Maneuver, PriorityClass, exit_approach
from lidsa.engine import Simulation
from lidsa.metrics import (INTENT_WEIGHTS, IntentContext, control_delay, fleet_intent, fuel,
                           intent_components, intent_score, ke_loss, los, queue_stats,
                           temporal_budget, trip_delay, vc_ratio, vsp)
from lidsa.runner import make_controller
from lidsa.scenario import SCENARIOS, MetricsParams, Params, SimConfig
from lidsa.watchdog import Watchdog

from conftest import make_vehicle

VMAX = 13.89


def finished(vid=1, travel=None, sim=SimConfig(), **kw):
    v = make_vehicle(vid, **kw)
    free = sim.trip_length(v.length_m) / sim.v_max
    v.arrive_time_s = v.depart_time_s + (free if travel is None else travel)
    v.exit_approach = exit_approach(v.approach, v.maneuver)
    return v


def ctx(vc=0.63):
    return IntentContext(SimConfig(), MetricsParams(), vc)


# -- delay and LOS ------------------------------------------------------------------------


def test_trip_delay_examples(sim):
    assert trip_delay(finished(), sim) == pytest.approx(0.0)
    v = finished(travel=100)
    assert sim.trip_length(v.length_m) == 617.0
    # 620 m of trip at the limit takes 44.6 s
    assert 100 - 620 / VMAX == pytest.approx(55.4, abs=0.05)
    assert trip_delay(v, sim) == pytest.approx(100 - 617 / VMAX)
    assert trip_delay(finished(travel=10), sim) == 0.0


def test_control_delay_is_mean_or_absent(sim):
    vs = [finished(1, travel=50), finished(2, travel=80)]
    assert control_delay(vs, sim) == pytest.approx(statistics.fmean(trip_delay(v, sim) for v in vs))
    assert control_delay([], sim) is None


def test_los_examples():
    assert los(10.5) == "B"
    assert los(22.2) == "C"
    assert los(261.7) == "F"
    assert [los(x) for x in (10, 20, 35, 55, 80, 80.1)] == list("ABCDEF")
    with pytest.raises(ValueError):
        los(-1)


def test_queue_stats():
    assert queue_stats([0, 0, 0]) == (0.0, 0.0)
    assert queue_stats([0, 4, 8]) == (4.0, 8.0)


@given(st.lists(st.integers(0, 200), min_size=1))
def test_peak_at_least_average(xs):
    avg, peak = queue_stats(xs)
    assert peak >= avg


def test_vc_ratio_table_values():
    got = [vc_ratio(SCENARIOS[s]) for s in ("low", "medium", "high")]
    for g, want in zip(got, (0.24, 0.63, 0.94)):
        assert g == pytest.approx(want, abs=0.005)


# -- energy -------------------------------------------------------------------------------


def test_vsp_examples():
    assert vsp(0, 3) == 0
    assert vsp(10, 0) == pytest.approx(1.622, abs=1e-3)
    assert vsp(13.89, 1) == pytest.approx(17.92, abs=0.01)


def test_fuel_idle_and_monotone():
    p = MetricsParams()
    assert fuel([0.0] * 101, p) == pytest.approx(100 * p.idle_rate_gps)
    assert fuel([10.0] * 50, p) < fuel([10.0] * 80, p)


def stop_and_go(distance):
    """Accelerate, cruise, brake to a stop, wait, then repeat until distance is covered."""
    speeds, covered = [0.0], 0.0
    while covered < distance:
        for v in (2.6, 5.2, 7.8, 10.4, 13.0, 13.0, 9.0, 4.5, 0.0, 0.0, 0.0, 0.0):
            speeds.append(v)
            covered += v
    return speeds, covered


def test_stop_and_go_burns_more_than_constant():
    p = MetricsParams()
    sg, dist = stop_and_go(600.0)
    steady = [10.0] * (round(dist / 10.0) + 1)
    assert fuel(sg, p) > fuel(steady, p)


def test_ke_loss_examples():
    assert ke_loss([10.0] * 10) == 0.0
    assert ke_loss([13.89, 0.0]) == pytest.approx(144.7, abs=0.1)
    assert ke_loss([13.89, 9.0, 4.0, 0.0]) == pytest.approx(144.7, abs=0.1)
    assert ke_loss([10.0, 0.0, 10.0, 0.0]) == pytest.approx(150.0)


# -- intent -------------------------------------------------------------------------------


def test_weights_sum_to_one():
    assert math.fsum(INTENT_WEIGHTS.values()) == pytest.approx(1.0)


def test_temporal_budget_bands():
    p = MetricsParams()
    assert [temporal_budget(x, p) for x in (0.24, 0.63, 0.94)] == [30.0, 60.0, 120.0]


def test_intent_all_pass_and_single_failure():
    v = finished()
    assert intent_score(v, ctx()) == 1.0
    late = finished(travel=500)
    parts = intent_components(late, ctx())
    assert parts == {"spatial": 1, "temporal": 0, "priority": 1, "energy": 1}
    assert intent_score(late, ctx()) == pytest.approx(0.6)


def test_intent_spatial_and_priority_failures():
    v = finished(maneuver=Maneuver.LEFT)
    v.exit_approach = Approach.W
    assert intent_components(v, ctx())["spatial"] == 0
    amb = finished(priority=PriorityClass.EMERGENCY)
    amb.near_zone_time_s = 200 / VMAX + 15.0
    assert intent_components(amb, ctx())["priority"] == 0
    assert intent_score(amb, ctx()) == pytest.approx(0.8)


def test_intent_energy_component():
    v = finished(energy_pref=1.0)
    v.speeds = [13.89, 10.0, 7.0]
    assert intent_components(v, ctx())["energy"] == 0  # 3.89 > 2.25 comfort limit
    v.speeds = [13.89, 12.0, 10.0]
    v.stop_count = 3
    assert intent_components(v, ctx())["energy"] == 0
    v.stop_count = 1
    assert intent_components(v, ctx())["energy"] == 1


def test_intent_requires_completed_trip():
    with pytest.raises(ValueError):
        intent_components(make_vehicle(), ctx())


def test_fleet_is_mean_of_vehicle_scores():
    fleet = [finished(1), finished(2, travel=500), finished(3, energy_pref=0.5)]
    out = fleet_intent(fleet, ctx())
    assert out["overall"] / 100 == pytest.approx(
        statistics.fmean(intent_score(v, ctx()) for v in fleet), abs=1e-12)
    assert out["spatial"] == 100.0
    assert out["priority"] is None
    assert fleet_intent([], ctx())["overall"] is None


def test_completed_run_has_full_spatial_satisfaction():
    sim = SimConfig(horizon_s=600, seed=3)
    params = Params()
    s = Simulation(sim, SCENARIOS["medium"], params, make_controller("fixed", sim, params),
                   Watchdog(sim, params.watchdog))
    m = s.run()
    assert m.throughput > 0
    assert m.intent_spatial == 100.0
    c = IntentContext(sim, params.metrics, vc_ratio(SCENARIOS["medium"]))
    mean = statistics.fmean(intent_score(v, c) for v in s.world.completed)
    assert m.intent_overall / 100 == pytest.approx(mean, abs=1e-12)
