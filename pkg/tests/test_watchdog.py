"""Admission control at the conflict zone."""

from lidsa.backends import ScriptedBackend, all_clear_responder
from lidsa.control import LidsaController
from lidsa.core import Approach, Maneuver
from lidsa.engine import Control, Simulation, WorldState, step
from lidsa.scenario import DemandScenario, Params, SimConfig, WatchdogParams
from lidsa.watchdog import Watchdog, claimed_tiles

from conftest import make_vehicle

N, E, S, W = Approach
VMAX = 13.89


class Idle:
    def control(self, world):
        return Control()


def world_with(*vehicles):
    w = WorldState(SimConfig())
    for v in vehicles:
        w.lanes[v.approach].append(v)
    return w


def test_later_arrival_is_held():
    n = make_vehicle(1, N, position=14.0, speed=VMAX)
    e = make_vehicle(2, E, position=20.0, speed=VMAX)
    wd = Watchdog(SimConfig())
    out = wd.check_and_override(world_with(n, e), {1: VMAX, 2: VMAX})
    assert out == {1: VMAX, 2: 2.0}
    assert wd.overrides == 1
    assert 1 in wd.admitted and 2 not in wd.admitted


def test_hold_persists_then_releases():
    n = make_vehicle(1, N, position=14.0, speed=VMAX)
    e = make_vehicle(2, E, position=20.0, speed=VMAX)
    w = world_with(n, e)
    wd = Watchdog(SimConfig())
    held = []
    for _ in range(12):
        adv = wd.check_and_override(w, {1: VMAX, 2: VMAX})
        held.append(adv[2] < VMAX)
        step(w, adv)
    assert held[0] and not held[-1]
    assert wd.overrides == 1  # one continuous hold counts once
    assert e.position_m >= 0 or n.progress_m - n.length_m >= 12.0


def test_single_vehicle_untouched():
    wd = Watchdog(SimConfig())
    v = make_vehicle(1, N, position=10.0, speed=VMAX)
    assert wd.check_and_override(world_with(v), {1: VMAX}) == {1: VMAX}
    assert wd.overrides == 0


def test_non_overlapping_pair_untouched():
    a = make_vehicle(1, N, Maneuver.RIGHT, position=10.0, speed=VMAX)
    b = make_vehicle(2, E, position=10.0, speed=VMAX)
    c = make_vehicle(3, W, position=10.0, speed=VMAX)
    wd = Watchdog(SimConfig())
    adv = {1: 8.0, 2: 8.0, 3: 8.0}
    assert wd.check_and_override(world_with(a, b, c), adv) == adv
    assert wd.overrides == 0


def test_disabled_watchdog_is_passthrough():
    n = make_vehicle(1, N, position=14.0, speed=VMAX)
    e = make_vehicle(2, E, position=20.0, speed=VMAX)
    wd = Watchdog(SimConfig(), WatchdogParams(enabled=False))
    assert wd.check_and_override(world_with(n, e), {1: VMAX, 2: VMAX}) == {1: VMAX, 2: VMAX}


def test_claims_shrink_as_vehicle_advances():
    v = make_vehicle(1, N, Maneuver.LEFT, position=-2.0)
    before = claimed_tiles(v, 12.0)
    v.position_m = -8.0
    assert claimed_tiles(v, 12.0) <= before
    v.position_m = -30.0
    assert claimed_tiles(v, 12.0) == frozenset()


def test_adversarial_all_clear_short_run():
    sim = SimConfig(horizon_s=600, seed=7)
    params = Params()
    ctl = LidsaController(sim, params.lidsa, ScriptedBackend(all_clear_responder))
    wd = Watchdog(sim, params.watchdog)
    s = Simulation(sim, DemandScenario("high", 600, 500, 150), params, ctl, wd)
    s.run()
    assert s.world.conflict_events == 0
    assert wd.overrides > 0


def test_without_watchdog_all_clear_collides():
    sim = SimConfig(horizon_s=600, seed=7)
    params = Params()
    ctl = LidsaController(sim, params.lidsa, ScriptedBackend(all_clear_responder))
    s = Simulation(sim, DemandScenario("high", 600, 500, 150), params, ctl)
    s.run()
    assert s.world.conflict_events > 0


def test_non_interference_without_conflicts():
    # opposing straight movements never conflict, so the watchdog never acts
    sim = SimConfig(horizon_s=900, seed=11)
    demand = DemandScenario("ns", 500, 0, 0, emergency=0)
    traces = []
    for wd in (None, Watchdog(sim)):
        s = Simulation(sim, demand, Params(), Idle(), wd)
        run = []
        for _ in range(sim.horizon_s):
            s.step()
            run.append(tuple((v.id, v.position_m, v.speed_mps) for v in s.world.active()))
        traces.append(run)
        if wd is not None:
            assert wd.overrides == 0
    assert traces[0] == traces[1]
