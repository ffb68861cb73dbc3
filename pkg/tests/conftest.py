from __future__ import annotations

import pytest

from lidsa.arbitration import ApproachState
from lidsa.core import Approach, Maneuver, PriorityClass, Vehicle
from lidsa.scenario import LidsaParams, Params, SimConfig


def make_vehicle(vid=1, approach=Approach.N, maneuver=Maneuver.STRAIGHT, position=50.0,
                 speed=10.0, priority=PriorityClass.NORMAL, length=5.0, accel=2.6,
                 decel=4.5, vmax=13.89, occupancy=1, energy_pref=0.0, depart=0):
    return Vehicle(vid, approach, maneuver, priority, occupancy, energy_pref, length, accel,
                   decel, vmax, position, speed, depart)


def make_state(approach=Approach.N, maneuver=Maneuver.STRAIGHT, d=50.0, v=8.0, n=3,
               vbar=8.0, w=0.0, pc=PriorityClass.NORMAL, lw=0.0, e=0.5, occ=1, lid=None):
    return ApproachState(approach, maneuver, d, v, n, vbar, w, pc, lw, e, occ, lid)


@pytest.fixture
def sim():
    return SimConfig()


@pytest.fixture
def params():
    return Params()


@pytest.fixture
def lparams():
    return LidsaParams()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
