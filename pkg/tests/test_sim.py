import math

import numpy as np
import pytest

from tilearray.config import parse_scenario
from tilearray.kinematics import TileGeometry, TilePose
from tilearray.regions import segment_regions
from tilearray.sim import (ObjectSpec, ObjectState, SimParams, check_target_reached, run_scenario,
                           step_object, write_log_csv, write_trace_csv)
from tilearray.surface import build_surface
from tilearray.workspace import ArrayConfig

GEOM = TileGeometry()
CFG = ArrayConfig()
RMAP = segment_regions(CFG, GEOM)


class Plane:
    """Stand-in surface with a constant gradient."""

    def __init__(self, gx, gy):
        self.map = RMAP
        self.bounds = RMAP.bounds
        self.g = (gx, gy)

    def gradient_at(self, xy, region=None, step=1.0):
        return self.g


def start(xy=(-130.5, 130.5)):
    return ObjectState(xy, (0.0, 0.0), RMAP.raw_region(*xy))


def test_spec_validation():
    with pytest.raises(ValueError):
        ObjectSpec(mu_s=0.2, mu_k=0.3)
    with pytest.raises(ValueError):
        ObjectSpec(fv=0)
    with pytest.raises(ValueError):
        ObjectSpec(kind="cone")
    with pytest.raises(ValueError):
        SimParams(dt=0)


def test_flat_rest_is_exact():
    flat = build_surface({t: TilePose(0, 0, 90) for t in [(0, 0), (0, 1), (1, 0), (1, 1)]}, CFG, GEOM)
    s = start()
    for kind in ("slider", "roller"):
        st = s
        for _ in range(200):
            st = step_object(st, flat, ObjectSpec(kind), SimParams())
        assert st.position == s.position and st.velocity == (0.0, 0.0)


def test_static_friction_threshold():
    plane = Plane(-0.30, 0.0)
    spec = ObjectSpec(mu_s=0.35, mu_k=0.30, fv=0.5)
    st = start()
    for _ in range(100):
        st = step_object(st, plane, spec, SimParams())
    assert st.velocity == (0.0, 0.0) and st.position == (-130.5, 130.5)
    st = step_object(start(), plane, spec, SimParams(), vibrating=True)
    assert st.velocity[0] > 0 and st.velocity[1] == 0
    # vibration lowers kinetic friction by the same factor
    psi = math.atan(0.30)
    want = 9810 * (math.sin(psi) - 0.15 * math.cos(psi)) * 1e-3
    assert st.velocity[0] == pytest.approx(want)


def test_roller_single_step():
    st = step_object(start(), Plane(0.1, 0.0), ObjectSpec("roller"), SimParams(damping=0.0))
    want = 5 / 7 * 9810 * math.sin(math.atan(0.1)) * 1e-3
    assert st.velocity[0] == pytest.approx(-want, abs=1e-12)
    assert abs(st.velocity[0]) == pytest.approx(0.6975, abs=5e-4)


def test_roller_threshold():
    st = step_object(start(), Plane(0.005, 0.0), ObjectSpec("roller"), SimParams())
    assert st.velocity == (0.0, 0.0)


def test_slider_stops_without_reversing():
    spec = ObjectSpec(mu_s=0.35, mu_k=0.30)
    st = ObjectState((-130.5, 130.5), (5.0, 0.0), RMAP.raw_region(-130.5, 130.5))
    for _ in range(10):
        st = step_object(st, Plane(0.0, 0.0), spec, SimParams())
        assert st.velocity[0] >= 0
    assert st.velocity == (0.0, 0.0)


def test_walls_clamp_position():
    st = ObjectState((204.0, 0.0), (5000.0, 0.0), RMAP.raw_region(204.0, 0.0))
    st = step_object(st, Plane(0.0, 0.0), ObjectSpec("roller"), SimParams())
    assert st.position[0] == RMAP.bounds[2] and st.velocity[0] == 0


def test_dwell_accumulates():
    st = start()
    for _ in range(5):
        st = step_object(st, Plane(0.0, 0.0), ObjectSpec(), SimParams())
    assert st.dwell == pytest.approx(0.005)


def _samples(dist, duration, dt=0.01):
    ts = np.arange(0, round(duration / dt) + 1) * dt
    return ts, [(dist, 0.0)] * len(ts)


def test_target_reached_examples():
    assert check_target_reached(*_samples(0.0, 2.0), (0.0, 0.0))
    ts, pos = _samples(0.0, 0.3)
    pos = [(-100.0, 0.0)] + pos + [(100.0, 0.0)] * 50
    ts = np.arange(len(pos)) * 0.01
    assert not check_target_reached(ts, pos, (0.0, 0.0))
    assert check_target_reached(*_samples(14.9, 1.0), (0.0, 0.0))
    assert check_target_reached(*_samples(15.0, 1.0), (0.0, 0.0))
    assert not check_target_reached(*_samples(15.01, 3.0), (0.0, 0.0))
    assert not check_target_reached(*_samples(0.0, 0.99), (0.0, 0.0))


SCENARIO = """
name: {name}
array: {{rows: 2, cols: 2, D: 261, L: 150}}
object: {{kind: slider, radius: 30, mu_s: 0.35, mu_k: 0.30, fv: 0.5}}
start: [-130.5, 130.5]
goal: {{point: {goal}}}
sim: {{timeout: {timeout}, trace_every: 10}}
"""


def scenario(goal, timeout=30, name="t"):
    return parse_scenario(SCENARIO.format(name=name, goal=goal, timeout=timeout))


def test_trivial_scenario():
    sc = scenario("[-130.5, 130.5]")
    trace = run_scenario(sc)
    assert trace.completed
    assert trace.t[-1] <= sc.sim.target_hold + sc.sim.control_period + 1e-9
    assert trace.state[-1] == "HOLD"


def test_puck_single_transfer():
    trace = run_scenario(scenario("[130.5, 130.5]"))
    assert trace.completed
    seq = trace.region_sequence()
    i = seq.index("TILE_0_0")
    j = seq.index("INTER_TILE_0_0_0_1", i)
    assert "TILE_0_1" in seq[j:]
    assert check_target_reached(trace.t, trace.positions(), (130.5, 130.5))
    # trace times are uniform
    assert np.allclose(np.diff(trace.t)[:-1], 0.01)


def test_timeout_keeps_partial_trace():
    trace = run_scenario(scenario("[130.5, -130.5]", timeout=1))
    assert trace.status == "timeout" and len(trace) > 0


def test_deterministic():
    a = run_scenario(scenario("[130.5, 130.5]"))
    b = run_scenario(scenario("[130.5, 130.5]"))
    assert a.t == b.t and a.x == b.x and a.y == b.y and a.region == b.region


def test_start_outside_rejected():
    with pytest.raises(ValueError):
        run_scenario(scenario("[0, 0]"), start=(500.0, 0.0))


def test_csv_outputs(tmp_path):
    trace = run_scenario(scenario("[-130.5, 130.5]"))
    write_trace_csv(trace, tmp_path / "trace.csv")
    write_log_csv(trace.log, tmp_path / "log.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    head = lines[0].split(",")
    assert head[:5] == ["t_s", "x_mm", "y_mm", "region_id", "ctrl_state"]
    assert head[5:8] == ["delta_0_0", "phi_0_0", "r_0_0"] and len(head) == 5 + 12
    assert len(lines) == len(trace) + 1
    log = (tmp_path / "log.csv").read_text().splitlines()
    assert log[0] == "t_s,mode,region,next_region,k"
