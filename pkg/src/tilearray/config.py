"""Scenario files.

A scenario is one YAML mapping::

    name: puck_cycle
    array: {rows: 2, cols: 2, D: 261, L: 150, E_H: 5}
    geometry: {leg_length: 140, base_radius: 44.01}        # optional overrides
    object: {kind: slider, radius: 35, mu_s: 0.35, mu_k: 0.30, fv: 0.5}
    start: [-130.5, 130.5]          # or starts: [[x, y], ...]
    goal:                           # exactly one of point / waypoints / regions
      waypoints: [[130.5, 130.5], [130.5, -130.5]]
      cycles: 1
    sim: {dt: 0.001, g: 9810, damping: 2, timeout: 120, control_period: 0.01}
    controller:
      kp: 0.004
      multipliers: {"CENTRE->TILE": 4}
      oscillation: {dwell: 5, amplitude: 10, frequency: 10}
      centring_deadband: 10         # also vibration_tilt_scale, retarget
    topology: {host: [0, 0], removed_links: [], power_chain: [[0, 0], [0, 1]], hop_ticks: 0}
    outputs: {dir: out/puck_cycle, surface_csv: false}

Unknown keys are rejected. Errors name the offending field path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .bus import LinkTopology, route_command
from .controller import (ControllerConfig, Goal, OscillationParams, PidGains,
                         TrajectoryLimits)
from .kinematics import TileGeometry, TilePose
from .regions import RegionKind, parse_region
from .sim import ObjectSpec, SimParams
from .workspace import ArrayConfig


class ConfigError(ValueError):
    """Invalid scenario; the message starts with the field path."""


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    array: ArrayConfig
    geometry: TileGeometry
    object: ObjectSpec
    starts: tuple
    goals: tuple
    cycles: int = 1
    sim: SimParams = SimParams()
    controller: ControllerConfig = ControllerConfig()
    multipliers: dict = field(default_factory=dict)
    topology: LinkTopology | None = None
    hop_ticks: int = 0
    output_dir: str | None = None
    surface_csv: bool = False

    def goal_list(self) -> list[Goal]:
        return list(self.goals) * self.cycles

    def command_delays(self) -> dict:
        if self.topology is None or self.hop_ticks == 0:
            return {}
        topo = self.topology
        return {t: len(route_command(topo, topo.host, t)) * self.hop_ticks for t in topo.tiles()}


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def _mapping(node, path: str, allowed: set) -> dict:
    if node is None:
        return {}
    if not isinstance(node, dict):
        _fail(path, "expected a mapping")
    for key in node:
        if key not in allowed:
            _fail(f"{path}.{key}" if path else str(key), f"unknown key (allowed: {', '.join(sorted(allowed))})")
    return node


def _number(node: dict, key: str, path: str, default=None, positive=False, non_negative=False):
    where = f"{path}.{key}" if path else key
    if key not in node:
        if default is None:
            _fail(where, "required")
        return default
    v = node[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(where, f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        _fail(where, "must be finite")
    if positive and v <= 0:
        _fail(where, f"must be positive, got {v:g}")
    if non_negative and v < 0:
        _fail(where, f"must be non-negative, got {v:g}")
    return v


def _int(node: dict, key: str, path: str, default: int, minimum: int = 0) -> int:
    where = f"{path}.{key}"
    v = node.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(where, f"expected an integer, got {v!r}")
    if v < minimum:
        _fail(where, f"must be at least {minimum}")
    return v


def _point(v, path: str, size: int = 2, integer=False) -> tuple:
    if not isinstance(v, (list, tuple)) or len(v) != size:
        _fail(path, f"expected a list of {size} numbers, got {v!r}")
    out = []
    for i, x in enumerate(v):
        ok = isinstance(x, int) if integer else isinstance(x, (int, float))
        if isinstance(x, bool) or not ok:
            _fail(f"{path}[{i}]", f"expected {'an integer' if integer else 'a number'}, got {x!r}")
        out.append(x if integer else float(x))
    return tuple(out)


def _list(v, path: str) -> list:
    if not isinstance(v, list):
        _fail(path, "expected a list")
    return v


def _build(doc) -> ScenarioConfig:
    top = _mapping(doc, "", {"name", "array", "geometry", "object", "start", "starts", "goal",
                            "sim", "controller", "topology", "outputs"})
    name = top.get("name", "scenario")
    if not isinstance(name, str) or not name:
        _fail("name", "expected a non-empty string")

    arr = _mapping(top.get("array"), "array", {"rows", "cols", "D", "L", "E_H"})
    rows = _int(arr, "rows", "array", 2, minimum=1)
    cols = _int(arr, "cols", "array", 2, minimum=1)
    array = ArrayConfig(rows, cols, _number(arr, "D", "array", 261.0, positive=True),
                        _number(arr, "L", "array", 150.0, positive=True))

    geo = _mapping(top.get("geometry"), "geometry",
                   {"leg_length", "base_radius", "theta_min", "theta_max", "effector_width"})
    base = TileGeometry()
    try:
        geometry = TileGeometry(
            leg_length=_number(geo, "leg_length", "geometry", base.leg_length, positive=True),
            base_radius=_number(geo, "base_radius", "geometry", base.base_radius, positive=True),
            theta_min=_number(geo, "theta_min", "geometry", base.theta_min, non_negative=True),
            theta_max=_number(geo, "theta_max", "geometry", base.theta_max, positive=True),
            effector_width=_number(geo, "effector_width", "geometry", base.effector_width, positive=True),
            effector_height=_number(arr, "E_H", "array", base.effector_height, non_negative=True),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        _fail("geometry", str(exc))

    obj = _mapping(top.get("object"), "object", {"kind", "radius", "mu_s", "mu_k", "fv"})
    kind = obj.get("kind", "slider")
    if kind not in ("slider", "roller"):
        _fail("object.kind", f"expected 'slider' or 'roller', got {kind!r}")
    d = ObjectSpec()
    try:
        spec = ObjectSpec(kind, _number(obj, "radius", "object", d.radius, positive=True),
                          _number(obj, "mu_s", "object", d.mu_s, non_negative=True),
                          _number(obj, "mu_k", "object", d.mu_k, non_negative=True),
                          _number(obj, "fv", "object", d.fv, positive=True))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        _fail("object", str(exc))

    if ("start" in top) == ("starts" in top):
        _fail("start", "give exactly one of 'start' or 'starts'")
    if "start" in top:
        starts = (_point(top["start"], "start"),)
    else:
        starts = tuple(_point(p, f"starts[{i}]") for i, p in enumerate(_list(top["starts"], "starts")))
        if not starts:
            _fail("starts", "needs at least one start")

    goal = _mapping(top.get("goal"), "goal", {"point", "waypoints", "regions", "cycles"})
    given = [k for k in ("point", "waypoints", "regions") if k in goal]
    if len(given) != 1:
        _fail("goal", "give exactly one of point, waypoints or regions")
    cycles = _int(goal, "cycles", "goal", 1, minimum=1)
    if "point" in goal:
        goals = (Goal(point=_point(goal["point"], "goal.point")),)
    elif "waypoints" in goal:
        goals = tuple(Goal(point=_point(p, f"goal.waypoints[{i}]"))
                      for i, p in enumerate(_list(goal["waypoints"], "goal.waypoints")))
    else:
        items = []
        for i, lab in enumerate(_list(goal["regions"], "goal.regions")):
            try:
                items.append(Goal(region=parse_region(str(lab))))
            except ValueError as exc:
                _fail(f"goal.regions[{i}]", str(exc))
        goals = tuple(items)
    if not goals:
        _fail("goal", "needs at least one target")

    sm = _mapping(top.get("sim"), "sim", {"dt", "g", "damping", "timeout", "control_period",
                                          "trace_every", "debounce", "target_radius",
                                          "target_hold", "rolling_threshold", "rest_speed"})
    sd = SimParams()
    sim = SimParams(
        dt=_number(sm, "dt", "sim", sd.dt, positive=True),
        g=_number(sm, "g", "sim", sd.g, positive=True),
        damping=_number(sm, "damping", "sim", sd.damping, non_negative=True),
        debounce=_number(sm, "debounce", "sim", sd.debounce, non_negative=True),
        target_radius=_number(sm, "target_radius", "sim", sd.target_radius, positive=True),
        target_hold=_number(sm, "target_hold", "sim", sd.target_hold, non_negative=True),
        rolling_threshold=_number(sm, "rolling_threshold", "sim", sd.rolling_threshold, non_negative=True),
        rest_speed=_number(sm, "rest_speed", "sim", sd.rest_speed, positive=True),
        control_period=_number(sm, "control_period", "sim", sd.control_period, positive=True),
        timeout=_number(sm, "timeout", "sim", sd.timeout, positive=True),
        trace_every=_int(sm, "trace_every", "sim", sd.trace_every, minimum=1),
    )
    if sim.control_period < sim.dt:
        _fail("sim.control_period", "must not be shorter than sim.dt")

    ct = _mapping(top.get("controller"), "controller",
                  {"kp", "ki", "kd", "phi_clamp", "vel_max", "acc_max", "neutral_r",
                   "multipliers", "oscillation", "centring_deadband", "vibration_tilt_scale",
                   "retarget"})
    gd, ld, cd = PidGains(), TrajectoryLimits(), ControllerConfig()
    try:
        gains = PidGains(_number(ct, "kp", "controller", gd.kp, non_negative=True),
                         _number(ct, "ki", "controller", gd.ki, non_negative=True),
                         _number(ct, "kd", "controller", gd.kd, non_negative=True),
                         _number(ct, "phi_clamp", "controller", gd.phi_clamp, non_negative=True))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        _fail("controller.phi_clamp", str(exc))
    limits = TrajectoryLimits(_number(ct, "vel_max", "controller", ld.vel_max, positive=True),
                              _number(ct, "acc_max", "controller", ld.acc_max, positive=True))
    osc = _mapping(ct.get("oscillation"), "controller.oscillation", {"dwell", "amplitude", "frequency"})
    od = OscillationParams()
    oscillation = OscillationParams(
        _number(osc, "dwell", "controller.oscillation", od.dwell, non_negative=True),
        _number(osc, "amplitude", "controller.oscillation", od.amplitude, non_negative=True),
        _number(osc, "frequency", "controller.oscillation", od.frequency, positive=True))
    neutral_r = _number(ct, "neutral_r", "controller", 90.0, positive=True)
    retarget = ct.get("retarget", cd.retarget)
    if not isinstance(retarget, bool):
        _fail("controller.retarget", f"expected true or false, got {retarget!r}")
    controller = ControllerConfig(
        gains, limits, oscillation, TilePose(0.0, 0.0, neutral_r),
        sim.target_radius, sim.target_hold, sim.debounce, retarget,
        _number(ct, "centring_deadband", "controller", cd.centring_deadband, non_negative=True),
        _number(ct, "vibration_tilt_scale", "controller", cd.vibration_tilt_scale, positive=True))
    multipliers = {}
    mult = ct.get("multipliers") or {}
    if not isinstance(mult, dict):
        _fail("controller.multipliers", "expected a mapping like {'CENTRE->TILE': 4}")
    for key, val in mult.items():
        where = f"controller.multipliers.{key}"
        parts = str(key).replace(" ", "").split("->")
        try:
            pair = tuple(RegionKind[p.upper()] for p in parts)
        except KeyError:
            pair = ()
        if len(pair) != 2:
            _fail(where, "expected KIND->KIND with kinds TILE, INTER_TILE, CENTRE")
        v = _number(mult, key, "controller.multipliers", non_negative=True)
        multipliers[pair] = v

    topology, hop_ticks = None, 0
    if "topology" in top:
        tp = _mapping(top["topology"], "topology",
                      {"host", "host_port", "removed_links", "power_chain", "hop_ticks"})
        removed = []
        for i, link in enumerate(_list(tp.get("removed_links", []), "topology.removed_links")):
            where = f"topology.removed_links[{i}]"
            if not isinstance(link, list) or len(link) != 2:
                _fail(where, "expected a pair of tiles [[r, c], [r, c]]")
            removed.append((_point(link[0], where + "[0]", integer=True),
                            _point(link[1], where + "[1]", integer=True)))
        chain = tuple(_point(t, f"topology.power_chain[{i}]", integer=True)
                      for i, t in enumerate(_list(tp.get("power_chain", []), "topology.power_chain")))
        host = _point(tp.get("host", [0, 0]), "topology.host", integer=True)
        port = tp.get("host_port", "usb")
        if not isinstance(port, str):
            _fail("topology.host_port", "expected a string")
        hop_ticks = _int(tp, "hop_ticks", "topology", 0)
        try:
            topology = LinkTopology(rows, cols, frozenset(removed), host, port, chain)
        except ValueError as exc:
            _fail("topology", str(exc))

    out = _mapping(top.get("outputs"), "outputs", {"dir", "surface_csv"})
    out_dir = out.get("dir")
    if out_dir is not None and not isinstance(out_dir, str):
        _fail("outputs.dir", "expected a path string")
    surface_csv = out.get("surface_csv", False)
    if not isinstance(surface_csv, bool):
        _fail("outputs.surface_csv", "expected true or false")

    return ScenarioConfig(name, array, geometry, spec, starts, goals, cycles, sim, controller,
                          multipliers, topology, hop_ticks, out_dir, surface_csv)


def parse_scenario(text: str, source: str = "<scenario>") -> ScenarioConfig:
    try:
        docs = list(yaml.safe_load_all(text))
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{source}: YAML syntax error at {where}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: YAML error: {exc}") from None
    docs = [d for d in docs if d is not None]
    if len(docs) != 1:
        raise ConfigError(f"{source}: expected exactly one scenario document, found {len(docs)}")
    try:
        return _build(docs[0])
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(path.read_text(), str(path))


SCENARIO_DIR = Path(__file__).parent / "scenarios"


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.yaml"))


def resolve_scenario(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = SCENARIO_DIR / f"{name_or_path}.yaml"
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"no scenario file or bundled scenario named {name_or_path!r}")
