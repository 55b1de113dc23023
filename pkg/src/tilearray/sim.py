"""Fixed-step quasi-static transport of one object over the surface.

The object is a point contact. Sliders obey Coulomb friction with a static
breakaway test; rollers accelerate at 5/7 of the slope component of gravity.
Both carry linear velocity damping. Nothing here draws random numbers, so a
scenario always produces the same trace.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

from .controller import Controller, ControllerConfig, Goal, LogRow
from .regions import RegionId, build_graph, segment_regions
from .surface import SurfaceField, build_surface


@dataclass(frozen=True)
class ObjectSpec:
    kind: str = "slider"  # slider | roller
    radius: float = 20.0
    mu_s: float = 0.35
    mu_k: float = 0.30
    fv: float = 0.5

    def __post_init__(self):
        if self.kind not in ("slider", "roller"):
            raise ValueError(f"object kind must be 'slider' or 'roller', got {self.kind!r}")
        if self.radius <= 0:
            raise ValueError("object radius must be positive")
        if not 0 <= self.mu_k <= self.mu_s:
            raise ValueError("friction needs 0 <= mu_k <= mu_s")
        if not 0 < self.fv <= 1:
            raise ValueError("vibration factor fv must lie in (0, 1]")


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.001
    g: float = 9810.0
    damping: float = 2.0
    debounce: float = 0.5
    target_radius: float = 15.0
    target_hold: float = 1.0
    rolling_threshold: float = 0.01
    rest_speed: float = 1e-6  # mm/s
    control_period: float = 0.01
    timeout: float = 120.0
    trace_every: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.timeout <= 0 or self.control_period <= 0:
            raise ValueError("dt, control_period and timeout must be positive")
        if self.g <= 0 or self.damping < 0:
            raise ValueError("g must be positive and damping non-negative")
        if self.trace_every < 1:
            raise ValueError("trace_every must be at least 1")

    @property
    def control_every(self) -> int:
        return max(1, int(round(self.control_period / self.dt)))


@dataclass(frozen=True)
class ObjectState:
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    region: RegionId | None = None
    dwell: float = 0.0

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


def step_object(state: ObjectState, surface: SurfaceField, spec: ObjectSpec,
                params: SimParams, vibrating: bool = False) -> ObjectState:
    """Advance one step (semi-implicit Euler: velocity first, then position)."""
    dt, g, c = params.dt, params.g, params.damping
    x, y = state.position
    vx, vy = state.velocity
    region = state.region if state.region is not None else surface.map.raw_region(x, y)
    gx, gy = surface.gradient_at((x, y), region)
    slope = math.hypot(gx, gy)
    psi = math.atan(slope)
    # unit downhill direction
    dx, dy = (-gx / slope, -gy / slope) if slope > 0 else (0.0, 0.0)
    if spec.kind == "roller":
        a = 5.0 / 7.0 * g * math.sin(psi) if slope > params.rolling_threshold else 0.0
        vx += (a * dx - c * vx) * dt
        vy += (a * dy - c * vy) * dt
    else:
        f = spec.fv if vibrating else 1.0
        mu_s, mu_k = spec.mu_s * f, spec.mu_k * f
        speed = math.hypot(vx, vy)
        if speed < params.rest_speed:
            if slope <= mu_s:
                vx = vy = 0.0
            else:
                a = max(g * (math.sin(psi) - mu_k * math.cos(psi)), 0.0)
                vx, vy = a * dx * dt, a * dy * dt
        else:
            drive = g * math.sin(psi)
            vx += (drive * dx - c * vx) * dt
            vy += (drive * dy - c * vy) * dt
            # kinetic friction opposes motion and cannot reverse it
            s = math.hypot(vx, vy)
            loss = mu_k * g * math.cos(psi) * dt
            if s <= loss:
                vx = vy = 0.0
            else:
                vx, vy = vx * (1 - loss / s), vy * (1 - loss / s)
    nx, ny = x + vx * dt, y + vy * dt
    x0, y0, x1, y1 = surface.bounds
    if nx < x0 or nx > x1:
        nx, vx = min(max(nx, x0), x1), 0.0
    if ny < y0 or ny > y1:
        ny, vy = min(max(ny, y0), y1), 0.0
    new_region = surface.map.raw_region(nx, ny)
    dwell = state.dwell + dt if new_region == region else 0.0
    return ObjectState((nx, ny), (vx, vy), new_region, dwell)


def check_target_reached(times, positions, target, params: SimParams | None = None) -> bool:
    """True when the samples stay within the target radius for the hold time without a break."""
    params = params or SimParams()
    since = None
    for t, p in zip(times, positions):
        if math.dist((float(p[0]), float(p[1])), target) <= params.target_radius:
            if since is None:
                since = t
            if t - since >= params.target_hold - 1e-9:
                return True
        else:
            since = None
    return False


@dataclass
class SimTrace:
    tiles: tuple
    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)
    region: list = field(default_factory=list)
    state: list = field(default_factory=list)
    poses: list = field(default_factory=list)
    status: str = "running"
    log: list[LogRow] = field(default_factory=list)
    reached: list = field(default_factory=list)  # (goal index, time)
    strained_ticks: int = 0

    def __len__(self) -> int:
        return len(self.t)

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def region_sequence(self) -> list[str]:
        """Reported regions with consecutive duplicates removed."""
        out = []
        for r in self.region:
            if not out or out[-1] != r:
                out.append(r)
        return out

    def positions(self):
        return list(zip(self.x, self.y))


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def write_trace_csv(trace: SimTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["t_s", "x_mm", "y_mm", "region_id", "ctrl_state"]
        for r, c in trace.tiles:
            head += [f"delta_{r}_{c}", f"phi_{r}_{c}", f"r_{r}_{c}"]
        w.writerow(head)
        for i in range(len(trace.t)):
            row = [_fmt(trace.t[i]), _fmt(trace.x[i]), _fmt(trace.y[i]), trace.region[i], trace.state[i]]
            for pose in trace.poses[i]:
                row += [_fmt(pose.delta), _fmt(pose.phi), _fmt(pose.r)]
            w.writerow(row)


def write_log_csv(log, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "mode", "region", "next_region", "k"])
        for row in log:
            w.writerow([_fmt(row.t), row.mode, row.region, row.next_region, row.k])


def run_scenario(scenario, start=None) -> SimTrace:
    """Couple controller, tile motion, surface and object at a fixed step.

    The controller and the surface are refreshed every ``control_period``;
    the object is integrated every ``dt``. The run stops when every goal is
    reached or at the timeout (status ``"timeout"``, partial trace kept).
    """
    params: SimParams = scenario.sim
    cfg, geom = scenario.array, scenario.geometry
    start = tuple(float(v) for v in (start if start is not None else scenario.starts[0]))
    region_map = segment_regions(cfg, geom)
    if not region_map.in_bounds(*start):
        raise ValueError(f"start {start} lies outside the array")
    graph = build_graph(region_map, scenario.multipliers)
    ctrl_cfg: ControllerConfig = scenario.controller
    goals: list[Goal] = scenario.goal_list()
    ctrl = Controller(region_map, graph, geom, goals, start, ctrl_cfg,
                      command_delay=scenario.command_delays())
    tiles = tuple(sorted(ctrl.tiles))
    trace = SimTrace(tiles=tiles)
    state = ObjectState(start, (0.0, 0.0), region_map.raw_region(*start), 0.0)
    every = params.control_every
    n_max = int(math.ceil(params.timeout / params.dt - 1e-9))
    surface = out = None
    for i in range(n_max + 1):
        t = i * params.dt
        if i % every == 0:
            out = ctrl.step(t, state.position)
            surface = build_surface(out.poses, cfg, geom, region_map, check=False)
            if surface.strained:
                trace.strained_ticks += 1
        if i % params.trace_every == 0 or out.done:
            trace.t.append(t)
            trace.x.append(state.position[0])
            trace.y.append(state.position[1])
            trace.region.append(ctrl.state.region.label)
            trace.state.append(out.mode.value)
            trace.poses.append(tuple(out.poses[k] for k in tiles))
        if out.done:
            trace.status = "completed"
            break
        state = step_object(state, surface, scenario.object, params, out.vibrating)
    else:
        trace.status = "timeout"
    trace.log = list(ctrl.log)
    trace.reached = list(ctrl.reached)
    return trace
