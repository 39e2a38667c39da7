"""Scenario data model, ego-frame normalization, synthetic generator and JSONL I/O.

Arrays use fixed column layouts:

* agent state rows: ``x, y, vx, vy, heading, length, width``
* lane waypoint rows: ``cx, cy, ch, lx, ly, lh, rx, ry, rh, speed_limit`` followed
  by the codes ``left_type, right_type, center_type, traffic_light, stop_sign,
  interpolating``
* crosswalk points and future poses: ``x, y, heading``
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .config import LANE_VOCABS, ConfigError
from .decoder import bicycle_rollout
from .geometry import boxes_overlap

AGENT_FIELDS = ("x", "y", "vx", "vy", "heading", "length", "width")
LANE_NUMERIC = ("cx", "cy", "ch", "lx", "ly", "lh", "rx", "ry", "rh", "speed_limit")
LANE_CODES = ("left_type", "right_type", "center_type", "traffic_light", "stop_sign", "interpolating")
LANE_FIELDS = LANE_NUMERIC + LANE_CODES
AGENT_KINDS = ("vehicle", "pedestrian", "cyclist")
TEMPLATES = ("straight", "arc", "intersection", "crosswalk")

AGENT_SIZES = {"vehicle": (4.5, 1.9), "pedestrian": (0.6, 0.6), "cyclist": (1.8, 0.6)}


class ScenarioParseError(ValueError):
    def __init__(self, line: int, fieldname: str, message: str):
        super().__init__(f"line {line}: field '{fieldname}': {message}")
        self.line = line
        self.field = fieldname


def wrap_angle(a):
    """Wrap to (-pi, pi]; values already in range are returned unchanged."""
    a = np.asarray(a, dtype=np.float64)
    wrapped = np.pi - np.mod(np.pi - a, 2.0 * np.pi)
    return np.where((a > -np.pi) & (a <= np.pi), a, wrapped)


def _frozen(arr, shape_tail: tuple[int, ...], name: str) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    if arr.ndim != len(shape_tail) + 1 or tuple(arr.shape[1:]) != shape_tail:
        raise ValueError(f"{name}: expected shape [n, {', '.join(map(str, shape_tail))}], got {arr.shape}")
    arr.setflags(write=False)
    return arr


# ----------------------------------------------------------------------------
# data model
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    vx: float
    vy: float
    heading: float
    length: float
    width: float

    def __post_init__(self) -> None:
        if self.length <= 0 or self.width <= 0:
            raise ValueError("agent length and width must be positive")
        if not -math.pi < self.heading <= math.pi:
            raise ValueError(f"heading {self.heading} outside (-pi, pi]")

    def to_row(self) -> np.ndarray:
        return np.array(dataclasses.astuple(self), dtype=np.float64)

    @classmethod
    def from_row(cls, row) -> "AgentState":
        return cls(*(float(v) for v in row))


@dataclass(frozen=True, eq=False)
class AgentHistory:
    agent_id: int
    kind: str
    states: np.ndarray  # [M, 7]

    def __post_init__(self) -> None:
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}")
        object.__setattr__(self, "states", _frozen(self.states, (7,), "states"))
        if len(self.states) == 0:
            raise ValueError("agent history is empty")
        if np.any(self.states[:, 5] <= 0) or np.any(self.states[:, 6] <= 0):
            raise ValueError("agent length and width must be positive")

    @property
    def current(self) -> AgentState:
        return AgentState.from_row(self.states[-1])


@dataclass(frozen=True, eq=False)
class LanePolyline:
    lane_id: int
    waypoints: np.ndarray  # [n, 16]

    def __post_init__(self) -> None:
        wp = _frozen(self.waypoints, (len(LANE_FIELDS),), "waypoints")
        codes = wp[:, len(LANE_NUMERIC):]
        if np.any(codes != np.round(codes)) or np.any(codes < 0) or np.any(codes >= np.array(LANE_VOCABS)):
            raise ValueError("lane categorical code outside its vocabulary")
        object.__setattr__(self, "waypoints", wp)


@dataclass(frozen=True, eq=False)
class CrosswalkPolyline:
    cw_id: int
    points: np.ndarray  # [n, 3]

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", _frozen(self.points, (3,), "points"))


@dataclass(frozen=True, eq=False)
class LocalMap:
    lanes: tuple[LanePolyline, ...] = ()
    crosswalks: tuple[CrosswalkPolyline, ...] = ()


@dataclass(frozen=True, eq=False)
class Route:
    lane_id: int
    centerline: np.ndarray  # [n, 3]

    def __post_init__(self) -> None:
        object.__setattr__(self, "centerline", _frozen(self.centerline, (3,), "centerline"))


@dataclass(frozen=True, eq=False)
class ScenarioFrame:
    """One sample. Agents are ordered ego first, then neighbors.

    ``gt_futures`` is [A, N, 3] and ``oracle_controls`` (optional) is
    [A, M - 1 + N, 2]: the controls that produced every agent's history and
    future, the last N of which drive the future.
    """

    ego: AgentHistory
    neighbors: tuple[AgentHistory, ...]
    maps: tuple[LocalMap, ...]
    gt_futures: np.ndarray
    route: Route
    oracle_controls: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "neighbors", tuple(self.neighbors))
        object.__setattr__(self, "maps", tuple(self.maps))
        gt = np.array(self.gt_futures, dtype=np.float64)
        if gt.ndim != 3 or gt.shape[2] != 3 or gt.shape[0] != self.num_agents:
            raise ValueError(f"gt_futures must be [{self.num_agents}, N, 3], got {gt.shape}")
        gt.setflags(write=False)
        object.__setattr__(self, "gt_futures", gt)
        if len(self.maps) != self.num_agents:
            raise ValueError("need one LocalMap per agent")
        m = len(self.ego.states)
        if any(len(n.states) != m for n in self.neighbors):
            raise ValueError("all agent histories must share one length")
        if self.oracle_controls is not None:
            oc = np.array(self.oracle_controls, dtype=np.float64)
            if oc.shape != (self.num_agents, m - 1 + gt.shape[1], 2):
                raise ValueError(f"oracle_controls shape {oc.shape} inconsistent with frame")
            oc.setflags(write=False)
            object.__setattr__(self, "oracle_controls", oc)

    @property
    def agents(self) -> tuple[AgentHistory, ...]:
        return (self.ego,) + self.neighbors

    @property
    def num_agents(self) -> int:
        return 1 + len(self.neighbors)

    @property
    def history_len(self) -> int:
        return len(self.ego.states)

    @property
    def future_len(self) -> int:
        return self.gt_futures.shape[1]

    def replace(self, **changes) -> "ScenarioFrame":
        return dataclasses.replace(self, **changes)


# ----------------------------------------------------------------------------
# ego-frame normalization
# ----------------------------------------------------------------------------


def _rigid(origin: np.ndarray, heading: float):
    c, s = math.cos(heading), math.sin(heading)

    def pose(arr: np.ndarray, xi: int = 0, yi: int = 1, hi: int | None = 2) -> np.ndarray:
        out = np.array(arr, dtype=np.float64)
        dx = arr[..., xi] - origin[0]
        dy = arr[..., yi] - origin[1]
        out[..., xi] = c * dx + s * dy
        out[..., yi] = -s * dx + c * dy
        if hi is not None:
            out[..., hi] = wrap_angle(arr[..., hi] - heading)
        return out

    def vec(arr: np.ndarray, xi: int, yi: int) -> np.ndarray:
        out = np.array(arr, dtype=np.float64)
        out[..., xi] = c * arr[..., xi] + s * arr[..., yi]
        out[..., yi] = -s * arr[..., xi] + c * arr[..., yi]
        return out

    return pose, vec


def transform_frame(frame: ScenarioFrame, origin, heading: float) -> ScenarioFrame:
    """Express every pose of ``frame`` in the frame located at ``origin`` with ``heading``."""
    pose, vec = _rigid(np.asarray(origin, dtype=np.float64), heading)

    def agent(h: AgentHistory) -> AgentHistory:
        st = pose(h.states, 0, 1, 4)
        st = vec(st, 2, 3)
        return AgentHistory(h.agent_id, h.kind, st)

    def lane(lp: LanePolyline) -> LanePolyline:
        wp = lp.waypoints
        for base in (0, 3, 6):
            wp = pose(wp, base, base + 1, base + 2)
        return LanePolyline(lp.lane_id, wp)

    maps = tuple(
        LocalMap(tuple(lane(lp) for lp in m.lanes),
                 tuple(CrosswalkPolyline(c.cw_id, pose(c.points)) for c in m.crosswalks))
        for m in frame.maps
    )
    return ScenarioFrame(
        ego=agent(frame.ego),
        neighbors=tuple(agent(n) for n in frame.neighbors),
        maps=maps,
        gt_futures=pose(frame.gt_futures),
        route=Route(frame.route.lane_id, pose(frame.route.centerline)),
        oracle_controls=frame.oracle_controls,
        seed=frame.seed,
    )


def normalize_to_ego_frame(frame: ScenarioFrame) -> ScenarioFrame:
    """Move the ego's current pose to the origin with heading 0."""
    cur = frame.ego.states[-1]
    return transform_frame(frame, cur[:2], float(cur[4]))


# ----------------------------------------------------------------------------
# synthetic generator
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorSpec:
    template: str = "straight"
    num_agents: int = 6
    speed_range: tuple[float, float] = (5.0, 12.0)
    episode_seconds: float = 5.0  # length of the logged future
    accel_range: tuple[float, float] = (-1.0, 1.0)
    arc_radius: float = 20.0
    history: int = 20
    lane_points: int = 50
    cw_points: int = 20
    max_neighbors: int = 10
    num_lanes: int = 6
    num_crosswalks: int = 4
    lane_width: float = 3.5
    dt: float = 0.1
    wheelbase: float = 2.8

    def __post_init__(self) -> None:
        object.__setattr__(self, "speed_range", tuple(float(v) for v in self.speed_range))
        object.__setattr__(self, "accel_range", tuple(float(v) for v in self.accel_range))
        if self.template not in TEMPLATES:
            raise ConfigError(f"unknown template {self.template!r}; choose from {TEMPLATES}")
        if not 1 <= self.num_agents <= self.max_neighbors + 1:
            raise ConfigError(f"num_agents must be in [1, {self.max_neighbors + 1}]")
        lo, hi = self.speed_range
        if len(self.speed_range) != 2 or lo < 0 or hi < lo:
            raise ConfigError("speed_range must be [lo, hi] with 0 <= lo <= hi")
        if len(self.accel_range) != 2 or self.accel_range[1] < self.accel_range[0]:
            raise ConfigError("accel_range must be [lo, hi] with lo <= hi")
        if self.episode_seconds <= 0 or self.dt <= 0 or self.history < 1:
            raise ConfigError("episode_seconds, dt and history must be positive")
        if self.arc_radius <= self.lane_width:
            raise ConfigError("arc_radius must exceed lane_width")
        if self.lane_points < 2 or self.cw_points < 2:
            raise ConfigError("polylines need at least two points")

    @property
    def future_steps(self) -> int:
        return int(round(self.episode_seconds / self.dt))

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class _Path:
    """Analytic lane centerline: a straight ray or a circle traversed counterclockwise."""

    kind: str  # "line" | "circle"
    origin: tuple[float, float]
    heading: float = 0.0  # line direction
    radius: float = 0.0  # circle radius; origin is the center
    length: float = 400.0
    speed_limit: float = 13.4
    left_type: int = 2
    right_type: int = 4
    center_type: int = 2
    light: int = 0

    def point(self, s):
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "line":
            c, sn = math.cos(self.heading), math.sin(self.heading)
            x = self.origin[0] + s * c
            y = self.origin[1] + s * sn
            h = np.full_like(s, self.heading)
        else:
            phi = s / self.radius  # angle from the bottom of the circle
            x = self.origin[0] + self.radius * np.sin(phi)
            y = self.origin[1] - self.radius * np.cos(phi)
            h = phi
        return np.stack([x, y, wrap_angle(h)], axis=-1)

    @property
    def curvature(self) -> float:
        return 0.0 if self.kind == "line" else 1.0 / self.radius

    def closest_s(self, xy) -> float:
        if self.kind == "line":
            c, sn = math.cos(self.heading), math.sin(self.heading)
            return (xy[0] - self.origin[0]) * c + (xy[1] - self.origin[1]) * sn
        return self.radius * math.atan2(xy[0] - self.origin[0], self.origin[1] - xy[1])


def _road_network(spec: GeneratorSpec, rng: np.random.Generator):
    w = spec.lane_width
    paths: list[_Path] = []
    crosswalks: list[np.ndarray] = []
    if spec.template in ("straight", "crosswalk"):
        paths = [
            _Path("line", (-150.0, 0.0), 0.0, left_type=1, right_type=4),
            _Path("line", (-150.0, w), 0.0, left_type=3, right_type=1),
            _Path("line", (250.0, 2 * w), math.pi, left_type=3, right_type=1),
            _Path("line", (250.0, 3 * w), math.pi, left_type=1, right_type=4),
        ]
        if spec.template == "crosswalk":
            for x in (25.0, 60.0):
                crosswalks.append(_segment((x, -w), (x, 4 * w), spec.cw_points))
    elif spec.template == "arc":
        paths = [_Path("circle", (0.0, spec.arc_radius), radius=spec.arc_radius,
                       length=2 * math.pi * spec.arc_radius, speed_limit=8.9,
                       left_type=3, right_type=4)]
    else:  # intersection
        green_x = bool(rng.integers(2))
        lx, ly = (3, 1) if green_x else (1, 3)
        half = w / 2
        paths = [
            _Path("line", (-150.0, -half), 0.0, light=lx, left_type=3),
            _Path("line", (150.0, half), math.pi, light=lx, left_type=3),
            _Path("line", (half, -150.0), math.pi / 2, light=ly, left_type=3),
            _Path("line", (-half, 150.0), -math.pi / 2, light=ly, left_type=3),
        ]
        r = w + 3.0
        crosswalks = [
            _segment((r, -w), (r, w), spec.cw_points),
            _segment((-r, w), (-r, -w), spec.cw_points),
            _segment((-w, r), (w, r), spec.cw_points),
            _segment((w, -r), (-w, -r), spec.cw_points),
        ]
    return paths, crosswalks


# arc length along the ego's lane at which its current pose sits
_EGO_ANCHOR = {"straight": 150.0, "crosswalk": 150.0, "arc": 0.0, "intersection": 130.0}


def _segment(a, b, n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)
    x = a[0] + t * (b[0] - a[0])
    y = a[1] + t * (b[1] - a[1])
    h = np.full(n, math.atan2(b[1] - a[1], b[0] - a[0]))
    return np.stack([x, y, h], axis=-1)


def _lane_rows(path: _Path, s: np.ndarray, half_width: float) -> np.ndarray:
    center = path.point(s)
    nx, ny = -np.sin(center[:, 2]), np.cos(center[:, 2])
    left = center.copy()
    left[:, 0] += half_width * nx
    left[:, 1] += half_width * ny
    right = center.copy()
    right[:, 0] -= half_width * nx
    right[:, 1] -= half_width * ny
    n = len(s)
    codes = np.zeros((n, len(LANE_CODES)))
    codes[:, 0] = path.left_type
    codes[:, 1] = path.right_type
    codes[:, 2] = path.center_type
    codes[:, 3] = path.light
    return np.concatenate([center, left, right, np.full((n, 1), path.speed_limit), codes], axis=1)


def _lane_segments(paths: Sequence[_Path], spec: GeneratorSpec) -> list[tuple[int, LanePolyline]]:
    """Cut every path into consecutive polylines of ``lane_points`` waypoints, 1 m apart."""
    segments = []
    seg_id = 0
    for pi, path in enumerate(paths):
        n_total = int(math.floor(path.length)) + 1
        for start in range(0, n_total - 1, spec.lane_points):
            idx = np.arange(start, min(start + spec.lane_points, n_total), dtype=np.float64)
            if len(idx) < 2:
                continue
            segments.append((pi, LanePolyline(seg_id, _lane_rows(path, idx, spec.lane_width / 2))))
            seg_id += 1
    return segments


def _accel_profile(rng, spec: GeneratorSpec, steps: int, v0: float) -> np.ndarray:
    lo, hi = spec.accel_range
    block = max(1, int(round(2.0 / spec.dt)))
    acc = np.repeat(rng.uniform(lo, hi, size=steps // block + 1), block)[:steps]
    # keep the speed nonnegative
    v = v0
    for t in range(steps):
        if v + acc[t] * spec.dt < 0.0:
            acc[t] = -v / spec.dt
        v = v + acc[t] * spec.dt
    return acc


def _simulate(start: np.ndarray, controls: np.ndarray, spec: GeneratorSpec):
    traj, speed = bicycle_rollout(torch.from_numpy(start), torch.from_numpy(controls),
                                  spec.dt, spec.wheelbase, return_speed=True)
    poses = np.concatenate([start[None, :3], traj.numpy()], axis=0)
    speeds = np.concatenate([[start[3]], speed.numpy()])
    return poses, speeds


_SPAWN_ATTEMPTS = 20


def _logs_overlap(poses_a: np.ndarray, size_a, poses_b: np.ndarray, size_b) -> bool:
    return any(boxes_overlap((*pa, *size_a), (*pb, *size_b)) for pa, pb in zip(poses_a, poses_b))


def generate_scenario(seed: int, spec: GeneratorSpec | None = None) -> ScenarioFrame:
    """Deterministic synthetic frame, returned in the ego frame.

    Every agent is driven by a scripted control sequence through the bicycle
    model; those controls are kept as ``oracle_controls``.
    """
    spec = spec or GeneratorSpec()
    rng = np.random.default_rng(seed)
    paths, cw_points = _road_network(spec, rng)
    m, n = spec.history, spec.future_steps
    steps = m - 1 + n

    ego_s = _EGO_ANCHOR[spec.template]
    ego_xy = paths[0].point(np.array([ego_s]))[0, :2]

    def sample(i: int):
        if i == 0:
            kind, path = "vehicle", paths[0]
        else:
            r = rng.uniform()
            if cw_points and r < 0.3:
                kind = "pedestrian"
            elif r > 0.85:
                kind = "cyclist"
            else:
                kind = "vehicle"
            path = paths[int(rng.integers(len(paths)))]
        if kind == "pedestrian":
            cw = cw_points[int(rng.integers(len(cw_points)))]
            if rng.uniform() < 0.5:
                cw = cw[::-1].copy()
                cw[:, 2] = wrap_angle(cw[:, 2] + math.pi)
            v0 = rng.uniform(0.8, 1.6)
            start = np.array([cw[0, 0], cw[0, 1], cw[0, 2], v0])
            controls = np.zeros((steps, 2))
        else:
            lo, hi = spec.speed_range
            if kind == "cyclist":
                lo, hi = min(lo, 3.0), min(hi, 6.0)
            v0 = float(rng.uniform(lo, hi)) if hi > lo else lo
            s_cur = ego_s if i == 0 else path.closest_s(ego_xy) + rng.uniform(-30.0, 40.0)
            s_start = s_cur - (m - 1) * v0 * spec.dt
            x, y, h = path.point(np.array([s_start]))[0]
            start = np.array([x, y, h, v0])
            acc = _accel_profile(rng, spec, steps, v0)
            steer = np.full(steps, math.atan(spec.wheelbase * path.curvature))
            controls = np.stack([acc, steer], axis=1)
        return kind, start, controls

    # agents whose logged box ever touches the ego's are redrawn, then dropped
    agents, sims = [], []  # (kind, start_state[4], controls[steps, 2]); (poses, speeds)
    for i in range(spec.num_agents):
        for _ in range(_SPAWN_ATTEMPTS if i else 1):
            kind, start, controls = sample(i)
            sim = _simulate(start, controls, spec)
            if i == 0 or not _logs_overlap(sims[0][0], AGENT_SIZES["vehicle"], sim[0], AGENT_SIZES[kind]):
                agents.append((kind, start, controls))
                sims.append(sim)
                break

    def history(i: int) -> AgentHistory:
        kind = agents[i][0]
        poses, speeds = sims[i]
        length, width = AGENT_SIZES[kind]
        hp, hv = poses[:m], speeds[:m]
        rows = np.stack([hp[:, 0], hp[:, 1], hv * np.cos(hp[:, 2]), hv * np.sin(hp[:, 2]),
                         wrap_angle(hp[:, 2]), np.full(m, length), np.full(m, width)], axis=1)
        return AgentHistory(i, kind, rows)

    # K nearest neighbors by current distance to the ego
    cur_xy = sims[0][0][m - 1, :2]
    others = sorted(range(1, len(agents)),
                    key=lambda j: (float(np.hypot(*(sims[j][0][m - 1, :2] - cur_xy))), j))
    order = [0] + others[: spec.max_neighbors]

    segments = _lane_segments(paths, spec)
    crosswalks = [CrosswalkPolyline(ci, pts) for ci, pts in enumerate(cw_points)]

    def local_map(xy: np.ndarray) -> LocalMap:
        def dist(points: np.ndarray) -> float:
            return float(np.min(np.hypot(points[:, 0] - xy[0], points[:, 1] - xy[1])))

        lanes = sorted(segments, key=lambda s: (dist(s[1].waypoints), s[1].lane_id))
        cws = sorted(crosswalks, key=lambda c: (dist(c.points), c.cw_id))
        return LocalMap(tuple(s[1] for s in lanes[: spec.num_lanes]),
                        tuple(cws[: spec.num_crosswalks]))

    route_path = paths[0]
    s_grid = np.arange(0.0, math.floor(route_path.length) + 1.0)
    route = Route(0, route_path.point(s_grid))

    frame = ScenarioFrame(
        ego=history(0),
        neighbors=tuple(history(j) for j in order[1:]),
        maps=tuple(local_map(sims[j][0][m - 1, :2]) for j in order),
        gt_futures=np.stack([
            np.concatenate([sims[j][0][m:, :2], wrap_angle(sims[j][0][m:, 2:3])], axis=1)
            for j in order
        ]),
        route=route,
        oracle_controls=np.stack([agents[j][2] for j in order]),
        seed=int(seed),
    )
    return normalize_to_ego_frame(frame)


# ----------------------------------------------------------------------------
# JSON Lines I/O
# ----------------------------------------------------------------------------

FRAME_KEYS = ("ego", "neighbors", "maps", "gt_futures", "oracle_controls", "route", "seed")


def frame_to_dict(frame: ScenarioFrame) -> dict:
    def agent(h: AgentHistory) -> dict:
        return {"agent_id": h.agent_id, "kind": h.kind, "states": h.states.tolist()}

    return {
        "ego": agent(frame.ego),
        "neighbors": [agent(n) for n in frame.neighbors],
        "maps": [
            {
                "lanes": [{"id": lp.lane_id, "waypoints": lp.waypoints.tolist()} for lp in m.lanes],
                "crosswalks": [{"id": c.cw_id, "points": c.points.tolist()} for c in m.crosswalks],
            }
            for m in frame.maps
        ],
        "gt_futures": frame.gt_futures.tolist(),
        "oracle_controls": None if frame.oracle_controls is None else frame.oracle_controls.tolist(),
        "route": {"lane_id": frame.route.lane_id, "centerline": frame.route.centerline.tolist()},
        "seed": frame.seed,
    }


def frame_from_dict(doc: dict, line: int = 0) -> ScenarioFrame:
    if not isinstance(doc, dict):
        raise ScenarioParseError(line, "<record>", "expected a JSON object")
    for key in FRAME_KEYS:
        if key not in doc:
            raise ScenarioParseError(line, key, "missing key")
    current = "<record>"

    def agent(d: dict, name: str) -> AgentHistory:
        nonlocal current
        current = name
        return AgentHistory(int(d["agent_id"]), d["kind"], d["states"])

    try:
        ego = agent(doc["ego"], "ego")
        neighbors = tuple(agent(d, f"neighbors[{i}]") for i, d in enumerate(doc["neighbors"]))
        maps = []
        for i, m in enumerate(doc["maps"]):
            current = f"maps[{i}]"
            maps.append(LocalMap(
                tuple(LanePolyline(int(lp["id"]), lp["waypoints"]) for lp in m["lanes"]),
                tuple(CrosswalkPolyline(int(c["id"]), c["points"]) for c in m["crosswalks"]),
            ))
        current = "route"
        route = Route(int(doc["route"]["lane_id"]), doc["route"]["centerline"])
        current = "gt_futures"
        return ScenarioFrame(
            ego=ego,
            neighbors=neighbors,
            maps=tuple(maps),
            gt_futures=doc["gt_futures"],
            route=route,
            oracle_controls=doc["oracle_controls"],
            seed=doc["seed"],
        )
    except ScenarioParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioParseError(line, current, str(exc)) from None


def dumps_frame(frame: ScenarioFrame) -> str:
    return json.dumps(frame_to_dict(frame), separators=(",", ":"))


def save_frames(frames: Iterable[ScenarioFrame], path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for frame in frames:
            fh.write(dumps_frame(frame))
            fh.write("\n")
            count += 1
    return count


def iter_frames(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScenarioParseError(lineno, "<json>", exc.msg) from None
            yield frame_from_dict(doc, lineno)


def load_frames(path) -> list[ScenarioFrame]:
    return list(iter_frames(Path(path)))


def frames_equal(a: ScenarioFrame, b: ScenarioFrame) -> bool:
    return frame_to_dict(a) == frame_to_dict(b)
