"""Closed-loop log-replay simulation and its evaluation metrics.

At every 10 Hz step the planner sees the last M steps of every agent in the
current ego frame, only the first control of the executed plan drives the
ego through one bicycle step, and every other agent jumps to its next logged
pose.
"""

from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import torch

from .config import ModelConfig
from .decoder import bicycle_rollout
from .geometry import box_corners, boxes_overlap, collision_check, distance_to_polyline  # noqa: F401
from .losses import _dist, joint_mode_errors
from .model import PlanningNetwork, collate
from .scenario import AgentHistory, LocalMap, ScenarioFrame, Route, normalize_to_ego_frame, wrap_angle

CHECKPOINT_SECONDS = (3.0, 5.0, 10.0)
METRIC_COLUMNS = (
    "collision", "off_route", "progress", "mean_abs_accel", "mean_abs_jerk", "mean_abs_lat_accel",
    "position_error_3s", "position_error_5s", "position_error_10s", "prediction_ade",
    "prediction_fde", "aborted",
)
REPORT_COLUMNS = ("seed", "config_hash") + METRIC_COLUMNS


class SimulationError(RuntimeError):
    pass


class NonFinitePlan(SimulationError):
    """The planner produced NaN or infinite values."""


# ----------------------------------------------------------------------------
# planners and refiners
# ----------------------------------------------------------------------------


@dataclass
class Plan:
    controls: np.ndarray  # [N, 2] executed mode
    predictions: np.ndarray | None = None  # [K, N, 3] executed mode, observation frame
    prediction_mask: np.ndarray | None = None  # [K]
    all_predictions: np.ndarray | None = None  # [X, K, N, 3]
    all_ego: np.ndarray | None = None  # [X, N, 3]


class Planner(Protocol):
    def __call__(self, obs: ScenarioFrame, step: int) -> Plan: ...


@dataclass
class PlanContext:
    """What a refiner may use besides the initial controls; poses are in the observation frame."""

    state: np.ndarray  # ego (x, y, heading, speed)
    predictions: np.ndarray  # [K, N, 3]
    prediction_mask: np.ndarray  # [K]
    local_map: LocalMap | None
    dt: float
    wheelbase: float
    max_accel: float
    max_steer: float


PlanRefiner = Callable[[np.ndarray, PlanContext], np.ndarray]


class NetworkPlanner:
    """Runs the network on the observation and picks the highest-probability mode."""

    def __init__(self, model: PlanningNetwork):
        self.model = model
        self.cfg = model.cfg

    @torch.no_grad()
    def __call__(self, obs: ScenarioFrame, step: int) -> Plan:
        batch = collate([obs], self.cfg, require_future=False)
        out = self.model(batch)
        tensors = (out.ego_controls, out.ego_trajectories, out.neighbor_trajectories, out.mode_probs)
        if not all(bool(torch.isfinite(t).all()) for t in tensors):
            raise NonFinitePlan(f"non-finite network output at step {step}")
        mode = int(torch.argmax(out.mode_probs[0]))
        nbr = out.neighbor_trajectories[0].numpy()
        return Plan(
            controls=out.ego_controls[0, mode].numpy().copy(),
            predictions=nbr[mode].copy(),
            prediction_mask=batch.agent_mask[0, 1:].numpy().copy(),
            all_predictions=nbr.copy(),
            all_ego=out.ego_trajectories[0].numpy().copy(),
        )


class OraclePlanner:
    """Replays the ego's logged controls; needs ``oracle_controls`` on the source frame."""

    def __init__(self, frame: ScenarioFrame):
        if frame.oracle_controls is None:
            raise SimulationError("frame has no oracle controls")
        self.controls = frame.oracle_controls[0, frame.history_len - 1:]

    def __call__(self, obs: ScenarioFrame, step: int) -> Plan:
        return Plan(controls=np.array(self.controls[step:]))


class ConstantPlanner:
    """Always plans the same control; handy for baselines and tests."""

    def __init__(self, accel: float = 0.0, steer: float = 0.0):
        self.control = np.array([[accel, steer]], dtype=np.float64)

    def __call__(self, obs: ScenarioFrame, step: int) -> Plan:
        return Plan(controls=self.control.copy())


@dataclass(frozen=True)
class RefinerWeights:
    tracking: float = 1.0
    smoothness: float = 0.1
    collision: float = 10.0
    clearance: float = 4.0  # meters; penalty starts below this center distance
    step_size: float = 0.01


def refine_plan_gradient(initial: np.ndarray, context: PlanContext, iterations: int = 20,
                         weights: RefinerWeights = RefinerWeights()) -> np.ndarray:
    """Fixed-step gradient descent on the control sequence.

    Cost: squared deviation from the initial controls, squared control
    differences, and a squared hinge on the distance between the rolled-out
    ego and each valid predicted neighbor pose at the same step. Controls
    are clamped to their bounds after every update.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    bounds = np.array([context.max_accel, context.max_steer])
    u0 = np.clip(np.asarray(initial, dtype=np.float64), -bounds, bounds)
    if iterations == 0:
        return u0
    target = torch.from_numpy(u0)
    lim = torch.from_numpy(bounds)
    state = torch.from_numpy(np.asarray(context.state, dtype=np.float64))
    preds = torch.from_numpy(np.asarray(context.predictions, dtype=np.float64))
    valid = torch.from_numpy(np.asarray(context.prediction_mask, dtype=bool))
    u = target.clone().requires_grad_(True)
    for _ in range(iterations):
        traj = bicycle_rollout(state, u, context.dt, context.wheelbase)
        cost = weights.tracking * ((u - target) ** 2).sum()
        cost = cost + weights.smoothness * ((u[1:] - u[:-1]) ** 2).sum()
        n = min(traj.shape[0], preds.shape[-2])
        if n and valid.any():
            gap = torch.linalg.vector_norm(traj[None, :n, :2] - preds[valid][:, :n, :2], dim=-1)
            cost = cost + weights.collision * (torch.relu(weights.clearance - gap) ** 2).sum()
        (grad,) = torch.autograd.grad(cost, u)
        with torch.no_grad():
            u = torch.maximum(torch.minimum(u - weights.step_size * grad, lim), -lim)
        u.requires_grad_(True)
    return u.detach().numpy()


def gradient_refiner(iterations: int = 20, weights: RefinerWeights = RefinerWeights()) -> PlanRefiner:
    return lambda initial, context: refine_plan_gradient(initial, context, iterations, weights)


# ----------------------------------------------------------------------------
# world state and stepping
# ----------------------------------------------------------------------------


def _agent_log(frame: ScenarioFrame, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Logged poses [A, M + Nf, 3] and speeds [A, M + Nf] in the frame's coordinates."""
    m = frame.history_len
    hist = np.stack([a.states for a in frame.agents])  # [A, M, 7]
    poses = np.concatenate([hist[..., [0, 1, 4]], frame.gt_futures], axis=1)
    speeds = np.empty(poses.shape[:2])
    speeds[:, :m] = np.hypot(hist[..., 2], hist[..., 3])
    nf = frame.future_len
    if frame.oracle_controls is not None:
        acc = frame.oracle_controls[:, m - 1:m - 1 + nf, 0]
        v = speeds[:, m - 1].copy()
        for t in range(nf):
            v = v + acc[:, t] * dt
            speeds[:, m + t] = v
    elif nf:
        step = np.hypot(*np.moveaxis(np.diff(poses[:, m - 1:, :2], axis=1), -1, 0))
        speeds[:, m:] = step / dt
    return poses, speeds


@dataclass
class World:
    """Mutable closed-loop state, in the coordinates of the source frame."""

    frame: ScenarioFrame
    log_poses: np.ndarray  # [A, M + Nf, 3]
    log_speeds: np.ndarray  # [A, M + Nf]
    ego_trace: list[np.ndarray]  # (x, y, heading, speed), history then simulated
    step: int = 0
    executed: list[np.ndarray] = field(default_factory=list)
    aborted: bool = False

    @classmethod
    def from_frame(cls, frame: ScenarioFrame, dt: float) -> "World":
        poses, speeds = _agent_log(frame, dt)
        trace = [np.array([*poses[0, t], speeds[0, t]]) for t in range(frame.history_len)]
        return cls(frame, poses, speeds, trace)

    @property
    def now(self) -> int:
        """Index of the current time in the log arrays."""
        return self.frame.history_len - 1 + self.step

    @property
    def ego(self) -> np.ndarray:
        return self.ego_trace[-1]

    def agent_boxes(self) -> list[tuple[float, ...]]:
        out = []
        for a, agent in enumerate(self.frame.neighbors, start=1):
            x, y, h = self.log_poses[a, self.now]
            out.append((x, y, h, agent.states[-1, 5], agent.states[-1, 6]))
        return out

    def ego_box(self) -> tuple[float, ...]:
        x, y, h, _ = self.ego
        return (x, y, h, self.frame.ego.states[-1, 5], self.frame.ego.states[-1, 6])

    def observation(self) -> ScenarioFrame:
        """The last M steps of every agent, normalized to the current ego pose."""
        m = self.frame.history_len
        lo = self.now - m + 1

        def rows(poses: np.ndarray, speeds: np.ndarray, like: AgentHistory) -> np.ndarray:
            h = wrap_angle(poses[:, 2])
            return np.stack([poses[:, 0], poses[:, 1], speeds * np.cos(h), speeds * np.sin(h), h,
                             like.states[:, 5], like.states[:, 6]], axis=1)

        trace = np.stack(self.ego_trace[lo:self.now + 1])
        ego = AgentHistory(self.frame.ego.agent_id, self.frame.ego.kind,
                           rows(trace[:, :3], trace[:, 3], self.frame.ego))
        neighbors = tuple(
            AgentHistory(n.agent_id, n.kind,
                         rows(self.log_poses[a, lo:self.now + 1], self.log_speeds[a, lo:self.now + 1], n))
            for a, n in enumerate(self.frame.neighbors, start=1)
        )
        obs = ScenarioFrame(ego=ego, neighbors=neighbors, maps=self.frame.maps,
                            gt_futures=np.zeros((self.frame.num_agents, 0, 3)),
                            route=self.frame.route, seed=self.frame.seed)
        return normalize_to_ego_frame(obs)


def step(world: World, planner: Planner, cfg: ModelConfig, refiner: PlanRefiner | None = None) -> Plan:
    """Advance the world by one step; returns the plan that was used (observation frame)."""
    if world.now + 1 >= world.log_poses.shape[1]:
        raise SimulationError("log exhausted")
    obs = world.observation()
    plan = planner(obs, world.step)
    controls = np.asarray(plan.controls, dtype=np.float64)
    if controls.ndim != 2 or controls.shape[1] != 2 or len(controls) == 0:
        raise SimulationError(f"planner returned controls of shape {controls.shape}")
    if not np.all(np.isfinite(controls)):
        raise NonFinitePlan(f"non-finite controls at step {world.step}")
    if refiner is not None and plan.predictions is not None:
        ctx = PlanContext(
            state=np.array([0.0, 0.0, 0.0, world.ego[3]]),
            predictions=plan.predictions, prediction_mask=plan.prediction_mask,
            local_map=obs.maps[0], dt=cfg.dt, wheelbase=cfg.wheelbase,
            max_accel=cfg.max_accel, max_steer=cfg.max_steer,
        )
        controls = np.asarray(refiner(controls, ctx), dtype=np.float64)
        plan = dataclasses.replace(plan, controls=controls)
    u0 = controls[0]
    nxt = bicycle_rollout(torch.from_numpy(world.ego.copy()), torch.from_numpy(u0[None].copy()),
                          cfg.dt, cfg.wheelbase, return_speed=True)
    pose, speed = nxt[0][0].numpy(), float(nxt[1][0])
    world.ego_trace.append(np.array([pose[0], pose[1], pose[2], speed]))
    world.executed.append(u0.copy())
    world.step += 1
    return plan


# ----------------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------------


@dataclass
class EpisodeMetrics:
    collision: bool
    off_route: bool
    progress: float
    mean_abs_accel: float
    mean_abs_jerk: float
    mean_abs_lat_accel: float
    position_error_3s: float | None
    position_error_5s: float | None
    position_error_10s: float | None
    prediction_ade: float | None = None
    prediction_fde: float | None = None
    aborted: bool = False

    def row(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in METRIC_COLUMNS]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    return repr(float(value))


def metrics(ego_trace: np.ndarray, controls: np.ndarray, log_ego: np.ndarray, route: Route,
            dt: float, collided: bool = False, off_route_threshold: float = 3.0) -> EpisodeMetrics:
    """Metrics of an executed trace.

    ``ego_trace`` [T+1, 4] holds (x, y, heading, speed) from the start pose,
    ``controls`` [T, 2] the executed controls, ``log_ego`` [>=T+1, 3] the
    logged ego poses from the same start time.
    """
    trace = np.asarray(ego_trace, dtype=np.float64)
    u = np.asarray(controls, dtype=np.float64).reshape(-1, 2)
    steps = len(trace) - 1
    xy = trace[:, :2]
    progress = float(np.sum(np.hypot(*np.diff(xy, axis=0).T))) if steps else 0.0
    off = any(distance_to_polyline(p, route.centerline) > off_route_threshold for p in xy[1:])
    acc = u[:, 0]
    mean_acc = float(np.mean(np.abs(acc))) if len(acc) else 0.0
    jerk = float(np.mean(np.abs(np.diff(acc) / dt))) if len(acc) > 1 else 0.0
    if steps:
        dth = wrap_angle(np.diff(trace[:, 2]))
        lat = float(np.mean(np.abs(trace[:-1, 3] * dth / dt)))
    else:
        lat = 0.0
    errors = []
    for seconds in CHECKPOINT_SECONDS:
        k = int(round(seconds / dt))
        if k <= steps and k < len(log_ego):
            errors.append(float(np.hypot(*(xy[k] - log_ego[k, :2]))))
        else:
            errors.append(None)
    return EpisodeMetrics(collided, off, progress, mean_acc, jerk, lat, *errors)


def _prediction_errors(plan: Plan, frame: ScenarioFrame) -> tuple[float | None, float | None]:
    """Open-loop best-mode prediction ADE/FDE of the first plan against the log."""
    if plan.all_predictions is None or plan.all_ego is None or frame.num_agents < 2:
        return None, None
    nbr = torch.from_numpy(plan.all_predictions)[None]  # [1, X, K, N, 3]
    n = min(nbr.shape[-2], frame.future_len)
    if n == 0:
        return None, None
    nbr = nbr[..., :n, :]
    ego = torch.from_numpy(plan.all_ego)[None, :, :n]
    k = nbr.shape[2]
    gt = torch.zeros(1, k + 1, n, 3, dtype=nbr.dtype)
    real = min(k, frame.num_agents - 1)
    gt[0, : real + 1] = torch.from_numpy(np.array(frame.gt_futures[: real + 1, :n]))
    mask = torch.from_numpy(plan.prediction_mask)[None]
    mask = torch.cat([torch.ones(1, 1, dtype=torch.bool), mask], dim=1)
    best = int(torch.argmin(joint_mode_errors(ego, nbr, gt, mask), dim=-1))
    d = _dist(nbr[0, best], gt[0, 1:])[mask[0, 1:]]  # [valid, n]
    if d.numel() == 0:
        return None, None
    return float(d.mean(dim=-1).mean()), float(d[:, -1].mean())


def run_episode(frame: ScenarioFrame, planner: Planner, cfg: ModelConfig, horizon_seconds: float = 10.0,
                refiner: PlanRefiner | None = None, off_route_threshold: float = 3.0) -> EpisodeMetrics:
    """Closed-loop episode over ``horizon_seconds`` of logged future.

    ``frame`` must be in the ego frame at its current time (as produced by the
    generator). A non-finite plan aborts the episode; metrics then cover the
    executed prefix and ``aborted`` is set.
    """
    steps = int(round(horizon_seconds / cfg.dt))
    if steps <= 0:
        raise ValueError("horizon must cover at least one step")
    if frame.future_len < steps:
        raise SimulationError(f"frame logs {frame.future_len} future steps, episode needs {steps}")
    world = World.from_frame(frame, cfg.dt)
    collided = collision_check(world.ego_box(), world.agent_boxes())
    first: Plan | None = None
    for _ in range(steps):
        try:
            plan = step(world, planner, cfg, refiner)
        except NonFinitePlan:
            world.aborted = True
            break
        if first is None:
            first = plan
        collided = collided or collision_check(world.ego_box(), world.agent_boxes())
    m = frame.history_len
    trace = np.stack(world.ego_trace[m - 1:])
    executed = np.array(world.executed).reshape(-1, 2)
    out = metrics(trace, executed, world.log_poses[0, m - 1:], frame.route, cfg.dt, collided,
                  off_route_threshold)
    out.aborted = world.aborted
    if first is not None:
        out.prediction_ade, out.prediction_fde = _prediction_errors(first, frame)
    return out


def run_episodes(frames: Sequence[ScenarioFrame], make_planner: Callable[[ScenarioFrame], Planner],
                 cfg: ModelConfig, horizon_seconds: float = 10.0, refiner: PlanRefiner | None = None,
                 jobs: int = 1) -> list[EpisodeMetrics]:
    """Independent episodes, optionally in parallel; results keep the input order."""
    def one(frame: ScenarioFrame) -> EpisodeMetrics:
        return run_episode(frame, make_planner(frame), cfg, horizon_seconds, refiner)

    if jobs <= 1:
        return [one(f) for f in frames]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, frames))


def aggregate(results: Sequence[EpisodeMetrics]) -> dict[str, float | None]:
    """Collision/off-route rates in percent; means of the other columns over present values."""
    out: dict[str, float | None] = {}
    for col in METRIC_COLUMNS:
        vals = [getattr(r, col) for r in results if getattr(r, col) is not None]
        if not vals:
            out[col] = None
        elif col in ("collision", "off_route", "aborted"):
            out[col] = 100.0 * float(np.mean([float(v) for v in vals]))
        else:
            out[col] = float(np.mean(vals))
    return out


def write_report(path, frames: Sequence[ScenarioFrame], results: Sequence[EpisodeMetrics],
                 config_hash: str) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for frame, res in zip(frames, results):
            writer.writerow(["" if frame.seed is None else frame.seed, config_hash] + res.row())
        agg = aggregate(results)
        writer.writerow(["aggregate", config_hash] + [_fmt(agg[c]) for c in METRIC_COLUMNS])
