"""Command-line entry point: gen, train, eval, simulate, plot."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import checkpoint
from .checkpoint import CheckpointError
from .config import ConfigError, TrainConfig, config_hash
from .model import PlanningNetwork, collate
from .nn import ContractError
from .scenario import TEMPLATES, GeneratorSpec, ScenarioParseError, generate_scenario, load_frames, save_frames
from .simulator import (NetworkPlanner, OraclePlanner, SimulationError, gradient_refiner, run_episodes,
                        write_report)
from .training import TrainingError, evaluate, train

SIM_HORIZON_SECONDS = 10.0
RUNTIME_ERRORS = (ConfigError, ScenarioParseError, CheckpointError, SimulationError, TrainingError,
                  ContractError, ValueError, OSError, KeyError, json.JSONDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse calls this for bad usage
        raise UsageError(message)


def _positive(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gdpp", description="Graph-embedded prediction and planning toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate synthetic scenario frames (JSON Lines)")
    g.add_argument("--out", required=True, help="output .jsonl path")
    g.add_argument("--seed", type=int, default=0, help="seed of the first frame; frame i uses seed+i")
    g.add_argument("--count", type=_positive, default=1, help="number of frames")
    g.add_argument("--template", choices=TEMPLATES, help="map template (overrides the config)")
    g.add_argument("--config", help="generator spec JSON (GeneratorSpec keys)")

    t = sub.add_parser("train", help="train the network; writes checkpoints, train_log.csv, config.json")
    t.add_argument("--data", required=True, help="training frames (.jsonl)")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", help="training config JSON (TrainConfig keys); defaults if omitted")
    t.add_argument("--seed", type=int, help="overrides the config seed")

    e = sub.add_parser("eval", help="per-frame prediction ADE/FDE table (CSV)")
    e.add_argument("--ckpt", required=True, help="checkpoint file")
    e.add_argument("--data", required=True, help="frames to evaluate (.jsonl)")
    e.add_argument("--config", help="training config JSON; default: config.json next to the checkpoint")
    e.add_argument("--out", help="output CSV path; default: standard output")
    e.add_argument("--jobs", type=_positive, default=1, help="parallel workers")

    s = sub.add_parser("simulate", help="closed-loop log-replay episodes; writes sim_report.csv")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--ckpt", help="checkpoint; without it the ego replays its logged controls")
    s.add_argument("--config", help="training config JSON; default: config.json next to the checkpoint")
    s.add_argument("--data", help="frames with >= 10 s of logged future; generated when omitted")
    s.add_argument("--episodes", type=_positive, help="number of episodes (default: all frames, or 10)")
    s.add_argument("--seed", type=int, default=0, help="seed of the first generated frame")
    s.add_argument("--template", choices=TEMPLATES, default="straight", help="template for generated frames")
    s.add_argument("--jobs", type=_positive, default=1, help="parallel workers")
    s.add_argument("--refiner", choices=("none", "gradient"), default="none", help="plan refinement")

    pl = sub.add_parser("plot", help="static SVG figures of frames (.jsonl) or loss curves (.csv)")
    pl.add_argument("--data", required=True, help="frames (.jsonl) or a log CSV")
    pl.add_argument("--out", required=True, help="output directory (frames) or .svg path (CSV)")
    pl.add_argument("--ckpt", help="checkpoint whose plan and predictions are drawn")
    pl.add_argument("--config", help="training config JSON; default: config.json next to the checkpoint")
    pl.add_argument("--count", type=_positive, default=5, help="maximum number of frames to draw")
    return p


def _train_config(path, ckpt=None) -> TrainConfig:
    if path is None and ckpt is not None:
        path = Path(ckpt).parent / "config.json"
        if not path.exists():
            raise ConfigError(f"no --config given and no config.json next to {ckpt}")
    return TrainConfig.load(path) if path is not None else TrainConfig()


def _load_model(ckpt, config_path) -> tuple[PlanningNetwork, TrainConfig]:
    config = _train_config(config_path, ckpt)
    model = PlanningNetwork(config.model, seed=config.seed)
    checkpoint.load_into(model, ckpt)
    model.eval()
    return model, config


def cmd_gen(args) -> None:
    data = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
    if args.template:
        data["template"] = args.template
    spec = GeneratorSpec.from_dict(data)
    frames = (generate_scenario(args.seed + i, spec) for i in range(args.count))
    save_frames(frames, args.out)


def cmd_train(args) -> None:
    config = _train_config(args.config)
    if args.seed is not None:
        config = TrainConfig.from_dict({**config.to_dict(), "seed": args.seed})
    frames = load_frames(args.data)
    _, report = train(frames, config, out_dir=args.out)
    print(f"trained {len(report.steps)} steps; loss {report.initial_loss:.6g} -> {report.final_loss:.6g}")


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def cmd_eval(args) -> None:
    model, config = _load_model(args.ckpt, args.config)
    frames = load_frames(args.data)

    def one(frame):
        with torch.no_grad():
            batch = collate([frame], config.model)
            res = evaluate(model, batch)
        has_neighbors = bool(batch.agent_mask[0, 1:].any())
        return [res["pred_ade"] if has_neighbors else None, res["pred_fde"] if has_neighbors else None,
                res["plan_ade"], res["plan_fde"]]

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(one, frames))
    else:
        rows = [one(f) for f in frames]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame", "seed", "ade", "fde", "plan_ade", "plan_fde"])
    for i, (frame, row) in enumerate(zip(frames, rows)):
        writer.writerow([i, "" if frame.seed is None else frame.seed] + [_fmt(v) for v in row])
    means = []
    for col in range(4):
        vals = [r[col] for r in rows if r[col] is not None]
        means.append(float(np.mean(vals)) if vals else None)
    writer.writerow(["mean", ""] + [_fmt(v) for v in means])
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())


def cmd_simulate(args) -> None:
    if args.ckpt:
        model, config = _load_model(args.ckpt, args.config)
        cfg = model.cfg
        make_planner = lambda frame: NetworkPlanner(model)  # noqa: E731
        digest = config_hash(config)
    else:
        config = _train_config(args.config)
        cfg = config.model
        make_planner = OraclePlanner
        digest = config_hash(config)
    if args.data:
        frames = load_frames(args.data)
        if args.episodes:
            frames = frames[: args.episodes]
    else:
        spec = GeneratorSpec(template=args.template, history=cfg.history, lane_points=cfg.lane_points,
                             cw_points=cfg.cw_points, max_neighbors=cfg.neighbors,
                             num_agents=min(6, cfg.neighbors + 1), episode_seconds=SIM_HORIZON_SECONDS,
                             num_lanes=cfg.num_lanes, num_crosswalks=cfg.num_crosswalks,
                             dt=cfg.dt, wheelbase=cfg.wheelbase)
        frames = [generate_scenario(args.seed + i, spec) for i in range(args.episodes or 10)]
    if not frames:
        raise SimulationError("no frames to simulate")
    logged = min(f.future_len for f in frames) * cfg.dt
    horizon = min(SIM_HORIZON_SECONDS, logged)
    refiner = gradient_refiner() if args.refiner == "gradient" else None
    results = run_episodes(frames, make_planner, cfg, horizon, refiner, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "sim_report.csv", frames, results, digest)
    collisions = sum(r.collision for r in results)
    print(f"{len(results)} episodes over {horizon:g} s; {collisions} with a collision")


def cmd_plot(args) -> None:
    from . import plotting

    if str(args.data).endswith(".csv"):
        plotting.plot_curves(args.data, args.out)
        return
    frames = load_frames(args.data)[: args.count]
    model = None
    if args.ckpt:
        model, config = _load_model(args.ckpt, args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        plan = predictions = probs = None
        if model is not None:
            with torch.no_grad():
                result = model(collate([frame], model.cfg, require_future=False))
            mode = int(torch.argmax(result.mode_probs[0]))
            plan = result.ego_trajectories[0, mode].numpy()
            valid = int(min(frame.num_agents - 1, model.cfg.neighbors))
            predictions = result.neighbor_trajectories[0, :, :valid].numpy()
            probs = result.mode_probs[0].numpy()
        plotting.plot_scene(frame, out / f"frame{i:04d}.svg", plan, predictions, probs)


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "simulate": cmd_simulate, "plot": cmd_plot}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](args)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
