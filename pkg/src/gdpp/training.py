"""End-to-end training loop with step-decayed Adam, checkpoints and CSV logging."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import checkpoint
from .config import TrainConfig
from .losses import _dist, joint_mode_errors, total_loss
from .model import Batch, PlanningNetwork, collate
from .scenario import ScenarioFrame

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "pred", "score", "ade", "fde", "total")


class TrainingError(RuntimeError):
    pass


def lr_at(epoch: int, config: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if config.halve_every is None:
        return config.base_lr
    return config.base_lr * 0.5 ** (epoch // config.halve_every)


@dataclass
class TrainReport:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    checkpoints: list[str] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.steps[0]["total"]

    @property
    def final_loss(self) -> float:
        return self.steps[-1]["total"]


@torch.no_grad()
def evaluate(model: PlanningNetwork, batch: Batch) -> dict[str, float]:
    """Best-mode prediction ADE/FDE over valid neighbors and planning ADE/FDE."""
    out = model(batch)
    gt = batch.gt
    best = torch.argmin(joint_mode_errors(out.ego_trajectories, out.neighbor_trajectories, gt,
                                          batch.agent_mask), dim=-1)
    ar = torch.arange(batch.size)
    nbr = _dist(out.neighbor_trajectories[ar, best], gt[:, 1:])  # [B, K, N]
    mask = batch.agent_mask[:, 1:]
    n_valid = max(int(mask.sum()), 1)
    plan = _dist(out.ego_trajectories[ar, best], gt[:, 0])
    return {
        "pred_ade": float(nbr.mean(dim=-1)[mask].sum()) / n_valid,
        "pred_fde": float(nbr[..., -1][mask].sum()) / n_valid,
        "plan_ade": float(plan.mean()),
        "plan_fde": float(plan[:, -1].mean()),
    }


def _check_finite(parts: dict[str, float], step: int) -> None:
    for name, value in parts.items():
        if not math.isfinite(value):
            raise TrainingError(f"non-finite {name} loss at step {step}: {value}")


def train(
    frames: Sequence[ScenarioFrame],
    config: TrainConfig,
    out_dir=None,
    val_frames: Sequence[ScenarioFrame] | None = None,
    model: PlanningNetwork | None = None,
) -> tuple[PlanningNetwork, TrainReport]:
    """Train on ``frames``; writes ``ckpt_epoch{n}.gdpp`` and ``train_log.csv`` when ``out_dir`` is set."""
    if not frames:
        raise TrainingError("no training frames")
    t0 = time.perf_counter()
    cfg = config.model
    model = model or PlanningNetwork(cfg, seed=config.seed)
    data = collate(frames, cfg)
    val = collate(val_frames, cfg) if val_frames else None
    optim = torch.optim.Adam(model.parameters(), lr=config.base_lr, betas=(0.9, 0.999), eps=1e-8)
    rng = np.random.default_rng(config.seed)
    report = TrainReport()

    writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
        log_fh = open(out_dir / "train_log.csv", "w", newline="", encoding="utf-8")
        writer = csv.writer(log_fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)

    step = 0
    try:
        for epoch in range(config.epochs):
            for group in optim.param_groups:
                group["lr"] = lr_at(epoch, config)
            order = rng.permutation(data.size)
            for start in range(0, data.size, config.batch_size):
                batch = data.index(order[start:start + config.batch_size])
                optim.zero_grad(set_to_none=True)
                loss, parts = total_loss(model(batch), batch, config.weights)
                row = parts.as_floats()
                _check_finite(row, step)
                loss.backward()
                if config.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                optim.step()
                row = {"step": step, **row}
                report.steps.append(row)
                if writer is not None:
                    writer.writerow([step] + [repr(row[c]) for c in LOG_COLUMNS[1:]])
                step += 1
            summary = {"epoch": epoch, "lr": lr_at(epoch, config)}
            if val is not None:
                summary.update(evaluate(model, val))
            report.epochs.append(summary)
            if out_dir is not None:
                path = out_dir / f"ckpt_epoch{epoch}.gdpp"
                checkpoint.save(model, path)
                report.checkpoints.append(str(path))
            log.info("epoch %d: loss %.4f", epoch, report.steps[-1]["total"])
    finally:
        if writer is not None:
            log_fh.close()
    report.wall_time = time.perf_counter() - t0
    return model, report
