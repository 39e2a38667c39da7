"""Training objective: prediction smooth-L1, mode score cross-entropy, planning ADE/FDE."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .config import LossWeights

PROB_FLOOR = 1e-12


def _dist(a: Tensor, b: Tensor) -> Tensor:
    return torch.linalg.vector_norm(a[..., :2] - b[..., :2], dim=-1)


def joint_mode_errors(ego_traj: Tensor, nbr_traj: Tensor, gt: Tensor, agent_mask: Tensor) -> Tensor:
    """Per-mode joint displacement error [B, X].

    ``ego_traj`` [B, X, N, 3], ``nbr_traj`` [B, X, K, N, 3], ``gt`` [B, A, N, 3].
    Mean displacement of the ego rollout plus the sum over valid neighbors of
    their mean displacement.
    """
    ego_err = _dist(ego_traj, gt[:, None, 0]).mean(dim=-1)
    nbr_err = _dist(nbr_traj, gt[:, None, 1:]).mean(dim=-1)  # [B, X, K]
    nbr_err = torch.where(agent_mask[:, None, 1:], nbr_err, torch.zeros_like(nbr_err))
    return ego_err + nbr_err.sum(dim=-1)


def select_best_mode(ego_traj: Tensor, nbr_traj: Tensor, gt: Tensor, agent_mask: Tensor) -> Tensor:
    """Index of the jointly closest mode per frame; ties go to the lowest index."""
    with torch.no_grad():
        return torch.argmin(joint_mode_errors(ego_traj, nbr_traj, gt, agent_mask), dim=-1)


def smooth_l1(x: Tensor) -> Tensor:
    ax = x.abs()
    return torch.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def prediction_loss(pred: Tensor, gt: Tensor, mask: Tensor) -> Tensor:
    """Smooth-L1 averaged over valid neighbors x steps x 3 channels -> [B].

    ``pred``/``gt`` [B, K, N, 3], ``mask`` [B, K].
    """
    per = smooth_l1(pred - gt)
    per = torch.where(mask[..., None, None], per, torch.zeros_like(per))
    denom = mask.sum(dim=-1).to(per.dtype) * pred.shape[-2] * pred.shape[-1]
    return per.sum(dim=(-3, -2, -1)) / denom.clamp(min=1.0)


def score_loss(probs: Tensor, best: Tensor) -> Tensor:
    p = torch.gather(probs, -1, best.unsqueeze(-1)).squeeze(-1)
    return -torch.log(p.clamp(min=PROB_FLOOR))


def ade_loss(plan: Tensor, gt: Tensor, dt: float, horizon: float) -> Tensor:
    """Displacement summed over steps, times dt, divided by the horizon."""
    return _dist(plan, gt).sum(dim=-1) * dt / horizon


def fde_loss(plan: Tensor, gt: Tensor) -> Tensor:
    return _dist(plan[..., -1, :], gt[..., -1, :])


@dataclass
class LossBreakdown:
    pred: Tensor
    score: Tensor
    ade: Tensor
    fde: Tensor
    total: Tensor
    best: Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach().mean()) for k in ("pred", "score", "ade", "fde", "total")}


def weighted_total(pred, score, ade, fde, weights: LossWeights):
    return weights.prediction * pred + weights.score * score + weights.ade * ade + weights.fde * fde


def total_loss(output, batch, weights: LossWeights) -> tuple[Tensor, LossBreakdown]:
    """Batch-mean objective and per-frame breakdown (each [B])."""
    gt = batch.gt
    best = select_best_mode(output.ego_trajectories, output.neighbor_trajectories, gt, batch.agent_mask)
    ar = torch.arange(gt.shape[0])
    nbr_best = output.neighbor_trajectories[ar, best]  # [B, K, N, 3]
    ego_best = output.ego_trajectories[ar, best]  # [B, N, 3]
    n = gt.shape[-2]
    horizon = weights.horizon if weights.horizon is not None else n * weights.dt

    pred = prediction_loss(nbr_best, gt[:, 1:], batch.agent_mask[:, 1:])
    score = score_loss(output.mode_probs, best)
    ade = ade_loss(ego_best, gt[:, 0], weights.dt, horizon)
    fde = fde_loss(ego_best, gt[:, 0])
    total = weighted_total(pred, score, ade, fde, weights)
    return total.mean(), LossBreakdown(pred, score, ade, fde, total, best)
