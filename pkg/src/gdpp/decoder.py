"""Ego control decoder, kinematic bicycle rollout, neighbor decoder and mode scorer."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .config import ModelConfig
from .nn import DTYPE, MLP, masked_max


def bicycle_rollout(initial: Tensor, controls: Tensor, dt: float, wheelbase: float,
                    return_speed: bool = False):
    """Explicit-Euler kinematic bicycle.

    ``initial`` is [..., 4] holding (x, y, heading, speed); ``controls`` is
    [..., N, 2] holding (acceleration, steering). Returns the N poses after
    each step as [..., N, 3], plus the speeds [..., N] when ``return_speed``.
    """
    if wheelbase <= 0:
        raise ValueError("wheelbase must be positive")
    x, y, th, v = initial.unbind(-1)
    poses, speeds = [], []
    for t in range(controls.shape[-2]):
        a = controls[..., t, 0]
        steer = controls[..., t, 1]
        x, y, th, v = (
            x + v * torch.cos(th) * dt,
            y + v * torch.sin(th) * dt,
            th + v * torch.tan(steer) / wheelbase * dt,
            v + a * dt,
        )
        poses.append(torch.stack([x, y, th], dim=-1))
        speeds.append(v)
    traj = torch.stack(poses, dim=-2)
    if return_speed:
        return traj, torch.stack(speeds, dim=-1)
    return traj


def initial_state(states: Tensor) -> Tensor:
    """Map AgentState rows [..., 7] to rollout states (x, y, heading, speed)."""
    speed = torch.hypot(states[..., 2], states[..., 3])
    return torch.stack([states[..., 0], states[..., 1], states[..., 4], speed], dim=-1)


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        ctx, hid = 2 * cfg.dim, cfg.decoder_hidden
        self.ego = MLP([ctx, hid, hid, cfg.future * 2], generator)
        self.nbr = MLP([ctx, hid, hid, cfg.future * 3], generator)
        self.score = MLP([ctx, hid, 1], generator)

    def decode_ego(self, ctx: Tensor) -> Tensor:
        """[..., X, 2F] -> controls [..., X, N, 2], tanh-scaled into the control bounds."""
        raw = self.ego(ctx).reshape(ctx.shape[:-1] + (self.cfg.future, 2))
        scale = torch.tensor([self.cfg.max_accel, self.cfg.max_steer], dtype=DTYPE)
        return torch.tanh(raw) * scale

    def decode_neighbors(self, ctx: Tensor) -> Tensor:
        """[..., K, X, 2F] -> ego-frame poses [..., X, K, N, 3]."""
        out = self.nbr(ctx).reshape(ctx.shape[:-1] + (self.cfg.future, 3))
        unit = self.cfg.position_unit
        out = out * torch.tensor([unit, unit, 1.0], dtype=DTYPE)
        return out.transpose(-4, -3)

    def score_modes(self, ctx: Tensor, agent_mask: Tensor | None = None) -> tuple[Tensor, Tensor]:
        """[..., A, X, 2F] -> (probabilities, logits), each [..., X]."""
        pooled = masked_max(ctx, agent_mask, dim=-3)
        logits = self.score(pooled).squeeze(-1)
        return torch.softmax(logits, dim=-1), logits
