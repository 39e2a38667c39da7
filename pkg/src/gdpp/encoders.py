"""Lane, crosswalk and agent-history encoders and the agent-agent interaction block."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .config import LANE_VOCABS
from .nn import LSTM, MLP, Embedding, Linear, SelfAttentionEncoder

LANE_NUMERIC_DIM = 10
AGENT_STATE_DIM = 7


class LaneEncoder(nn.Module):
    """Numeric fields go through one FC layer, categorical codes through
    embeddings that are summed; the two are concatenated and mapped to F."""

    def __init__(self, dim: int, generator: torch.Generator | None = None):
        super().__init__()
        self.numeric = Linear(LANE_NUMERIC_DIM, dim, generator)
        self.embeds = nn.ModuleList(Embedding(v, dim, generator) for v in LANE_VOCABS)
        self.mlp = MLP([2 * dim, dim, dim], generator)

    def forward(self, numeric: Tensor, codes: Tensor) -> Tensor:
        """``numeric`` [..., L, 10], ``codes`` [..., L, 6] -> [..., L, F]."""
        cat = sum(emb(codes[..., i]) for i, emb in enumerate(self.embeds))
        return self.mlp(torch.cat([self.numeric(numeric), cat], dim=-1))


class CrosswalkEncoder(nn.Module):
    def __init__(self, dim: int, generator: torch.Generator | None = None):
        super().__init__()
        self.mlp = MLP([3, dim, dim], generator)

    def forward(self, points: Tensor) -> Tensor:
        return self.mlp(points)


class HistoryEncoder(nn.Module):
    """Shared two-layer LSTM over the time axis; keeps only the last step.

    Raw 7-dim states are first aligned to F by ``embed`` so that the same LSTM
    can consume either raw histories or per-step attended features.
    """

    def __init__(self, dim: int, generator: torch.Generator | None = None):
        super().__init__()
        self.embed = Linear(AGENT_STATE_DIM, dim, generator)
        self.lstm = LSTM(dim, dim, num_layers=2, generator=generator)

    def encode_steps(self, steps: Tensor) -> Tensor:
        return self.lstm(steps)

    def forward(self, history: Tensor) -> Tensor:
        """[..., M, 7] -> [..., F]"""
        return self.lstm(self.embed(history))


class AgentInteraction(nn.Module):
    """Two parallel strategies sharing one two-layer self-attention encoder.

    A: attend across agents at every history step, then run the history LSTM.
    B: run the history LSTM, then attend across the encoded agents.
    The two results are summed per agent.
    """

    def __init__(self, dim: int, heads: int, generator: torch.Generator | None = None):
        super().__init__()
        self.attn = SelfAttentionEncoder(dim, heads, num_layers=2, generator=generator)

    def strategy_a(self, history: Tensor, agent_mask: Tensor, encoder: HistoryEncoder) -> Tensor:
        steps = encoder.embed(history)  # [..., A, M, F]
        per_step = steps.transpose(-3, -2)  # [..., M, A, F]
        step_mask = agent_mask.unsqueeze(-2).expand(per_step.shape[:-1])
        attended = self.attn(per_step, step_mask).transpose(-3, -2)
        return encoder.encode_steps(attended)

    def strategy_b(self, history: Tensor, agent_mask: Tensor, encoder: HistoryEncoder) -> Tensor:
        return self.attn(encoder(history), agent_mask)

    def forward(self, history: Tensor, agent_mask: Tensor, encoder: HistoryEncoder) -> Tensor:
        """``history`` [..., A, M, 7], ``agent_mask`` [..., A] -> [..., A, F]."""
        if not bool(agent_mask.any(dim=-1).all()):
            raise ValueError("agent_agent_interaction: every agent is masked")
        out = self.strategy_a(history, agent_mask, encoder) + self.strategy_b(history, agent_mask, encoder)
        return out * agent_mask[..., None].to(out.dtype)
