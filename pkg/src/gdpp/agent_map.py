"""Hierarchical agent-map cross-attention."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .nn import MultiHeadAttention


class AgentMapInteraction(nn.Module):
    def __init__(self, dim: int, map_heads: int, mode_heads: int, modes: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.stage1 = nn.ModuleDict({
            "lane": MultiHeadAttention(dim, map_heads, generator),
            "cw": MultiHeadAttention(dim, map_heads, generator),
        })
        self.stage2 = nn.ModuleDict(
            {f"mode{m}": MultiHeadAttention(dim, mode_heads, generator) for m in range(modes)}
        )

    def map_attention(self, agent: Tensor, lanes: Tensor, lane_mask: Tensor,
                      crosswalks: Tensor, cw_mask: Tensor) -> tuple[Tensor, Tensor]:
        """One cross-attention per map element with the agent feature as the only query.

        ``agent`` [..., F]; ``lanes`` [..., E1, L, F]; ``crosswalks`` [..., E2, L', F].
        Returns vectors [..., E1 + E2, F] (lanes first) and their element mask.
        Fully padded elements give a zero vector and a False mask entry.
        """
        outs, masks = [], []
        for key, feats, mask in (("lane", lanes, lane_mask), ("cw", crosswalks, cw_mask)):
            q = agent.unsqueeze(-2).unsqueeze(-2).expand(feats.shape[:-2] + (1, feats.shape[-1]))
            out = self.stage1[key](q, feats, feats, mask, empty="zero")
            outs.append(out.squeeze(-2))
            masks.append(mask.any(dim=-1))
        return torch.cat(outs, dim=-2), torch.cat(masks, dim=-1)

    def multimodal(self, agent: Tensor, vectors: Tensor, mask: Tensor,
                   empty: str = "raise") -> Tensor:
        """Parallel per-mode cross-attention over the map vectors -> [..., X, F]."""
        q = agent.unsqueeze(-2)
        ctx = [module(q, vectors, vectors, mask, empty=empty).squeeze(-2)
               for module in self.stage2.values()]
        return torch.stack(ctx, dim=-2)
