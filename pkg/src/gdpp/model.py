"""Full prediction-and-planning network plus frame batching."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .agent_map import AgentMapInteraction
from .config import ModelConfig
from .decoder import Decoder, bicycle_rollout, initial_state
from .encoders import AgentInteraction, CrosswalkEncoder, HistoryEncoder, LaneEncoder
from .map_graph import EdgeCounter, GraphBlock
from .nn import DTYPE
from .scenario import LANE_NUMERIC, ScenarioFrame


@dataclass
class Batch:
    history: Tensor  # [B, A, M, 7]
    agent_mask: Tensor  # [B, A] bool
    lane_numeric: Tensor  # [B, A, 6, L, 10]
    lane_codes: Tensor  # [B, A, 6, L, 6] long
    lane_mask: Tensor  # [B, A, 6, L]
    crosswalks: Tensor  # [B, A, 4, Lc, 3]
    cw_mask: Tensor  # [B, A, 4, Lc]
    gt: Tensor  # [B, A, N, 3]

    @property
    def size(self) -> int:
        return self.history.shape[0]

    @property
    def ego_state(self) -> Tensor:
        return initial_state(self.history[:, 0, -1])

    def index(self, idx) -> "Batch":
        idx = torch.as_tensor(idx, dtype=torch.long)
        return Batch(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})


def collate(frames: Sequence[ScenarioFrame], cfg: ModelConfig, require_future: bool = True) -> Batch:
    """Pad frames into fixed-size tensors. Frames are expected in the ego frame.

    Extra neighbors, lanes, waypoints or future steps beyond the configured
    sizes are truncated; missing ones are zero-padded and masked.
    """
    B, A, M, N = len(frames), cfg.neighbors + 1, cfg.history, cfg.future
    E1, L1, E2, L2 = cfg.num_lanes, cfg.lane_points, cfg.num_crosswalks, cfg.cw_points
    nnum = len(LANE_NUMERIC)
    hist = np.zeros((B, A, M, 7))
    amask = np.zeros((B, A), dtype=bool)
    lnum = np.zeros((B, A, E1, L1, nnum))
    lcode = np.zeros((B, A, E1, L1, 6), dtype=np.int64)
    lmask = np.zeros((B, A, E1, L1), dtype=bool)
    cw = np.zeros((B, A, E2, L2, 3))
    cmask = np.zeros((B, A, E2, L2), dtype=bool)
    gt = np.zeros((B, A, N, 3))
    for b, frame in enumerate(frames):
        if frame.history_len < M:
            raise ValueError(f"frame has {frame.history_len} history steps, model needs {M}")
        if require_future and frame.future_len < N:
            raise ValueError(f"frame has {frame.future_len} future steps, model needs {N}")
        for a, agent in enumerate(frame.agents[:A]):
            hist[b, a] = agent.states[-M:]
            amask[b, a] = True
            n = min(N, frame.future_len)
            gt[b, a, :n] = frame.gt_futures[a, :n]
            local = frame.maps[a]
            for e, lane in enumerate(local.lanes[:E1]):
                wp = lane.waypoints[:L1]
                lnum[b, a, e, : len(wp)] = wp[:, :nnum]
                lcode[b, a, e, : len(wp)] = wp[:, nnum:].astype(np.int64)
                lmask[b, a, e, : len(wp)] = True
            for e, c in enumerate(local.crosswalks[:E2]):
                pts = c.points[:L2]
                cw[b, a, e, : len(pts)] = pts
                cmask[b, a, e, : len(pts)] = True
    t = lambda x: torch.from_numpy(x)  # noqa: E731
    return Batch(t(hist), t(amask), t(lnum), t(lcode), t(lmask), t(cw), t(cmask), t(gt))


@dataclass
class ModelOutput:
    ego_controls: Tensor  # [B, X, N, 2]
    ego_trajectories: Tensor  # [B, X, N, 3]
    neighbor_trajectories: Tensor  # [B, X, K, N, 3]
    mode_probs: Tensor  # [B, X]
    mode_logits: Tensor  # [B, X]


def _zero_padding(x: Tensor, mask: Tensor) -> Tensor:
    m = mask
    while m.dim() < x.dim():
        m = m.unsqueeze(-1)
    return torch.where(m, x, torch.zeros_like(x))


class PlanningNetwork(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        g = torch.Generator().manual_seed(seed)
        F = cfg.dim
        self.lane_enc = LaneEncoder(F, g)
        self.cw_enc = CrosswalkEncoder(F, g)
        self.hist_lstm = HistoryEncoder(F, g)
        self.a2a = AgentInteraction(F, cfg.a2a_heads, g)
        self.lane_graph = GraphBlock(F, 2, g)
        self.cw_graph = GraphBlock(F, 2, g)
        self.a2m = AgentMapInteraction(F, cfg.map_heads, cfg.mode_heads, cfg.modes, g)
        self.dec = Decoder(cfg, g)
        self.edge_counter: EdgeCounter | None = None

    def encode(self, batch: Batch) -> tuple[Tensor, Tensor]:
        """Returns agent-agent features [B, A, F] and multimodal map contexts [B, A, X, F]."""
        cfg = self.cfg
        hist = _zero_padding(batch.history, batch.agent_mask)
        lane_num = _zero_padding(batch.lane_numeric, batch.lane_mask)
        lane_codes = _zero_padding(batch.lane_codes, batch.lane_mask)
        cw = _zero_padding(batch.crosswalks, batch.cw_mask)

        lanes = _zero_padding(self.lane_enc(lane_num, lane_codes), batch.lane_mask)
        lanes = self.lane_graph(lanes, batch.lane_mask, cfg.lane_group, cfg.knn, self.edge_counter)
        cws = _zero_padding(self.cw_enc(cw), batch.cw_mask)
        cws = self.cw_graph(cws, batch.cw_mask, cfg.cw_group, cfg.knn, self.edge_counter)

        agents = self.a2a(hist, batch.agent_mask, self.hist_lstm)
        vectors, elem_mask = self.a2m.map_attention(agents, lanes, batch.lane_mask, cws, batch.cw_mask)
        ctx = self.a2m.multimodal(agents, vectors, elem_mask, empty="zero")
        return agents, ctx

    def forward(self, batch: Batch) -> ModelOutput:
        cfg = self.cfg
        agents, map_ctx = self.encode(batch)
        dup = agents.unsqueeze(-2).expand(map_ctx.shape)
        ctx = torch.cat([dup, map_ctx], dim=-1)  # [B, A, X, 2F]

        controls = self.dec.decode_ego(ctx[:, 0])
        start = batch.ego_state.unsqueeze(1).expand(-1, cfg.modes, -1)
        ego_traj = bicycle_rollout(start, controls, cfg.dt, cfg.wheelbase)
        # neighbor outputs are offsets from each neighbor's current (x, y, heading)
        anchor = _zero_padding(batch.history[:, 1:, -1][..., [0, 1, 4]], batch.agent_mask[:, 1:])
        neighbors = self.dec.decode_neighbors(ctx[:, 1:]) + anchor[:, None, :, None, :]
        probs, logits = self.dec.score_modes(ctx, batch.agent_mask)
        return ModelOutput(controls, ego_traj, neighbors, probs, logits)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())
