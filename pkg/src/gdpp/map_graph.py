"""Feature-space k-NN graphs, edge convolution and the proxy-waypoint pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor, nn

from .nn import MLP, ContractError, masked_max


@dataclass
class FeatureGraph:
    vertices: Tensor  # [L, F]
    neighbors: Tensor  # [L, k] long, self first

    @property
    def k(self) -> int:
        return self.neighbors.shape[-1]

    def edges(self) -> list[tuple[int, int]]:
        return [(i, int(j)) for i, row in enumerate(self.neighbors) for j in row]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("src,dst\n")
            for i, j in self.edges():
                fh.write(f"{i},{j}\n")


@dataclass
class EdgeCounter:
    """Records how many edge-function evaluations each graph layer performs."""

    per_layer: list[int] = field(default_factory=list)

    def record(self, n: int) -> None:
        self.per_layer.append(int(n))

    def reset(self) -> None:
        self.per_layer.clear()


def knn_indices(features: Tensor, k: int, mask: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Batched k-NN in feature space.

    Returns neighbor indices [..., L, k] (self first, remaining by distance,
    ties to the lower index) and an edge-validity mask of the same shape.
    Masked vertices are never chosen as neighbors.
    """
    L = features.shape[-2]
    k = min(k, L)
    x = features.detach()
    dist = ((x.unsqueeze(-2) - x.unsqueeze(-3)) ** 2).sum(-1)  # [..., L, L]
    if mask is not None:
        dist = dist.masked_fill(~mask.unsqueeze(-2), float("inf"))
    eye = torch.eye(L, dtype=torch.bool)
    dist = dist.masked_fill(eye, -1.0)
    idx = torch.argsort(dist, dim=-1, stable=True)[..., :k]
    if mask is None:
        valid = torch.ones(idx.shape, dtype=torch.bool)
    else:
        col_ok = torch.gather(mask.unsqueeze(-2).expand(dist.shape), -1, idx)
        valid = col_ok & mask.unsqueeze(-1)
    return idx, valid


def build_knn_graph(features: Tensor, k: int) -> FeatureGraph:
    if features.dim() != 2 or features.shape[0] < 1:
        raise ContractError("build_knn_graph: expected features [L, F] with L >= 1")
    if k < 1 or k > features.shape[0]:
        raise ContractError(f"build_knn_graph: k={k} must be in [1, L={features.shape[0]}]")
    idx, _ = knn_indices(features, k)
    return FeatureGraph(features, idx)


def edge_conv(features: Tensor, neighbors: Tensor, f_theta: nn.Module,
              edge_mask: Tensor | None = None, counter: EdgeCounter | None = None) -> Tensor:
    """``P_i' = max_j f_theta([P_i, P_i - P_j])`` over the neighbor lists.

    ``features`` [..., L, F], ``neighbors`` [..., L, k] long.
    """
    k = neighbors.shape[-1]
    flat_idx = neighbors.reshape(neighbors.shape[:-2] + (-1,))  # [..., L*k]
    gathered = torch.gather(
        features, -2, flat_idx.unsqueeze(-1).expand(flat_idx.shape + (features.shape[-1],))
    ).reshape(neighbors.shape + (features.shape[-1],))  # [..., L, k, F]
    center = features.unsqueeze(-2).expand_as(gathered)
    edge = f_theta(torch.cat([center, center - gathered], dim=-1))  # [..., L, k, F']
    if counter is not None:
        counter.record(int(np.prod(neighbors.shape)))
    return masked_max(edge, edge_mask, dim=-2) if edge_mask is not None else edge.max(dim=-2).values


def group_means(features: Tensor, mask: Tensor | None, group: int) -> tuple[Tensor, Tensor | None]:
    L = features.shape[-2]
    if group < 1 or L % group:
        raise ContractError(f"group size {group} must divide L={L}")
    grouped = features.reshape(features.shape[:-2] + (L // group, group, features.shape[-1]))
    if mask is None:
        return grouped.mean(dim=-2), None
    gmask = mask.reshape(mask.shape[:-1] + (L // group, group))
    summed = torch.where(gmask.unsqueeze(-1), grouped, torch.zeros_like(grouped)).sum(dim=-2)
    count = gmask.sum(dim=-1, keepdim=True).clamp(min=1).to(features.dtype)
    return summed / count, gmask.any(dim=-1)


class GraphBlock(nn.Module):
    """Proxy waypoints -> two dynamic edge-conv layers -> duplicate + shortcut."""

    def __init__(self, dim: int, num_layers: int = 2, generator: torch.Generator | None = None):
        super().__init__()
        self.layers = nn.ModuleList(MLP([2 * dim, dim, dim], generator) for _ in range(num_layers))

    def forward(self, encoded: Tensor, mask: Tensor | None, group: int, k: int,
                counter: EdgeCounter | None = None) -> Tensor:
        proxies, pmask = group_means(encoded, mask, group)
        h = proxies
        for f_theta in self.layers:
            idx, valid = knn_indices(h, k, pmask)
            h = edge_conv(h, idx, f_theta, valid, counter)
        out = encoded + h.repeat_interleave(group, dim=-2)
        if mask is not None:
            out = torch.where(mask.unsqueeze(-1), out, torch.zeros_like(out))
        return out


def proxy_pipeline(encoded: Tensor, block: GraphBlock, group: int, k: int,
                   mask: Tensor | None = None, counter: EdgeCounter | None = None) -> Tensor:
    return block(encoded, mask, group, k, counter)
