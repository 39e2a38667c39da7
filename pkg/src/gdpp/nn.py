"""Differentiable building blocks.

Everything runs in float64. The functional forms (``linear``, ``mlp_relu``,
``lstm_encode``, ``multi_head_attention`` ...) hold the math; the thin
``nn.Module`` wrappers own parameters so that ``named_parameters()`` gives the
dot-separated checkpoint names.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
from torch import Tensor, nn

DTYPE = torch.float64


class ContractError(ValueError):
    """Raised when an operation's preconditions do not hold."""


def _uniform(shape, bound: float, generator: torch.Generator | None) -> Tensor:
    return (torch.rand(shape, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound


# ----------------------------------------------------------------------------
# functional forms
# ----------------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` with ``weight`` laid out [in, out]."""
    if x.shape[-1] != weight.shape[0]:
        raise ContractError(f"linear: trailing dim {x.shape[-1]} != in_dim {weight.shape[0]}")
    y = x @ weight
    if bias is not None:
        y = y + bias
    return y


def mlp_relu(x: Tensor, layers: Sequence[tuple[Tensor, Tensor]]) -> Tensor:
    for i, (w, b) in enumerate(layers):
        x = linear(x, w, b)
        if i < len(layers) - 1:
            x = torch.relu(x)
    return x


def embedding(codes: Tensor, table: Tensor) -> Tensor:
    codes = torch.as_tensor(codes, dtype=torch.long)
    if codes.numel() and (int(codes.min()) < 0 or int(codes.max()) >= table.shape[0]):
        raise ContractError(f"embedding: code outside vocabulary of size {table.shape[0]}")
    return table[codes]


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor):
    """One LSTM step; gate order is input, forget, cell, output."""
    gates = x @ w_ih + h @ w_hh + bias
    i, f, g, o = gates.chunk(4, dim=-1)
    c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
    h = torch.sigmoid(o) * torch.tanh(c)
    return h, c


def lstm_encode(seq: Tensor, layers: Sequence[tuple[Tensor, Tensor, Tensor]]) -> Tensor:
    """Run a stacked LSTM over ``seq`` [..., M, in] and return the last top-layer hidden state."""
    if seq.dim() < 2 or seq.shape[-2] < 1:
        raise ContractError("lstm_encode: need at least one time step")
    x = seq
    for w_ih, w_hh, bias in layers:
        if x.shape[-1] != w_ih.shape[0]:
            raise ContractError("lstm_encode: input dim mismatch")
        hidden = w_hh.shape[0]
        h = x.new_zeros(x.shape[:-2] + (hidden,))
        c = torch.zeros_like(h)
        outs = []
        for t in range(x.shape[-2]):
            h, c = lstm_cell(x[..., t, :], h, c, w_ih, w_hh, bias)
            outs.append(h)
        x = torch.stack(outs, dim=-2)
    return x[..., -1, :]


def masked_softmax(logits: Tensor, mask: Tensor | None, dim: int = -1) -> Tensor:
    if mask is None:
        return torch.softmax(logits, dim=dim)
    return torch.softmax(logits.masked_fill(~mask, float("-inf")), dim=dim)


@dataclass(frozen=True)
class AttentionConfig:
    model_dim: int
    num_heads: int

    def __post_init__(self) -> None:
        if self.model_dim <= 0 or self.num_heads <= 0 or self.model_dim % self.num_heads:
            raise ContractError(f"num_heads {self.num_heads} must divide model_dim {self.model_dim}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


def multi_head_attention(
    queries: Tensor,
    keys: Tensor,
    values: Tensor,
    config: AttentionConfig,
    params: dict[str, Tensor],
    mask: Tensor | None = None,
    *,
    empty: str = "raise",
    return_weights: bool = False,
):
    """Scaled dot-product attention with learned Q/K/V and output projections.

    Shapes: ``queries`` [..., Tq, d], ``keys``/``values`` [..., Tk, d], ``mask``
    [..., Tk] with True for valid keys. ``params`` holds ``wq, bq, wk, bk, wv,
    bv, wo, bo``. With ``empty="zero"`` a query whose keys are all masked gets
    a zero output instead of raising.
    """
    d = config.model_dim
    if queries.shape[-1] != d or keys.shape[-1] != d or values.shape[-1] != d:
        raise ContractError("multi_head_attention: feature dim != model_dim")
    if keys.shape[-2] != values.shape[-2]:
        raise ContractError("multi_head_attention: keys and values differ in length")
    any_valid = None
    if mask is not None:
        mask = mask.to(torch.bool)
        any_valid = mask.any(dim=-1)
        if not bool(any_valid.all()):
            if empty == "raise":
                raise ContractError("multi_head_attention: all keys masked for some query")
            mask = mask | ~any_valid[..., None]
        keys = keys.masked_fill(~mask[..., None], 0.0)
        values = values.masked_fill(~mask[..., None], 0.0)

    h, dk = config.num_heads, config.head_dim

    def split(x: Tensor) -> Tensor:  # [..., T, d] -> [..., h, T, dk]
        return x.reshape(x.shape[:-1] + (h, dk)).transpose(-3, -2)

    q = split(linear(queries, params["wq"], params["bq"]))
    k = split(linear(keys, params["wk"], params["bk"]))
    v = split(linear(values, params["wv"], params["bv"]))
    logits = q @ k.transpose(-1, -2) / math.sqrt(dk)  # [..., h, Tq, Tk]
    head_mask = None if mask is None else mask[..., None, None, :]
    weights = masked_softmax(logits, head_mask)
    out = (weights @ v).transpose(-3, -2)  # [..., Tq, h, dk]
    out = out.reshape(out.shape[:-2] + (d,))
    out = linear(out, params["wo"], params["bo"])
    if any_valid is not None and not bool(any_valid.all()):
        out = out * any_valid[..., None, None].to(out.dtype)
        weights = weights * any_valid[..., None, None, None].to(weights.dtype)
    if return_weights:
        return out, weights
    return out


def masked_max(x: Tensor, mask: Tensor | None, dim: int) -> Tensor:
    """Elementwise max over ``dim`` ignoring masked entries; all-masked slices give 0."""
    if mask is None:
        return x.max(dim=dim).values
    m = mask
    while m.dim() < x.dim():
        m = m.unsqueeze(-1)
    filled = x.masked_fill(~m, float("-inf"))
    out = filled.max(dim=dim).values
    any_valid = m.any(dim=dim)
    return torch.where(any_valid, out, torch.zeros_like(out))


# ----------------------------------------------------------------------------
# parameter-owning modules
# ----------------------------------------------------------------------------


class Linear(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, generator: torch.Generator | None = None):
        super().__init__()
        bound = math.sqrt(1.0 / in_dim)
        self.weight = nn.Parameter(_uniform((in_dim, out_dim), bound, generator))
        self.bias = nn.Parameter(torch.zeros(out_dim, dtype=DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class MLP(nn.Module):
    """Linear layers with ReLU between them; the last layer is linear."""

    def __init__(self, dims: Sequence[int], generator: torch.Generator | None = None):
        super().__init__()
        if len(dims) < 2:
            raise ContractError("MLP needs at least input and output dims")
        self.dims = tuple(dims)
        self.layers = nn.ModuleList(
            Linear(a, b, generator) for a, b in zip(dims[:-1], dims[1:])
        )

    def forward(self, x: Tensor) -> Tensor:
        return mlp_relu(x, [(layer.weight, layer.bias) for layer in self.layers])


class Embedding(nn.Module):
    def __init__(self, vocab: int, dim: int, generator: torch.Generator | None = None):
        super().__init__()
        self.weight = nn.Parameter(torch.randn((vocab, dim), generator=generator, dtype=DTYPE))

    def forward(self, codes: Tensor) -> Tensor:
        return embedding(codes, self.weight)


class LSTM(nn.Module):
    def __init__(self, in_dim: int, hidden: int, num_layers: int = 2,
                 generator: torch.Generator | None = None):
        super().__init__()
        bound = math.sqrt(1.0 / hidden)
        self.hidden = hidden
        self.w_ih = nn.ParameterList()
        self.w_hh = nn.ParameterList()
        self.bias = nn.ParameterList()
        for layer in range(num_layers):
            d_in = in_dim if layer == 0 else hidden
            self.w_ih.append(nn.Parameter(_uniform((d_in, 4 * hidden), bound, generator)))
            self.w_hh.append(nn.Parameter(_uniform((hidden, 4 * hidden), bound, generator)))
            self.bias.append(nn.Parameter(torch.zeros(4 * hidden, dtype=DTYPE)))

    def layer_params(self):
        return list(zip(self.w_ih, self.w_hh, self.bias))

    def forward(self, seq: Tensor) -> Tensor:
        return lstm_encode(seq, self.layer_params())


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int, generator: torch.Generator | None = None):
        super().__init__()
        self.config = AttentionConfig(dim, heads)
        bound = math.sqrt(1.0 / dim)
        for name in ("q", "k", "v", "o"):
            setattr(self, f"w{name}", nn.Parameter(_uniform((dim, dim), bound, generator)))
            setattr(self, f"b{name}", nn.Parameter(torch.zeros(dim, dtype=DTYPE)))

    def params(self) -> dict[str, Tensor]:
        return {n: getattr(self, n) for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}

    def forward(self, queries, keys, values, mask=None, *, empty="raise", return_weights=False):
        return multi_head_attention(queries, keys, values, self.config, self.params(), mask,
                                    empty=empty, return_weights=return_weights)


class SelfAttentionEncoder(nn.Module):
    """Stack of self-attention layers applied sequentially with residual connections (no norm)."""

    def __init__(self, dim: int, heads: int, num_layers: int = 2,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.layers = nn.ModuleList(MultiHeadAttention(dim, heads, generator) for _ in range(num_layers))

    def forward(self, x: Tensor, mask: Tensor | None = None) -> Tensor:
        for layer in self.layers:
            y = layer(x, x, x, mask, empty="zero")
            x = x + y
        return x


# ----------------------------------------------------------------------------
# finite-difference gradient check
# ----------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    checked: int
    worst: str

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


class NondeterministicClosure(RuntimeError):
    pass


def grad_check(
    closure: Callable[[], Tensor],
    params: Sequence[Tensor] | dict[str, Tensor],
    tolerance: float,
    *,
    step: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare autograd gradients of ``closure()`` with central differences.

    ``params`` are leaf tensors requiring grad that ``closure`` reads. The
    relative error of a coordinate is ``|g - n| / max(|g|, |n|, floor)``.
    With ``max_coords`` set, a seeded random subset of coordinates is checked.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(str(i), p) for i, p in enumerate(params)]
    for _, p in named:
        p.grad = None
    with torch.enable_grad():
        loss = closure()
        grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    base = float(loss.detach())
    with torch.no_grad():
        again = float(closure())
    if again != base:
        raise NondeterministicClosure(f"closure returned {base!r} then {again!r}")

    coords = [(ni, j) for ni, (_, p) in enumerate(named) for j in range(p.numel())]
    if max_coords is not None and len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    worst_err, worst = 0.0, ""
    with torch.no_grad():
        for ni, j in coords:
            name, p = named[ni]
            flat = p.view(-1)
            orig = float(flat[j])
            flat[j] = orig + step
            up = float(closure())
            flat[j] = orig - step
            down = float(closure())
            flat[j] = orig
            numeric = (up - down) / (2.0 * step)
            g = grads[ni]
            analytic = 0.0 if g is None else float(g.reshape(-1)[j])
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            if err > worst_err:
                worst_err, worst = err, f"{name}[{j}]: autograd={analytic:.6g} fd={numeric:.6g}"
    return GradCheckReport(worst_err, tolerance, len(coords), worst)
