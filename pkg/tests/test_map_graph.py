import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gdpp.map_graph import (
    EdgeCounter, GraphBlock, build_knn_graph, edge_conv, group_means, knn_indices, proxy_pipeline,
)
from gdpp.nn import DTYPE, MLP, ContractError


def _gen(seed=0):
    return torch.Generator().manual_seed(seed)


def brute_force_knn(points: np.ndarray, k: int) -> list[list[int]]:
    """Self first, then the k-1 closest others by squared distance, ties to the lower index."""
    out = []
    for i, p in enumerate(points):
        others = sorted((float(np.sum((p - q) ** 2)), j) for j, q in enumerate(points) if j != i)
        out.append([i] + [j for _, j in others[: k - 1]])
    return out


@settings(max_examples=60, deadline=None)
@given(L=st.integers(1, 30), F=st.integers(1, 5), seed=st.integers(0, 10_000), data=st.data())
def test_knn_matches_brute_force(L, F, seed, data):
    k = data.draw(st.integers(1, L))
    pts = np.random.default_rng(seed).integers(-3, 4, size=(L, F)).astype(float)  # many ties
    graph = build_knn_graph(torch.from_numpy(pts), k)
    assert graph.neighbors.tolist() == brute_force_knn(pts, k)


def test_knn_rejects_oversized_k():
    with pytest.raises(ContractError):
        build_knn_graph(torch.zeros(3, 2), 4)


def test_knn_never_picks_masked_vertices():
    x = torch.randn(6, 3, generator=_gen(), dtype=DTYPE)
    mask = torch.tensor([True, False, True, True, False, True])
    idx, valid = knn_indices(x, 3, mask)
    picked = idx[mask][valid[mask]]
    assert bool(mask[picked].all())


def test_graph_csv_export(tmp_path):
    graph = build_knn_graph(torch.tensor([[0.0], [1.0], [3.0]]), 2)
    graph.to_csv(tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text().splitlines() == ["src,dst", "0,0", "0,1", "1,1", "1,0", "2,2", "2,1"]


@settings(max_examples=30, deadline=None)
@given(L=st.integers(2, 12), seed=st.integers(0, 10_000), data=st.data())
def test_edge_conv_neighbor_order_invariance(L, seed, data):
    k = data.draw(st.integers(1, L))
    g = _gen(seed)
    f = MLP([8, 6, 4], g)
    x = torch.randn(L, 4, generator=g, dtype=DTYPE)
    idx = build_knn_graph(x, k).neighbors
    perm = torch.randperm(k, generator=g)
    assert torch.equal(edge_conv(x, idx, f), edge_conv(x, idx[:, perm], f))


def test_edge_conv_self_loop_floor():
    for seed in range(100):
        g = _gen(seed)
        L = int(torch.randint(2, 15, (1,), generator=g))
        k = int(torch.randint(1, L + 1, (1,), generator=g))
        f = MLP([6, 5, 3], g)
        x = torch.randn(L, 3, generator=g, dtype=DTYPE)
        out = edge_conv(x, build_knn_graph(x, k).neighbors, f)
        floor = f(torch.cat([x, torch.zeros_like(x)], dim=-1))
        assert bool((out >= floor).all())


def test_edge_conv_matches_loop_oracle():
    g = _gen(3)
    f = MLP([4, 5, 3], g)
    x = torch.randn(5, 2, generator=g, dtype=DTYPE)
    idx = build_knn_graph(x, 3).neighbors
    out = edge_conv(x, idx, f)
    for i in range(5):
        rows = torch.stack([f(torch.cat([x[i], x[i] - x[j]])) for j in idx[i].tolist()])
        assert torch.allclose(out[i], rows.max(dim=0).values, rtol=0, atol=1e-14)


def test_group_means_and_mask():
    x = torch.arange(8.0).reshape(4, 2)
    mask = torch.tensor([True, True, True, False])
    means, gmask = group_means(x, mask, 2)
    np.testing.assert_array_equal(means.numpy(), [[1.0, 2.0], [4.0, 5.0]])
    assert gmask.tolist() == [True, True]
    with pytest.raises(ContractError):
        group_means(x, None, 3)


@pytest.mark.parametrize("L,l,k", [(50, 10, 5), (20, 4, 4)])
def test_edge_counter_counts_proxy_edges(L, l, k):
    block = GraphBlock(8, generator=_gen())
    counter = EdgeCounter()
    proxy_pipeline(torch.randn(L, 8, generator=_gen(1), dtype=DTYPE), block, l, k, counter=counter)
    assert counter.per_layer == [(L // l) * k] * 2


def test_proxy_pipeline_shortcut_and_padding():
    block = GraphBlock(4, generator=_gen())
    x = torch.randn(2, 8, 4, generator=_gen(1), dtype=DTYPE)
    mask = torch.ones(2, 8, dtype=torch.bool)
    mask[1, 5:] = False
    out = block(x, mask, 2, 2)
    assert out.shape == x.shape
    assert bool((out[1, 5:] == 0).all())
    # duplicated proxies: within a group the residual is shared
    diff = out[0] - x[0]
    assert torch.allclose(diff[0], diff[1], rtol=0, atol=1e-14)
    assert torch.allclose(diff[6], diff[7], rtol=0, atol=1e-14)
    poisoned = x.clone()
    poisoned[1, 5:] = 1e6
    assert torch.equal(block(poisoned, mask, 2, 2), out)


def test_fully_masked_polyline_yields_zeros():
    block = GraphBlock(4, generator=_gen())
    x = torch.randn(8, 4, generator=_gen(1), dtype=DTYPE)
    out = block(x, torch.zeros(8, dtype=torch.bool), 2, 2)
    assert bool((out == 0).all())
