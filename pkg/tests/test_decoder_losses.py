import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gdpp.config import LossWeights, ModelConfig
from gdpp.decoder import Decoder, bicycle_rollout
from gdpp.losses import (
    ade_loss, fde_loss, joint_mode_errors, prediction_loss, score_loss, select_best_mode, smooth_l1,
    total_loss,
)
from gdpp.model import ModelOutput
from gdpp.nn import DTYPE


def _gen(seed=0):
    return torch.Generator().manual_seed(seed)


# --------------------------------------------------------------------------- bicycle


def test_straight_line_rollout_is_exact():
    traj = bicycle_rollout(torch.tensor([0.0, 0.0, 0.0, 10.0]), torch.zeros(50, 2), 0.1, 2.8)
    np.testing.assert_array_equal(traj[:, 0].numpy(), 10.0 * 0.1 * np.arange(1, 51))
    assert bool((traj[:, 1:] == 0).all())


def test_constant_acceleration_speed():
    _, v = bicycle_rollout(torch.tensor([0.0, 0.0, 0.0, 0.0]), torch.tensor([[1.0, 0.0]] * 10), 0.1, 2.8,
                           return_speed=True)
    np.testing.assert_allclose(v.numpy(), 0.1 * np.arange(1, 11), atol=1e-15)


@pytest.mark.parametrize("steer", [0.05, 0.1, 0.2, 0.4])
def test_constant_steer_circle_radius(steer):
    wb, dt, v = 2.8, 0.1, 5.0
    radius = wb / math.tan(steer)
    steps = int(2 * math.pi * radius / (v * dt))
    traj = bicycle_rollout(torch.tensor([0.0, 0.0, 0.0, v]), torch.tensor([[0.0, steer]] * steps), dt, wb)
    pts = np.concatenate([[[0.0, 0.0]], traj[:, :2].numpy()])
    # algebraic circle fit: x^2 + y^2 + D x + E y + F = 0
    A = np.column_stack([pts[:, 0], pts[:, 1], np.ones(len(pts))])
    D, E, F = np.linalg.lstsq(A, -(pts ** 2).sum(1), rcond=None)[0]
    fitted = math.sqrt(D * D / 4 + E * E / 4 - F)
    assert abs(fitted - radius) / radius < 0.02


def test_rollout_is_causal():
    u = torch.randn(20, 2, generator=_gen(), dtype=DTYPE) * 0.3
    start = torch.tensor([1.0, 2.0, 0.3, 4.0])
    base = bicycle_rollout(start, u, 0.1, 2.8)
    changed = u.clone()
    changed[12] += 1.0
    other = bicycle_rollout(start, changed, 0.1, 2.8)
    # control t first moves the heading of pose t, positions only from pose t + 1
    assert torch.equal(base[:12], other[:12])
    assert torch.equal(base[12, :2], other[12, :2])
    assert not torch.equal(base[12:], other[12:])


def test_rollout_rejects_bad_wheelbase():
    with pytest.raises(ValueError):
        bicycle_rollout(torch.zeros(4), torch.zeros(3, 2), 0.1, 0.0)


def test_decoder_shapes_and_control_bounds():
    cfg = ModelConfig.desk()
    dec = Decoder(cfg, _gen())
    ctx = torch.randn(2, cfg.neighbors + 1, cfg.modes, 2 * cfg.dim, generator=_gen(1), dtype=DTYPE) * 50
    u = dec.decode_ego(ctx[:, 0])
    assert u.shape == (2, cfg.modes, cfg.future, 2)
    u = u.detach()
    assert float(u[..., 0].abs().max()) <= cfg.max_accel and float(u[..., 1].abs().max()) <= cfg.max_steer
    assert dec.decode_neighbors(ctx[:, 1:]).shape == (2, cfg.modes, cfg.neighbors, cfg.future, 3)
    mask = torch.ones(2, cfg.neighbors + 1, dtype=torch.bool)
    probs, logits = dec.score_modes(ctx, mask)
    assert probs.shape == (2, cfg.modes)
    assert torch.allclose(probs.sum(-1), torch.ones(2, dtype=DTYPE), atol=1e-12)


def test_mode_scorer_ignores_padded_agents():
    cfg = ModelConfig.desk()
    dec = Decoder(cfg, _gen())
    ctx = torch.randn(1, 5, cfg.modes, 2 * cfg.dim, generator=_gen(1), dtype=DTYPE)
    mask = torch.tensor([[True, True, False, True, False]])
    poisoned = ctx.clone()
    poisoned[:, ~mask[0]] = 1e6
    assert torch.equal(dec.score_modes(ctx, mask)[0], dec.score_modes(poisoned, mask)[0])


# --------------------------------------------------------------------------- loss oracles


def _loop_dist(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def oracle_joint_errors(ego, nbr, gt, mask):
    X, N = len(ego), len(ego[0])
    out = []
    for x in range(X):
        e = sum(_loop_dist(ego[x][t], gt[0][t]) for t in range(N)) / N
        for k in range(len(nbr[x])):
            if mask[k + 1]:
                e += sum(_loop_dist(nbr[x][k][t], gt[k + 1][t]) for t in range(N)) / N
        out.append(e)
    return out


def oracle_prediction_loss(pred, gt, mask):
    total, count = 0.0, 0
    for k in range(len(pred)):
        if not mask[k]:
            continue
        for t in range(len(pred[k])):
            for c in range(3):
                d = abs(pred[k][t][c] - gt[k][t][c])
                total += 0.5 * d * d if d < 1.0 else d - 0.5
                count += 1
    return total / max(count, 1)


def oracle_ade(plan, gt, dt, horizon):
    return sum(_loop_dist(p, g) * dt for p, g in zip(plan, gt)) / horizon


def _random_case(seed, B=1):
    g = _gen(seed)
    X = int(torch.randint(1, 4, (1,), generator=g))
    K = int(torch.randint(0, 4, (1,), generator=g))
    N = int(torch.randint(1, 6, (1,), generator=g))
    ego = torch.randn(B, X, N, 3, generator=g, dtype=DTYPE) * 2
    nbr = torch.randn(B, X, K, N, 3, generator=g, dtype=DTYPE) * 2
    gt = torch.randn(B, K + 1, N, 3, generator=g, dtype=DTYPE) * 2
    mask = torch.rand(B, K + 1, generator=g) < 0.7
    mask[:, 0] = True
    logits = torch.randn(B, X, generator=g, dtype=DTYPE)
    return ego, nbr, gt, mask, logits


@pytest.mark.parametrize("seed", range(100))
def test_losses_match_scalar_oracles(seed):
    ego, nbr, gt, mask, logits = _random_case(seed)
    N = ego.shape[-2]
    errs = joint_mode_errors(ego, nbr, gt, mask)[0].tolist()
    oracle = oracle_joint_errors(ego[0].tolist(), nbr[0].tolist(), gt[0].tolist(), mask[0].tolist())
    np.testing.assert_allclose(errs, oracle, rtol=0, atol=1e-12)
    best = int(select_best_mode(ego, nbr, gt, mask))
    assert best == min(range(len(oracle)), key=lambda x: (oracle[x], x))

    pred = float(prediction_loss(nbr[:, best], gt[:, 1:], mask[:, 1:]))
    assert abs(pred - oracle_prediction_loss(nbr[0, best].tolist(), gt[0, 1:].tolist(), mask[0, 1:].tolist())) <= 1e-12

    probs = torch.softmax(logits, -1)
    assert abs(float(score_loss(probs, torch.tensor([best]))) + math.log(float(probs[0, best]))) <= 1e-12

    dt, horizon = 0.1, N * 0.1
    ade = float(ade_loss(ego[:, best], gt[:, 0], dt, horizon))
    assert abs(ade - oracle_ade(ego[0, best].tolist(), gt[0, 0].tolist(), dt, horizon)) <= 1e-12
    fde = float(fde_loss(ego[:, best], gt[:, 0]))
    assert abs(fde - _loop_dist(ego[0, best, -1].tolist(), gt[0, 0, -1].tolist())) <= 1e-12


def test_ade_constant_offset_is_exactly_one():
    gt = torch.zeros(1, 50, 3)
    plan = gt.clone()
    plan[..., 0] = 1.0
    assert float(ade_loss(plan, gt, 0.1, 5.0)) == 1.0


def test_smooth_l1_branches():
    x = torch.tensor([-2.0, -0.5, 0.0, 0.5, 1.0, 3.0])
    np.testing.assert_array_equal(smooth_l1(x).numpy(), [1.5, 0.125, 0.0, 0.125, 0.5, 2.5])


def test_score_loss_floor_keeps_it_finite():
    assert math.isfinite(float(score_loss(torch.tensor([[1.0, 0.0]]), torch.tensor([1]))))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_mode_selection_matches_enumeration(seed):
    ego, nbr, gt, mask, _ = _random_case(seed)
    X = ego.shape[1]
    costs = []
    for x in range(X):
        c = torch.linalg.vector_norm(ego[0, x, :, :2] - gt[0, 0, :, :2], dim=-1).mean()
        for k in range(nbr.shape[2]):
            if mask[0, k + 1]:
                c = c + torch.linalg.vector_norm(nbr[0, x, k, :, :2] - gt[0, k + 1, :, :2], dim=-1).mean()
        costs.append(float(c))
    assert int(select_best_mode(ego, nbr, gt, mask)) == min(range(X), key=lambda x: (costs[x], x))


def test_mode_selection_tie_goes_to_lowest_index():
    ego = torch.zeros(1, 3, 2, 3)
    nbr = torch.zeros(1, 3, 1, 2, 3)
    gt = torch.ones(1, 2, 2, 3)
    assert int(select_best_mode(ego, nbr, gt, torch.ones(1, 2, dtype=torch.bool))) == 0


def test_total_loss_weights_and_breakdown():
    ego, nbr, gt, mask, logits = _random_case(5, B=3)

    class _Batch:
        pass

    batch = _Batch()
    batch.gt, batch.agent_mask = gt, mask
    out = ModelOutput(None, ego, nbr, torch.softmax(logits, -1), logits)
    w = LossWeights(prediction=0.5, score=1.0, ade=1.0, fde=1.0, horizon=ego.shape[-2] * 0.1)
    mean, parts = total_loss(out, batch, w)
    manual = 0.5 * parts.pred + parts.score + parts.ade + parts.fde
    assert torch.allclose(parts.total, manual, rtol=0, atol=1e-15)
    assert abs(float(mean) - float(manual.mean())) <= 1e-15
    for combo in itertools.product([0.0, 2.0], repeat=4):
        ww = LossWeights(*combo, horizon=w.horizon)
        _, p = total_loss(out, batch, ww)
        expected = combo[0] * p.pred + combo[1] * p.score + combo[2] * p.ade + combo[3] * p.fde
        assert torch.allclose(p.total, expected, rtol=0, atol=1e-15)


def test_prediction_loss_ignores_padded_neighbors():
    pred = torch.zeros(1, 2, 3, 3)
    gt = torch.zeros(1, 2, 3, 3)
    gt[0, 1] = 1e6
    assert float(prediction_loss(pred, gt, torch.tensor([[True, False]]))) == 0.0


def test_rollout_from_rest_matches_euler_sum():
    traj, v = bicycle_rollout(torch.zeros(4), torch.tensor([[2.0, 0.0]] * 50), 0.1, 2.8, return_speed=True)
    speeds = 0.2 * np.arange(50)  # speed used for each position update
    assert abs(float(v[-1]) - 10.0) <= 1e-12
    assert abs(float(traj[-1, 0]) - float(np.sum(speeds * 0.1))) <= 1e-12


def test_final_position_gradient_wrt_first_acceleration():
    u = (torch.randn(20, 2, generator=_gen(4), dtype=DTYPE) * 0.2).requires_grad_(True)
    start = torch.tensor([0.0, 0.0, 0.1, 5.0])
    final = lambda controls: bicycle_rollout(start, controls, 0.1, 2.8)[-1, 0]
    (grad,) = torch.autograd.grad(final(u), u)
    h = 1e-6
    up, down = u.detach().clone(), u.detach().clone()
    up[0, 0] += h
    down[0, 0] -= h
    numeric = (float(final(up)) - float(final(down))) / (2 * h)
    assert abs(float(grad[0, 0]) - numeric) / abs(numeric) <= 1e-4


def _zeroed(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def test_zero_parameter_decoders_and_weight_sharing():
    cfg = ModelConfig.desk(decoder_hidden=16)
    dec = _zeroed(Decoder(cfg, _gen()))
    ctx = torch.randn(2, 3, cfg.modes, 2 * cfg.dim, generator=_gen(1), dtype=DTYPE)
    assert bool((dec.decode_ego(ctx[:, 0]) == 0).all())
    assert bool((dec.decode_neighbors(ctx[:, 1:]) == 0).all())
    probs, _ = dec.score_modes(ctx)
    assert torch.allclose(probs, torch.full_like(probs, 1 / 3), rtol=0, atol=1e-15)

    dec = Decoder(cfg, _gen(2))
    same = ctx.clone()
    same[:, :, 1] = same[:, :, 0]
    same[:, 2] = same[:, 1]
    u = dec.decode_ego(same[:, 0])
    assert torch.equal(u[:, 0], u[:, 1])
    nbr = dec.decode_neighbors(same[:, 1:])
    assert torch.equal(nbr[:, :, 0], nbr[:, :, 1])


def test_scorer_with_single_agent_is_mlp_on_ego():
    cfg = ModelConfig.desk(decoder_hidden=16)
    dec = Decoder(cfg, _gen())
    ctx = torch.randn(1, 1, cfg.modes, 2 * cfg.dim, generator=_gen(1), dtype=DTYPE)
    with torch.no_grad():
        probs, logits = dec.score_modes(ctx)
        expected = dec.score(ctx[0, 0]).squeeze(-1)
    assert torch.allclose(logits[0], expected, rtol=0, atol=1e-14)
    assert abs(float(probs.sum()) - 1.0) <= 1e-12
