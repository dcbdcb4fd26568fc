import io
import json
import math

import numpy as np
import pytest
import torch

from tokenjigsaw.model import ModelConfig, init_params
from tokenjigsaw.tokenizer import encode_many
from tokenjigsaw.train import (NumericFailure, OptimizerState, TrainConfig, global_norm, lr_at,
                               make_arrays, train_model, train_step)

from conftest import small_puzzles


def _params(values):
    return {"w": torch.nn.Parameter(torch.tensor(values, dtype=torch.float64))}


def test_zero_gradients_leave_parameters():
    params = _params([1.0, -2.0, 3.0])
    state = OptimizerState(params, TrainConfig(steps=10, warmup_steps=0),
                           m={"w": torch.zeros(3, dtype=torch.float64)},
                           v={"w": torch.zeros(3, dtype=torch.float64)})
    for _ in range(5):
        train_step(state, {"w": torch.zeros(3, dtype=torch.float64)})
    assert params["w"].tolist() == [1.0, -2.0, 3.0]


def test_zero_learning_rate_leaves_parameters():
    params = _params([0.5, 0.25])
    cfg = TrainConfig(steps=10, lr=0.0, min_lr=0.0, warmup_steps=2)
    state = OptimizerState(params, cfg, m={"w": torch.zeros(2, dtype=torch.float64)},
                           v={"w": torch.zeros(2, dtype=torch.float64)})
    for _ in range(10):
        train_step(state, {"w": torch.ones(2, dtype=torch.float64)})
    assert params["w"].tolist() == [0.5, 0.25]


def test_quadratic_converges():
    target = torch.tensor([3.0, -1.0, 0.5], dtype=torch.float64)
    params = _params([0.0, 0.0, 0.0])
    cfg = TrainConfig(steps=2000, lr=0.05, min_lr=1e-4, warmup_steps=20, clip_norm=0.0)
    state = OptimizerState(params, cfg, m={"w": torch.zeros(3, dtype=torch.float64)},
                           v={"w": torch.zeros(3, dtype=torch.float64)})
    for _ in range(cfg.steps):
        grad = 2 * (params["w"].detach() - target)
        train_step(state, {"w": grad})
    assert torch.allclose(params["w"].detach(), target, atol=1e-3)


def test_first_adam_step_size():
    # bias-corrected Adam moves each coordinate by ~lr on step one
    params = _params([0.0, 0.0])
    cfg = TrainConfig(steps=100, lr=0.01, warmup_steps=0, clip_norm=0.0)
    state = OptimizerState(params, cfg, m={"w": torch.zeros(2, dtype=torch.float64)},
                           v={"w": torch.zeros(2, dtype=torch.float64)})
    train_step(state, {"w": torch.tensor([0.3, -7.0], dtype=torch.float64)})
    lr = lr_at(1, cfg)
    np.testing.assert_allclose(params["w"].detach().numpy(), [-lr, lr], rtol=1e-6)


def test_non_finite_gradient_rejected():
    params = _params([1.0, 2.0])
    state = OptimizerState(params, TrainConfig(), m={"w": torch.zeros(2, dtype=torch.float64)},
                           v={"w": torch.zeros(2, dtype=torch.float64)})
    for bad in (float("nan"), float("inf")):
        with pytest.raises(NumericFailure):
            train_step(state, {"w": torch.tensor([bad, 0.0], dtype=torch.float64)})
    assert params["w"].tolist() == [1.0, 2.0] and state.step == 0


def test_gradient_clipping():
    grads = {"a": torch.tensor([3.0, 4.0]), "b": torch.tensor([12.0])}
    assert global_norm(grads) == pytest.approx(13.0)
    params = {"a": torch.nn.Parameter(torch.zeros(2)), "b": torch.nn.Parameter(torch.zeros(1))}
    cfg = TrainConfig(steps=10, warmup_steps=0, clip_norm=1.0)
    state = OptimizerState.for_model(type("M", (), {"named_parameters": lambda self: params.items()})(), cfg)
    train_step(state, grads)
    # first moment holds (1 - beta1) times the clipped gradient
    np.testing.assert_allclose(state.m["a"].numpy(), 0.1 * np.array([3, 4]) / 13, rtol=1e-5)
    assert state.last_grad_norm == pytest.approx(13.0)


def test_schedule_shape():
    cfg = TrainConfig(steps=1000, lr=1e-3, min_lr=1e-5, warmup_steps=100)
    assert lr_at(1, cfg) == pytest.approx(1e-5)
    assert lr_at(100, cfg) == pytest.approx(1e-3)
    assert lr_at(1000, cfg) == pytest.approx(1e-5)
    mid = lr_at(550, cfg)
    assert mid == pytest.approx(1e-5 + 0.5 * (1e-3 - 1e-5))
    values = [lr_at(s, cfg) for s in range(100, 1001)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def _tiny_run(tiny_codebook, steps=60, seed=0):
    encoded = encode_many(tiny_codebook, small_puzzles(12))
    mcfg = ModelConfig.index_wise(tiny_codebook.config, 9, d_model=16, n_heads=2, n_enc_layers=1,
                                  n_dec_layers=1, d_ff=32, dropout_rate=0.1)
    model = init_params(mcfg, 0)
    log = io.StringIO()
    cfg = TrainConfig(steps=steps, batch_size=4, lr=3e-3, warmup_steps=5, seed=seed, log_every=10)
    losses = train_model(model, encoded, cfg, log=log)
    return model, losses, log.getvalue()


def test_train_model_learns_and_is_deterministic(tiny_codebook):
    model, losses, log = _tiny_run(tiny_codebook)
    assert len(losses) == 60
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
    rows = [json.loads(line) for line in log.splitlines()]
    assert [r["step"] for r in rows] == [10, 20, 30, 40, 50, 60]
    assert set(rows[0]) == {"step", "loss", "lr", "grad_norm"}
    again, losses2, log2 = _tiny_run(tiny_codebook)
    assert losses == losses2 and log == log2
    for pa, pb in zip(model.parameters(), again.parameters()):
        assert torch.equal(pa, pb)
    assert not model.training


def test_make_arrays_padding(tiny_codebook):
    encoded = encode_many(tiny_codebook, small_puzzles(3))
    mcfg = ModelConfig.index_wise(tiny_codebook.config, 9)
    src, tgt = make_arrays(encoded, mcfg)
    assert src.shape == (3, 9 * 4 + 8) and tgt.shape == (3, 9)
    ecfg = ModelConfig.element_wise(tiny_codebook.config, 9)
    _, tgt_e = make_arrays(encoded, ecfg, tiny_codebook.config.sep_id)
    np.testing.assert_array_equal(tgt_e[0], encoded[0].solved_sequence(tiny_codebook.config.sep_id))
    assert math.isclose(lr_at(0, TrainConfig()), 0.0)
