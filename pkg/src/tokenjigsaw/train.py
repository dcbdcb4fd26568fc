"""Adam with warmup + cosine decay, global-norm clipping, and the training loop."""
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .model import ELEMENT_WISE, sequence_loss, shift_right
from .rng import derive_seed, make_rng


class NumericFailure(RuntimeError):
    """A step produced non-finite gradients or loss."""


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    min_lr: float = 1e-5
    warmup_steps: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    seed: int = 0
    log_every: int = 100


def lr_at(step, cfg):
    """Learning rate for the (1-based) update ``step``."""
    if cfg.warmup_steps and step <= cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    span = max(1, cfg.steps - cfg.warmup_steps)
    progress = min(1.0, (step - cfg.warmup_steps) / span)
    return cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    params: dict  # name -> parameter tensor, updated in place
    cfg: TrainConfig
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    last_lr: float = 0.0
    last_grad_norm: float = 0.0

    @classmethod
    def for_model(cls, model, cfg):
        params = dict(model.named_parameters())
        return cls(params=params, cfg=cfg,
                   m={k: torch.zeros_like(p) for k, p in params.items()},
                   v={k: torch.zeros_like(p) for k, p in params.items()})


def global_norm(grads):
    return math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))


def train_step(state, grads):
    """One clipped Adam update. Raises :class:`NumericFailure` (parameters
    untouched) when any gradient is non-finite."""
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise NumericFailure(f"non-finite gradient norm at step {state.step + 1}")
    cfg = state.cfg
    scale = min(1.0, cfg.clip_norm / (norm + 1e-12)) if cfg.clip_norm else 1.0
    state.step += 1
    t = state.step
    lr = lr_at(t, cfg)
    bc1 = 1 - cfg.beta1 ** t
    bc2 = 1 - cfg.beta2 ** t
    with torch.no_grad():
        for name, p in state.params.items():
            g = grads[name] * scale
            m, v = state.m[name], state.v[name]
            m.mul_(cfg.beta1).add_(g, alpha=1 - cfg.beta1)
            v.mul_(cfg.beta2).addcmul_(g, g, value=1 - cfg.beta2)
            if lr:
                p.sub_(lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps))
    state.last_lr = lr
    state.last_grad_norm = norm
    return state


# --- data -------------------------------------------------------------------

def pad_rows(rows, pad_id):
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), pad_id, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out


def target_sequence(enc, mcfg, sep_id=None):
    if mcfg.mode == ELEMENT_WISE:
        return enc.solved_sequence(sep_id)
    return enc.labels


def make_arrays(encoded, mcfg, sep_id=None):
    """Padded ``(src, targets)`` arrays for a list of encoded puzzles."""
    src = pad_rows([e.encoder_ids for e in encoded], mcfg.src_pad_id)
    tgt = pad_rows([target_sequence(e, mcfg, sep_id) for e in encoded], mcfg.tgt_pad_id)
    return src, tgt


def train_model(model, encoded, cfg, sep_id=None, log=None, on_step=None):
    """Train ``model`` in place on ``encoded`` puzzles; returns the loss trajectory.

    Batches are drawn epoch by epoch from a PCG64 permutation of the data;
    dropout masks come from a torch generator seeded from the same lineage.
    ``log`` is an optional writable text stream receiving JSON lines.
    """
    mcfg = model.cfg
    src, tgt = make_arrays(encoded, mcfg, sep_id)
    src_t = torch.from_numpy(src)
    tgt_t = torch.from_numpy(tgt)
    tgt_in_t = torch.from_numpy(shift_right(tgt, mcfg.tgt_bos_id))
    n = len(encoded)
    rng = make_rng(cfg.seed, "batches")
    torch.manual_seed(derive_seed(cfg.seed, "dropout"))
    state = OptimizerState.for_model(model, cfg)
    model.train()
    losses = []
    order, cursor = rng.permutation(n), 0
    t0 = time.time()
    for _ in range(cfg.steps):
        if cursor + cfg.batch_size > n:
            order, cursor = rng.permutation(n), 0
        idx = torch.from_numpy(order[cursor:cursor + cfg.batch_size])
        cursor += cfg.batch_size
        model.zero_grad(set_to_none=True)
        logits = model(src_t[idx], tgt_in_t[idx])
        loss = sequence_loss(logits, tgt_t[idx], mcfg.tgt_pad_id)
        if not torch.isfinite(loss):
            raise NumericFailure(f"non-finite loss at step {state.step + 1}")
        loss.backward()
        grads = {k: p.grad if p.grad is not None else torch.zeros_like(p)
                 for k, p in model.named_parameters()}
        train_step(state, grads)
        value = float(loss.detach())
        losses.append(value)
        if log is not None and (state.step % cfg.log_every == 0 or state.step == cfg.steps):
            log.write(json.dumps({"step": state.step, "loss": round(value, 6),
                                  "lr": state.last_lr, "grad_norm": round(state.last_grad_norm, 6)}) + "\n")
        if on_step is not None:
            on_step(state, value, time.time() - t0)
    model.eval()
    return losses
