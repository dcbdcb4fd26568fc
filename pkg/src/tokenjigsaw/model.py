"""Pre-norm encoder-decoder transformer over puzzle tokens.

Reverse-mode gradients come from torch autograd; every parameter is created
from a PCG64 stream so initialisation does not depend on torch's RNG.
"""
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import container
from .rng import make_rng

CHECKPOINT_MAGIC = b"PZCK\x00\x01\x00\x00"
INDEX_WISE = "index_wise"
ELEMENT_WISE = "element_wise"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_in: int
    vocab_out: int
    d_model: int = 128
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 512
    max_src_len: int = 64
    max_tgt_len: int = 16
    dropout_rate: float = 0.1
    src_pad_id: int = -1
    tgt_bos_id: int = 0
    tgt_pad_id: int = 0
    mode: str = INDEX_WISE
    n_positions: int = 0  # grid cells addressable in index-wise mode
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ModelError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.mode not in (INDEX_WISE, ELEMENT_WISE):
            raise ModelError(f"unknown mode {self.mode!r}")

    @property
    def head_dim(self):
        return self.d_model // self.n_heads

    @property
    def torch_dtype(self):
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]

    @classmethod
    def index_wise(cls, tok_cfg, n_pieces, **kw):
        """Output vocabulary: grid positions ``0..N-1``, then BOS, then PAD."""
        kw.setdefault("max_src_len", tok_cfg.encoder_length(n_pieces))
        kw.setdefault("max_tgt_len", n_pieces)
        return cls(vocab_in=tok_cfg.vocab_in, vocab_out=n_pieces + 2, src_pad_id=tok_cfg.pad_id,
                   tgt_bos_id=n_pieces, tgt_pad_id=n_pieces + 1, mode=INDEX_WISE,
                   n_positions=n_pieces, **kw)

    @classmethod
    def element_wise(cls, tok_cfg, n_pieces, **kw):
        """Output vocabulary shared with the input: content ids plus specials."""
        length = tok_cfg.encoder_length(n_pieces)
        kw.setdefault("max_src_len", length)
        kw.setdefault("max_tgt_len", length)
        return cls(vocab_in=tok_cfg.vocab_in, vocab_out=tok_cfg.vocab_in, src_pad_id=tok_cfg.pad_id,
                   tgt_bos_id=tok_cfg.bos_id, tgt_pad_id=tok_cfg.pad_id, mode=ELEMENT_WISE,
                   n_positions=n_pieces, **kw)


def sinusoid_table(length, d_model):
    pos = np.arange(length)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return torch.from_numpy(table)


class Attention(nn.Module):
    def __init__(self, d_model, n_heads):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)

    def forward(self, x, mem, mask):
        # mask: broadcastable to (B, H, Lq, Lk), True where attention is allowed
        B, Lq, D = x.shape
        Lk = mem.shape[1]
        h = self.n_heads
        q = self.q(x).view(B, Lq, h, D // h).transpose(1, 2)
        k = self.k(mem).view(B, Lk, h, D // h).transpose(1, 2)
        v = self.v(mem).view(B, Lk, h, D // h).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(D // h)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        att = torch.softmax(scores, dim=-1)
        return self.o((att @ v).transpose(1, 2).reshape(B, Lq, D))


class FeedForward(nn.Module):
    def __init__(self, d_model, d_ff):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = Attention(cfg.d_model, cfg.n_heads)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff)
        self.drop = nn.Dropout(cfg.dropout_rate)

    def forward(self, x, mask):
        h = self.ln1(x)
        x = x + self.drop(self.attn(h, h, mask))
        return x + self.drop(self.ff(self.ln2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = Attention(cfg.d_model, cfg.n_heads)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = Attention(cfg.d_model, cfg.n_heads)
        self.ln3 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff)
        self.drop = nn.Dropout(cfg.dropout_rate)

    def forward(self, y, mem, self_mask, mem_mask):
        h = self.ln1(y)
        y = y + self.drop(self.self_attn(h, h, self_mask))
        y = y + self.drop(self.cross_attn(self.ln2(y), mem, mem_mask))
        return y + self.drop(self.ff(self.ln3(y)))


class Seq2SeqTransformer(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.src_embed = nn.Embedding(cfg.vocab_in, cfg.d_model)
        self.tgt_embed = nn.Embedding(cfg.vocab_out, cfg.d_model)
        self.register_buffer("src_pos", sinusoid_table(cfg.max_src_len, cfg.d_model), persistent=False)
        self.register_buffer("tgt_pos", sinusoid_table(cfg.max_tgt_len, cfg.d_model), persistent=False)
        self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_enc_layers))
        self.decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_dec_layers))
        self.enc_norm = nn.LayerNorm(cfg.d_model)
        self.dec_norm = nn.LayerNorm(cfg.d_model)
        self.out_proj = nn.Linear(cfg.d_model, cfg.vocab_out)
        self.drop = nn.Dropout(cfg.dropout_rate)

    def _check(self, ids, vocab, max_len, what):
        if ids.shape[1] > max_len:
            raise ModelError(f"{what} length {ids.shape[1]} exceeds maximum {max_len}")
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= vocab):
            raise ModelError(f"{what} id out of vocabulary [0, {vocab})")

    def encode(self, src):
        cfg = self.cfg
        self._check(src, cfg.vocab_in, cfg.max_src_len, "source")
        key_ok = (src != cfg.src_pad_id)[:, None, None, :]
        x = self.src_embed(src) * math.sqrt(cfg.d_model) + self.src_pos[: src.shape[1]]
        x = self.drop(x)
        for layer in self.encoder:
            x = layer(x, key_ok)
        return self.enc_norm(x), key_ok

    def decode(self, tgt_in, mem, mem_mask):
        cfg = self.cfg
        self._check(tgt_in, cfg.vocab_out, cfg.max_tgt_len, "target")
        L = tgt_in.shape[1]
        causal = torch.ones(L, L, dtype=torch.bool, device=tgt_in.device).tril()
        y = self.tgt_embed(tgt_in) * math.sqrt(cfg.d_model) + self.tgt_pos[:L]
        y = self.drop(y)
        for layer in self.decoder:
            y = layer(y, mem, causal, mem_mask)
        return self.out_proj(self.dec_norm(y))

    def forward(self, src, tgt_in):
        mem, mem_mask = self.encode(src)
        return self.decode(tgt_in, mem, mem_mask)


def _fill(rng, tensor, low, high):
    arr = rng.uniform(low, high, size=tuple(tensor.shape))
    with torch.no_grad():
        tensor.copy_(torch.from_numpy(arr))


def init_params(cfg, seed):
    """Build a model with deterministic PCG64 initialisation.

    Linear weights: Glorot-uniform; embeddings: U(-1/sqrt(d), 1/sqrt(d))
    (scaled up by sqrt(d) in the forward pass); output projection:
    U(-0.1/sqrt(d), 0.1/sqrt(d)) so initial logits are near-uniform; biases
    and layer-norm offsets zero, layer-norm scales one.
    """
    model = Seq2SeqTransformer(cfg).to(cfg.torch_dtype)
    rng = make_rng(seed, "init")
    d = cfg.d_model
    for name, p in model.named_parameters():
        if name.startswith("out_proj.weight"):
            _fill(rng, p, -0.1 / math.sqrt(d), 0.1 / math.sqrt(d))
        elif "embed" in name:
            _fill(rng, p, -1 / math.sqrt(d), 1 / math.sqrt(d))
        elif name.endswith("weight") and p.dim() == 2:
            bound = math.sqrt(6.0 / (p.shape[0] + p.shape[1]))
            _fill(rng, p, -bound, bound)
        elif name.endswith("weight"):
            nn.init.ones_(p)
        else:
            nn.init.zeros_(p)
    return model


def n_parameters(model):
    return sum(p.numel() for p in model.parameters())


def _as_ids(x):
    return torch.as_tensor(np.asarray(x), dtype=torch.long)


def forward(model, src_ids, tgt_ids_shifted):
    """Logits ``(batch, tgt_len, vocab_out)`` for teacher-forced targets."""
    return model(_as_ids(src_ids), _as_ids(tgt_ids_shifted))


def shift_right(targets, bos_id):
    targets = np.asarray(targets, dtype=np.int64)
    out = np.empty_like(targets)
    out[:, 0] = bos_id
    out[:, 1:] = targets[:, :-1]
    return out


def sequence_loss(logits, targets, pad_id):
    """Mean token cross-entropy over non-PAD target positions."""
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1),
                           ignore_index=pad_id)


def loss_and_grads(model, batch):
    """Cross-entropy and exact gradients for ``batch = (src_ids, labels)``.

    ``labels`` is ``(batch, tgt_len)`` and may be PAD-padded; the decoder input
    is the labels shifted right behind BOS.
    """
    src, labels = batch
    src, labels = _as_ids(src), _as_ids(labels)
    if src.shape[0] == 0:
        raise ModelError("empty batch")
    cfg = model.cfg
    model.zero_grad(set_to_none=True)
    tgt_in = _as_ids(shift_right(labels.numpy(), cfg.tgt_bos_id))
    loss = sequence_loss(model(src, tgt_in), labels, cfg.tgt_pad_id)
    loss.backward()
    grads = {name: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
             for name, p in model.named_parameters()}
    return float(loss.detach()), grads


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(path, model, meta=None):
    header = {"kind": "checkpoint", "config": asdict(model.cfg)}
    header.update(meta or {})
    arrays = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
    return container.write(path, CHECKPOINT_MAGIC, header, arrays)


def load_checkpoint(path):
    header, arrays = container.read(path, CHECKPOINT_MAGIC)
    cfg = ModelConfig(**header.pop("config"))
    model = Seq2SeqTransformer(cfg).to(cfg.torch_dtype)
    state = {name: torch.from_numpy(arr) for name, arr in arrays.items()}
    model.load_state_dict(state)
    model.eval()
    return model, header
