"""Decoding a trained model into piece placements, and the two accuracy metrics."""
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .model import ELEMENT_WISE, INDEX_WISE
from .train import pad_rows


class SolverError(ValueError):
    pass


@dataclass
class SolveResult:
    predicted: np.ndarray  # grid position of each encoded piece
    per_step_logprobs: np.ndarray
    mode: str = INDEX_WISE
    structure_violation: bool = False
    generated: np.ndarray = None


@dataclass
class EvalSummary:
    absolute: float
    perfect: float
    n_puzzles: int
    absolute_present: float
    perfect_present: float
    records: list = field(default_factory=list)
    by_missing: dict = field(default_factory=dict)

    def to_dict(self):
        return {"absolute": self.absolute, "perfect": self.perfect, "n": self.n_puzzles,
                "absolute_present": self.absolute_present, "perfect_present": self.perfect_present,
                "by_missing": self.by_missing}


def _check_lengths(y, yhat):
    y, yhat = np.asarray(y), np.asarray(yhat)
    if y.shape != yhat.shape:
        raise SolverError(f"length mismatch: {y.shape} vs {yhat.shape}")
    return y, yhat


def absolute_accuracy(y, yhat):
    """Fraction of pieces placed at their true position."""
    y, yhat = _check_lengths(y, yhat)
    return float(np.mean(y == yhat))


def perfect_accuracy(y, yhat):
    """1 if every piece is placed correctly, else 0."""
    y, yhat = _check_lengths(y, yhat)
    return int(np.all(y == yhat))


def _present_scores(y, yhat, missing):
    keep = ~np.asarray(missing, dtype=bool)
    if not keep.any():
        return 1.0, 1
    return absolute_accuracy(y[keep], yhat[keep]), perfect_accuracy(y[keep], yhat[keep])


# --- index-wise -------------------------------------------------------------

@torch.no_grad()
def decode_index_wise_batch(model, encoded):
    """Greedy constrained decoding for a list of puzzles of equal piece count.

    At step t every position already assigned (and every non-position id) is
    masked to -inf before the argmax, so the output is always a permutation.
    """
    cfg = model.cfg
    if cfg.mode != INDEX_WISE:
        raise SolverError("model was not trained for index-wise decoding")
    if not encoded:
        return []
    n = encoded[0].n_pieces
    if any(e.n_pieces != n for e in encoded):
        raise SolverError("puzzles in one decoding batch must share the piece count")
    if n > cfg.n_positions:
        raise SolverError(f"{n} pieces exceed the model's {cfg.n_positions} positions")
    model.eval()
    src = torch.from_numpy(pad_rows([e.encoder_ids for e in encoded], cfg.src_pad_id))
    mem, mem_mask = model.encode(src)
    B = len(encoded)
    tgt = torch.full((B, 1), cfg.tgt_bos_id, dtype=torch.long)
    allowed = torch.zeros(B, cfg.vocab_out, dtype=torch.bool)
    allowed[:, :n] = True
    picks = np.zeros((B, n), dtype=np.int64)
    logps = np.zeros((B, n))
    for t in range(n):
        logits = model.decode(tgt, mem, mem_mask)[:, -1].double()
        logits = logits.masked_fill(~allowed, float("-inf"))
        logp = torch.log_softmax(logits, dim=-1)
        choice = torch.argmax(logp, dim=-1)
        picks[:, t] = choice.numpy()
        logps[:, t] = logp.gather(1, choice[:, None])[:, 0].numpy()
        allowed[torch.arange(B), choice] = False
        tgt = torch.cat([tgt, choice[:, None]], dim=1)
    return [SolveResult(picks[i], logps[i], INDEX_WISE) for i in range(B)]


def decode_index_wise(model, encoded):
    return decode_index_wise_batch(model, [encoded])[0]


# --- element-wise -----------------------------------------------------------

def segment_generation(generated, n, tau, sep_id):
    """Split a generated sequence into ``n`` spans of ``tau`` ids.

    Returns ``(spans, violated)``. When the separator layout is not exactly
    the expected one, separators are dropped and the remaining ids are cut
    into consecutive chunks of ``tau`` (padded with -1), and ``violated`` is set.
    """
    generated = [int(t) for t in generated]
    if sep_id is not None:
        parts, cur = [], []
        for tok in generated:
            if tok == sep_id:
                parts.append(cur)
                cur = []
            else:
                cur.append(tok)
        parts.append(cur)
        if len(parts) == n and all(len(p) == tau for p in parts):
            return np.array(parts, dtype=np.int64), False
        flat = [t for t in generated if t != sep_id]
        violated = True
    else:
        flat = generated
        violated = len(flat) != n * tau
    flat = (flat + [-1] * (n * tau))[: n * tau]
    return np.array(flat, dtype=np.int64).reshape(n, tau), violated


def match_spans(spans, pieces):
    """Assign generated spans (grid order) to input pieces by Hamming distance.

    Grid positions are processed in order; each takes the unused piece with
    the fewest differing ids, ties going to the lowest piece index. Returns
    the grid position of each input piece.
    """
    spans = np.asarray(spans)
    pieces = np.asarray(pieces)
    n = len(pieces)
    used = np.zeros(n, dtype=bool)
    position = np.empty(n, dtype=np.int64)
    for q in range(n):
        dist = (pieces != spans[q][None, :]).sum(axis=1).astype(float)
        dist[used] = np.inf
        i = int(np.argmin(dist))
        used[i] = True
        position[i] = q
    return position


@torch.no_grad()
def decode_element_wise_batch(model, encoded, sep_id):
    cfg = model.cfg
    if cfg.mode != ELEMENT_WISE:
        raise SolverError("model was not trained for element-wise decoding")
    if not encoded:
        return []
    model.eval()
    length = len(encoded[0].encoder_ids)
    src = torch.from_numpy(pad_rows([e.encoder_ids for e in encoded], cfg.src_pad_id))
    mem, mem_mask = model.encode(src)
    B = len(encoded)
    tgt = torch.full((B, 1), cfg.tgt_bos_id, dtype=torch.long)
    banned = torch.zeros(cfg.vocab_out, dtype=torch.bool)
    banned[[cfg.tgt_bos_id, cfg.tgt_pad_id]] = True
    out = np.zeros((B, length), dtype=np.int64)
    logps = np.zeros((B, length))
    for t in range(length):
        logits = model.decode(tgt, mem, mem_mask)[:, -1].double().masked_fill(banned, float("-inf"))
        logp = torch.log_softmax(logits, dim=-1)
        choice = torch.argmax(logp, dim=-1)
        out[:, t] = choice.numpy()
        logps[:, t] = logp.gather(1, choice[:, None])[:, 0].numpy()
        tgt = torch.cat([tgt, choice[:, None]], dim=1)
    results = []
    for i, enc in enumerate(encoded):
        spans, violated = segment_generation(out[i], enc.n_pieces, enc.tau,
                                             sep_id if enc.use_separator else None)
        predicted = match_spans(spans, enc.spans())
        results.append(SolveResult(predicted, logps[i], ELEMENT_WISE, violated, out[i]))
    return results


def decode_element_wise(model, encoded, sep_id):
    return decode_element_wise_batch(model, [encoded], sep_id)[0]


# --- evaluation -------------------------------------------------------------

def decode_all(model, encoded, sep_id=None, batch_size=256):
    results = []
    for start in range(0, len(encoded), batch_size):
        chunk = encoded[start:start + batch_size]
        if model.cfg.mode == ELEMENT_WISE:
            results.extend(decode_element_wise_batch(model, chunk, sep_id))
        else:
            results.extend(decode_index_wise_batch(model, chunk))
    return results


def summarize(encoded, predictions):
    """Aggregate per-puzzle metrics, overall and per missing-piece count.

    ``absolute``/``perfect`` score all N positions (missing pieces included);
    the ``*_present`` variants score only pieces that are present.
    """
    if not encoded:
        raise SolverError("empty dataset")
    records = []
    for enc, pred in zip(encoded, predictions):
        y, yhat = np.asarray(enc.labels), np.asarray(pred)
        abs_p, perf_p = _present_scores(y, yhat, enc.missing)
        records.append({
            "id": enc.puzzle_id,
            "n_pieces": enc.n_pieces,
            "missing": int(np.sum(enc.missing)),
            "absolute": absolute_accuracy(y, yhat),
            "perfect": perfect_accuracy(y, yhat),
            "absolute_present": abs_p,
            "perfect_present": perf_p,
            "predicted": " ".join(str(int(v)) for v in yhat),
            "labels": " ".join(str(int(v)) for v in y),
        })

    def agg(rows):
        return {key: math.fsum(r[key] for r in rows) / len(rows)
                for key in ("absolute", "perfect", "absolute_present", "perfect_present")}

    overall = agg(records)
    by_missing = {}
    for m in sorted({r["missing"] for r in records}):
        rows = [r for r in records if r["missing"] == m]
        by_missing[str(m)] = dict(agg(rows), n=len(rows))
    return EvalSummary(absolute=overall["absolute"], perfect=overall["perfect"],
                       n_puzzles=len(records), absolute_present=overall["absolute_present"],
                       perfect_present=overall["perfect_present"], records=records,
                       by_missing=by_missing)


def evaluate(model, encoded, sep_id=None, predictor=None):
    """Decode every puzzle and aggregate both metrics.

    ``predictor``, when given, replaces the model: a callable mapping an
    encoded puzzle to its predicted positions.
    """
    if not encoded:
        raise SolverError("empty dataset")
    if predictor is not None:
        predictions = [np.asarray(predictor(e)) for e in encoded]
    else:
        predictions = [r.predicted for r in decode_all(model, encoded, sep_id)]
    return summarize(encoded, predictions)
