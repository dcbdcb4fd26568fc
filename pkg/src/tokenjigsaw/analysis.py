"""Corpus statistics over tokenized puzzles: entropy, Zipf and Heaps curves.

Only content ids (``0..k-1``) are counted; separators, masks and the other
special ids are structural and excluded everywhere.
"""
import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import make_rng

LN2 = math.log(2.0)


class AnalysisError(ValueError):
    pass


@dataclass
class FrequencyTable:
    counts: dict
    total: int

    @classmethod
    def from_tokens(cls, tokens, k=None):
        tokens = np.asarray(tokens, dtype=np.int64).ravel()
        if k is not None:
            tokens = tokens[(tokens >= 0) & (tokens < k)]
        values, freq = np.unique(tokens, return_counts=True)
        return cls({int(v): int(c) for v, c in zip(values, freq)}, int(freq.sum()))

    def merge(self, other):
        merged = Counter(self.counts)
        merged.update(other.counts)
        return FrequencyTable(dict(sorted(merged.items())), self.total + other.total)


def shannon_entropy(ft, base=math.e):
    """Plug-in entropy ``-sum p log p`` of the empirical distribution."""
    if ft.total < 1:
        raise AnalysisError("entropy of an empty table")
    p = np.array([c for c in ft.counts.values() if c > 0], dtype=np.float64) / ft.total
    h = float(-(p * np.log(p)).sum())
    return max(h, 0.0) / math.log(base)


def content_tokens(enc, k):
    ids = np.asarray(enc.encoder_ids)
    return ids[ids < k]


def per_puzzle_entropy(encoded, k):
    """Mean per-puzzle entropy grouped by the puzzle's content-token count n.

    Rows: ``(n, mean_entropy_nats, mean_entropy_bits, n_puzzles)``.
    """
    groups = {}
    for enc in encoded:
        toks = content_tokens(enc, k)
        if len(toks) == 0:
            continue
        groups.setdefault(len(toks), []).append(shannon_entropy(FrequencyTable.from_tokens(toks)))
    rows = []
    for n in sorted(groups):
        h = math.fsum(groups[n]) / len(groups[n])
        rows.append((n, h, h / LN2, len(groups[n])))
    return rows


def uniform_baseline(n_values, k, trials, seed):
    """Mean entropy of ``trials`` i.i.d. uniform sequences of each length.

    Rows: ``(n, mean_entropy_nats, mean_entropy_bits)``.
    """
    if trials < 1:
        raise AnalysisError("trials must be >= 1")
    rows = []
    for n in n_values:
        rng = make_rng(seed, "uniform", int(n))
        hs = [shannon_entropy(FrequencyTable.from_tokens(rng.integers(0, k, size=n)))
              for _ in range(trials)]
        h = math.fsum(hs) / trials
        rows.append((int(n), h, h / LN2))
    return rows


def entropy_gap(encoded, k, trials=200, seed=0):
    """Per-puzzle entropy next to the uniform baseline at matched n.

    Rows: ``(n, mean_H_nats, uniform_H_nats, gap_nats, mean_H_bits,
    uniform_H_bits, gap_bits, n_puzzles)``.
    """
    puzzle = per_puzzle_entropy(encoded, k)
    base = {n: (h, hb) for n, h, hb in uniform_baseline([r[0] for r in puzzle], k, trials, seed)}
    rows = []
    for n, h, hb, count in puzzle:
        u, ub = base[n]
        rows.append((n, h, u, u - h, hb, ub, ub - hb, count))
    return rows


def fit_power_law(x, y):
    """Least-squares slope and intercept of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return 0.0, float(np.log(y[keep][0])) if keep.any() else 0.0
    lx, ly = np.log(x[keep]), np.log(y[keep])
    if np.ptp(lx) == 0:
        return 0.0, float(ly.mean())
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


def zipf_curve(ft):
    """``(rank, count)`` rows, most frequent first; ties by ascending id."""
    if ft.total < 1:
        raise AnalysisError("Zipf curve of an empty table")
    items = sorted(ft.counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(rank, count) for rank, (_, count) in enumerate(items, start=1) if count > 0]


def zipf_slope(rows):
    return fit_power_law([r[0] for r in rows], [r[1] for r in rows])[0]


def geometric_points(length, per_decade=10):
    if length < 1:
        return []
    pts = np.unique(np.round(np.logspace(0, math.log10(length), int(per_decade * math.log10(length)) + 2)))
    pts = [int(p) for p in pts if 1 <= p <= length]
    if pts[-1] != length:
        pts.append(length)
    return pts


@dataclass
class HeapsCurve:
    rows: list  # (n, unique_count)
    beta: float
    intercept: float


def heaps_curve(stream, sample_points=None):
    """Distinct-token count after the first n tokens, plus the fitted exponent."""
    stream = np.asarray(stream, dtype=np.int64).ravel()
    if sample_points is None:
        sample_points = geometric_points(len(stream))
    sample_points = sorted(int(n) for n in sample_points)
    if sample_points and sample_points[-1] > len(stream):
        raise AnalysisError(f"sample point {sample_points[-1]} exceeds stream length {len(stream)}")
    if sample_points and sample_points[0] < 1:
        raise AnalysisError("sample points must be >= 1")
    # first-occurrence flags, cumulated: unique count after each prefix
    _, first = np.unique(stream, return_index=True)
    is_new = np.zeros(len(stream), dtype=np.int64)
    is_new[first] = 1
    unique = np.cumsum(is_new)
    rows = [(n, int(unique[n - 1])) for n in sample_points]
    beta, intercept = fit_power_law([r[0] for r in rows], [r[1] for r in rows])
    return HeapsCurve(rows, beta, intercept)


def dataset_stream(encoded, k):
    """Content tokens of all puzzles concatenated in dataset order."""
    parts = [content_tokens(e, k) for e in encoded]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


# --- constructed corpora (used as oracles) ------------------------------------

def zipf_corpus_counts(n_types, scale=1_000_000):
    """Counts exactly proportional to 1/rank (rounded)."""
    return {i: int(round(scale / (i + 1))) for i in range(n_types)}


def heaps_stream(length, beta, seed):
    """Stream whose distinct count after n tokens is ``ceil(n**beta)``;
    repeats are drawn uniformly from already-seen types."""
    rng = make_rng(seed, "heaps")
    out = np.empty(length, dtype=np.int64)
    seen = 0
    for i in range(length):
        if seen < math.ceil((i + 1) ** beta - 1e-12):
            out[i] = seen
            seen += 1
        else:
            out[i] = rng.integers(0, seen)
    return out


# --- report -----------------------------------------------------------------

@dataclass
class AnalysisReport:
    entropy_by_length: list
    zipf: list
    heaps: list
    heaps_beta: float
    zipf_slope: float
    k: int
    meta: dict = field(default_factory=dict)


def build_report(encoded, k, trials=200, seed=0):
    stream = dataset_stream(encoded, k)
    if len(stream) == 0:
        raise AnalysisError("dataset has no content tokens")
    ft = FrequencyTable.from_tokens(stream, k)
    zipf = zipf_curve(ft)
    heaps = heaps_curve(stream)
    return AnalysisReport(
        entropy_by_length=entropy_gap(encoded, k, trials, seed),
        zipf=zipf,
        heaps=heaps.rows,
        heaps_beta=heaps.beta,
        zipf_slope=zipf_slope(zipf),
        k=k,
        meta={"n_puzzles": len(encoded), "n_tokens": int(len(stream)), "distinct": len(ft.counts),
              "uniform_trials": trials, "seed": seed, "log_base": "e (nats) and 2 (bits)"},
    )


ENTROPY_COLUMNS = ["n", "mean_entropy_nats", "uniform_entropy_nats", "gap_nats",
                   "mean_entropy_bits", "uniform_entropy_bits", "gap_bits", "n_puzzles"]


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_report(report, out_dir, sidecar=None):
    """Write ``entropy.csv``, ``zipf.csv``, ``heaps.csv`` and ``analysis.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "entropy.csv", ENTROPY_COLUMNS, report.entropy_by_length)
    _write_csv(out / "zipf.csv", ["rank", "frequency"], report.zipf)
    _write_csv(out / "heaps.csv", ["n", "unique_count"], report.heaps)
    meta = dict(sidecar or {})
    meta.update(report.meta)
    meta.update(k=report.k, heaps_beta=report.heaps_beta, zipf_slope=report.zipf_slope,
                upper_bound_nats=math.log(report.k), upper_bound_bits=math.log2(report.k),
                files=["entropy.csv", "zipf.csv", "heaps.csv"])
    with open(out / "analysis.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
