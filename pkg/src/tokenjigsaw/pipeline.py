"""Pipeline stages behind the command line.

Each stage reads the artifacts of the previous one from the output directory,
checks that their recorded lineage digest matches the current configuration,
and writes its own artifact stamped with the config digest.

Artifacts::

    manifest.json                     make_dataset
    codebook.pzcb                     fit_tokenizer
    tokens_{train,test}.pztk (+.txt)  tokenize
    model.pzck, train_log.jsonl       train
    eval.json, eval_records.csv       evaluate
    analysis/*.csv, *.png, *.json     analyze
"""
import csv
import json
import logging
from pathlib import Path

import numpy as np
import torch

from . import analysis, plotting
from .config import (ConfigError, config_digest, model_config, stage_digest,
                     tokenizer_config, trainer_config)
from .container import digest_bytes, digest_file
from .dataset import build_manifest, load_puzzles, read_manifest, write_manifest
from .imageio import write_ppm
from .model import ELEMENT_WISE, init_params, load_checkpoint, n_parameters, save_checkpoint
from .puzzle import PuzzleError, reassemble
from .solver import decode_all, evaluate as evaluate_model
from .tokenizer import (Codebook, encode_many, fit_codebook, format_debug_dataset,
                        read_token_dataset, write_token_dataset)
from .train import train_model

log = logging.getLogger(__name__)

MAX_ELEMENT_WISE_T = 2
ELEMENT_WISE_NOTE = (
    "element-wise decoding regenerates the whole solved token sequence "
    "(N*tau + N - 1 steps) and becomes impractical beyond very coarse "
    "granularity; it is supported for T <= 2. Pass --force to run anyway."
)


class StaleArtifact(ConfigError):
    """An input artifact was produced under a different configuration."""


def paths(out_dir):
    out = Path(out_dir)
    return {
        "manifest": out / "manifest.json",
        "codebook": out / "codebook.pzcb",
        "tokens_train": out / "tokens_train.pztk",
        "tokens_test": out / "tokens_test.pztk",
        "model": out / "model.pzck",
        "train_log": out / "train_log.jsonl",
        "eval": out / "eval.json",
        "eval_records": out / "eval_records.csv",
        "analysis": out / "analysis",
    }


def _require(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"missing input artifact {path}; run the earlier stage first")
    return path


def _check(found, cfg, stage, what):
    expected = stage_digest(cfg, stage)
    if found != expected:
        raise StaleArtifact(
            f"{what} was produced under a different configuration "
            f"({stage} digest {str(found)[:12]} != {expected[:12]}); re-run the earlier stages"
        )


def check_element_wise(cfg, force=False):
    T = cfg["tokenizer"]["granularity"]
    if cfg["model"]["mode"] == ELEMENT_WISE and T > MAX_ELEMENT_WISE_T and not force:
        raise ConfigError(f"refusing element-wise mode at T={T}: {ELEMENT_WISE_NOTE}")


def make_dataset(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(cfg, stage_digest(cfg, "dataset"), config_digest(cfg))
    if manifest["source"] == "images":
        # fail early on unreadable or undersized images
        for entry in manifest["puzzles"]:
            load_puzzles({"piece_px": manifest["piece_px"], "puzzles": [entry]})
    write_manifest(paths(out)["manifest"], manifest)
    return {"manifest": str(paths(out)["manifest"]), "n_puzzles": len(manifest["puzzles"])}


def fit_tokenizer(cfg, out_dir):
    p = paths(out_dir)
    manifest = read_manifest(_require(p["manifest"]))
    _check(manifest["stage_digest"], cfg, "dataset", "manifest.json")
    train = load_puzzles(manifest, "train")
    if not train:
        raise PuzzleError("manifest has no training puzzles")
    pieces = [piece for pz in train for piece in pz.pieces]
    cb = fit_codebook(pieces, tokenizer_config(cfg), cfg["seeds"]["codebook"])
    cb.lineage = {"stage_digest": stage_digest(cfg, "codebook"), "config_digest": config_digest(cfg)}
    digest = cb.save(p["codebook"])
    return {"codebook": str(p["codebook"]), "digest": digest, "k": cb.k,
            "kmeans_iterations": cb.km.iterations_run, "inertia": cb.km.inertia}


def tokenize(cfg, out_dir):
    p = paths(out_dir)
    manifest = read_manifest(_require(p["manifest"]))
    _check(manifest["stage_digest"], cfg, "dataset", "manifest.json")
    raw = Path(_require(p["codebook"])).read_bytes()
    cb = Codebook.from_bytes(raw)
    _check(cb.lineage.get("stage_digest"), cfg, "codebook", "codebook.pzcb")
    result = {}
    for split in ("train", "test"):
        encoded = encode_many(cb, load_puzzles(manifest, split))
        meta = {"split": split, "stage_digest": stage_digest(cfg, "tokens"),
                "config_digest": config_digest(cfg), "codebook_digest": digest_bytes(raw),
                "vocab_size": cb.k, "sep_id": cb.config.sep_id, "grid_side": cfg["grid_side"]}
        path = p[f"tokens_{split}"]
        digest = write_token_dataset(path, encoded, meta)
        path.with_suffix(".txt").write_text(format_debug_dataset(encoded, cb.config.sep_id),
                                            encoding="utf-8")
        result[split] = {"path": str(path), "n": len(encoded), "digest": digest}
    return result


def _read_tokens(cfg, path):
    meta, encoded = read_token_dataset(_require(path))
    _check(meta.get("stage_digest"), cfg, "tokens", Path(path).name)
    return meta, encoded


def train(cfg, out_dir, force=False, progress=None):
    check_element_wise(cfg, force)
    p = paths(out_dir)
    meta, encoded = _read_tokens(cfg, p["tokens_train"])
    mcfg = model_config(cfg)
    tcfg = trainer_config(cfg)
    model = init_params(mcfg, cfg["seeds"]["init"])
    log.info("training %d-parameter model for %d steps", n_parameters(model), tcfg.steps)
    with open(p["train_log"], "w", encoding="utf-8") as fh:
        losses = train_model(model, encoded, tcfg, sep_id=meta["sep_id"], log=fh, on_step=progress)
    lineage = {"stage_digest": stage_digest(cfg, "model"), "config_digest": config_digest(cfg),
               "codebook_digest": meta["codebook_digest"], "tokens_digest": digest_file(p["tokens_train"]),
               "step": tcfg.steps, "seeds": dict(cfg["seeds"]), "sep_id": meta["sep_id"]}
    digest = save_checkpoint(p["model"], model, lineage)
    rows = [json.loads(line) for line in p["train_log"].read_text(encoding="utf-8").splitlines()]
    if rows:
        plotting.plot_training(rows, Path(out_dir) / "train_loss.png")
    return {"model": str(p["model"]), "digest": digest, "final_loss": losses[-1] if losses else None,
            "parameters": n_parameters(model)}


def load_model_checked(cfg, out_dir, token_meta):
    model, header = load_checkpoint(_require(paths(out_dir)["model"]))
    _check(header.get("stage_digest"), cfg, "model", "model.pzck")
    if header.get("codebook_digest") != token_meta.get("codebook_digest"):
        raise StaleArtifact("model and evaluation tokens come from different codebooks")
    return model, header


def write_records(path, records):
    cols = ["id", "n_pieces", "missing", "absolute", "perfect", "absolute_present",
            "perfect_present", "labels", "predicted"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow({c: r[c] for c in cols})


def evaluate(cfg, out_dir, force=False, predictor=None):
    check_element_wise(cfg, force)
    p = paths(out_dir)
    meta, encoded = _read_tokens(cfg, p["tokens_test"])
    model = header = None
    if predictor is None:
        model, header = load_model_checked(cfg, out_dir, meta)
    summary = evaluate_model(model, encoded, meta["sep_id"], predictor=predictor)
    write_records(p["eval_records"], summary.records)
    primary = cfg["eval"].get("score_missing", "all")
    report = {
        "config_digest": config_digest(cfg),
        "dataset_digest": digest_file(p["tokens_test"]),
        "model_digest": digest_file(p["model"]) if model is not None else None,
        "mode": model.cfg.mode if model is not None else "oracle",
        "scoring": primary,
        "absolute": summary.absolute if primary == "all" else summary.absolute_present,
        "perfect": summary.perfect if primary == "all" else summary.perfect_present,
        "n": summary.n_puzzles,
        "absolute_all": summary.absolute,
        "perfect_all": summary.perfect,
        "absolute_present": summary.absolute_present,
        "perfect_present": summary.perfect_present,
        "by_missing": summary.by_missing,
        "per_puzzle_csv": p["eval_records"].name,
    }
    p["eval"].write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return report


def analyze(cfg, out_dir, split="train"):
    p = paths(out_dir)
    meta, encoded = _read_tokens(cfg, p[f"tokens_{split}"])
    report = analysis.build_report(encoded, meta["vocab_size"], cfg["analysis"]["uniform_trials"],
                                   cfg["seeds"]["analysis"])
    sidecar = {"config_digest": config_digest(cfg), "dataset_digest": digest_file(p[f"tokens_{split}"]),
               "codebook_digest": meta["codebook_digest"], "split": split}
    out = analysis.write_report(report, p["analysis"], sidecar)
    figures = plotting.plot_report(report, out)
    return {"dir": str(out), "figures": [str(f) for f in figures],
            "zipf_slope": report.zipf_slope, "heaps_beta": report.heaps_beta}


def solve_puzzle(model, cb, pz, predictor=None):
    """Decode one puzzle instance; returns (encoded, positions per shuffled piece)."""
    enc = encode_many(cb, [pz])[0]
    if predictor is not None:
        pred = np.asarray(predictor(enc))
    else:
        pred = decode_all(model, [enc], cb.config.sep_id)[0].predicted
    positions = np.empty(len(pred), dtype=np.int64)
    positions[enc.piece_order] = pred
    return enc, positions


def render_solution(pz, positions, out_path, figure_path=None):
    solved = reassemble(pz.pieces, pz.grid_side, positions)
    write_ppm(out_path, solved)
    if figure_path is not None:
        shuffled = reassemble(pz.pieces, pz.grid_side, list(range(pz.n_pieces)))
        wrong = [int(q) for q, piece in zip(positions, pz.pieces) if q != piece.source_position]
        plotting.plot_solution(shuffled, solved, figure_path, wrong, pz.grid_side)
    return solved


def layout_grid(positions, grid_side):
    """Text grid: cell (r, c) shows the shuffled index of the piece placed there."""
    grid = np.full(grid_side * grid_side, -1, dtype=np.int64)
    for i, q in enumerate(positions):
        grid[q] = i
    width = len(str(grid_side * grid_side - 1))
    return "\n".join(" ".join(f"{v:>{width}d}" for v in grid[r * grid_side:(r + 1) * grid_side])
                     for r in range(grid_side))


def set_threads(workers):
    if workers:
        torch.set_num_threads(int(workers))
