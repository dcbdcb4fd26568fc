"""Command line entry point: ``tokenjigsaw <command> [options]``.

Exit codes: 0 success, 2 configuration or validation error (including stale
artifacts), 3 data error, 4 numeric failure during training.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .analysis import AnalysisError
from .config import ConfigError, DEFAULTS, dump_config, load_config, output_dir
from .container import ContainerError
from .dataset import entry_puzzle, read_manifest
from .imageio import load_image, prepare_image
from .model import ModelError
from .numerics import NumericsError
from .puzzle import PuzzleError, make_puzzle
from .solver import SolverError, absolute_accuracy, perfect_accuracy
from .tokenizer import Codebook, TokenizerError, read_token_dataset
from .train import NumericFailure

log = logging.getLogger("tokenjigsaw")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DATA_ERRORS = (PuzzleError, TokenizerError, ContainerError, SolverError, NumericsError,
               ModelError, AnalysisError, OSError)


def _common(p):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. --set trainer.steps=500 (repeatable)")
    p.add_argument("--out", help="output directory (default: config output_dir, "
                                 "then $TOKENJIGSAW_OUT, then runs/default)")
    p.add_argument("--workers", type=int, default=None, help="torch intra-op threads")
    p.add_argument("-q", "--quiet", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="tokenjigsaw", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("default-config", help="print the default configuration as YAML")
    p.set_defaults(func=cmd_default_config)

    for name, func, doc in [
        ("make-dataset", cmd_make_dataset, "write the puzzle manifest"),
        ("fit-tokenizer", cmd_fit_tokenizer, "fit PCA + k-means codebook on training pieces"),
        ("tokenize", cmd_tokenize, "encode train and test puzzles into token files"),
    ]:
        p = sub.add_parser(name, help=doc)
        _common(p)
        p.set_defaults(func=func)

    for name, func, doc in [
        ("train", cmd_train, "train the sequence model"),
        ("eval", cmd_eval, "decode the test split and write eval.json"),
        ("run", cmd_run, "run every stage from make-dataset to analyze"),
    ]:
        p = sub.add_parser(name, help=doc)
        _common(p)
        p.add_argument("--mode", choices=["index_wise", "element_wise"], help="shorthand for --set model.mode=...")
        p.add_argument("--force", action="store_true", help="allow element-wise decoding at T > 2")
        p.set_defaults(func=func)

    p = sub.add_parser("analyze", help="entropy, Zipf and Heaps curves (CSV + PNG)")
    _common(p)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("solve", help="solve one puzzle and write the reassembled image")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", help="image file (PNG/PPM) to cut, shuffle and solve")
    src.add_argument("--tokens", help="token file (.pztk) holding the puzzle")
    p.add_argument("--index", type=int, default=0, help="record index within --tokens")
    p.add_argument("--shuffle-seed", type=int, default=0)
    p.add_argument("--missing", type=int, default=0, help="pieces to mark missing (with --image)")
    p.add_argument("--oracle", action="store_true", help="use the true layout instead of the model")
    p.add_argument("--output", help="reassembled image path (PPM); default <out>/solve/<name>.ppm")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_solve)
    return ap


def _load(args):
    overrides = list(args.overrides)
    if getattr(args, "mode", None):
        overrides.append(f"model.mode={args.mode}")
    cfg = load_config(args.config, overrides)
    pipeline.set_threads(args.workers)
    out = output_dir(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_default_config(args):
    sys.stdout.write(dump_config(DEFAULTS))


def cmd_make_dataset(args):
    cfg, out = _load(args)
    _emit(pipeline.make_dataset(cfg, out))


def cmd_fit_tokenizer(args):
    cfg, out = _load(args)
    _emit(pipeline.fit_tokenizer(cfg, out))


def cmd_tokenize(args):
    cfg, out = _load(args)
    _emit(pipeline.tokenize(cfg, out))


def _progress(total):
    def report(state, loss, elapsed):
        step = state.step
        if step % max(1, total // 20) == 0 or step == total:
            log.info("step %d/%d loss %.4f (%.0fs)", step, total, loss, elapsed)
    return report


def cmd_train(args):
    cfg, out = _load(args)
    _emit(pipeline.train(cfg, out, force=args.force, progress=_progress(cfg["trainer"]["steps"])))


def cmd_eval(args):
    cfg, out = _load(args)
    report = pipeline.evaluate(cfg, out, force=args.force)
    _emit({k: report[k] for k in ("absolute", "perfect", "n", "absolute_present", "perfect_present")})


def cmd_analyze(args):
    cfg, out = _load(args)
    _emit(pipeline.analyze(cfg, out, split=args.split))


def cmd_run(args):
    cfg, out = _load(args)
    pipeline.check_element_wise(cfg, args.force)
    for name, stage in [("make-dataset", pipeline.make_dataset),
                        ("fit-tokenizer", pipeline.fit_tokenizer),
                        ("tokenize", pipeline.tokenize)]:
        log.info("%s", name)
        stage(cfg, out)
    log.info("train")
    pipeline.train(cfg, out, force=args.force, progress=_progress(cfg["trainer"]["steps"]))
    log.info("eval")
    report = pipeline.evaluate(cfg, out, force=args.force)
    log.info("analyze")
    pipeline.analyze(cfg, out)
    _emit({k: report[k] for k in ("absolute", "perfect", "n", "absolute_present", "perfect_present")})


def _puzzle_from_tokens(args, out):
    meta, encoded = read_token_dataset(args.tokens)
    if not 0 <= args.index < len(encoded):
        raise PuzzleError(f"--index {args.index} out of range for {len(encoded)} records")
    enc = encoded[args.index]
    pz = None
    manifest_path = Path(args.tokens).parent / "manifest.json"
    if manifest_path.exists():
        entries = {e["id"]: e for e in read_manifest(manifest_path)["puzzles"]}
        if enc.puzzle_id in entries:
            pz = entry_puzzle(entries[enc.puzzle_id], read_manifest(manifest_path)["piece_px"])
    return meta, enc, pz


def cmd_solve(args):
    cfg, out = _load(args)
    pipeline.check_element_wise(cfg, args.force)
    p = pipeline.paths(out)
    cb = Codebook.load(pipeline._require(p["codebook"]))
    pipeline._check(cb.lineage.get("stage_digest"), cfg, "codebook", "codebook.pzcb")
    model = None
    if not args.oracle:
        model, _ = pipeline.load_model_checked(cfg, out, {"codebook_digest": cb.digest})

    def oracle(enc):
        return np.asarray(enc.labels)

    predictor = oracle if args.oracle else None
    if args.image:
        img = prepare_image(load_image(args.image), cfg["grid_side"], cb.piece_px)
        pz = make_puzzle(img, cfg["grid_side"], args.shuffle_seed, missing_count=args.missing,
                         puzzle_id=Path(args.image).stem)
        enc, positions = pipeline.solve_puzzle(model, cb, pz, predictor)
        name = pz.puzzle_id
    else:
        meta, enc, pz = _puzzle_from_tokens(args, out)
        if meta.get("codebook_digest") != cb.digest:
            raise pipeline.StaleArtifact("token file and codebook come from different lineages")
        if predictor is not None:
            pred = predictor(enc)
        else:
            pred = pipeline.decode_all(model, [enc], cb.config.sep_id)[0].predicted
        positions = np.empty(len(pred), dtype=np.int64)
        positions[enc.piece_order] = pred
        name = enc.puzzle_id or f"record-{args.index}"

    # positions are indexed by the puzzle's shuffled order
    truth = np.empty_like(positions)
    truth[enc.piece_order] = enc.labels
    result = {"puzzle": name, "positions": positions.tolist(),
              "absolute": absolute_accuracy(truth, positions),
              "perfect": perfect_accuracy(truth, positions)}
    print(pipeline.layout_grid(positions, cfg["grid_side"]))
    if pz is not None:
        target = Path(args.output) if args.output else out / "solve" / f"{name}.ppm"
        target.parent.mkdir(parents=True, exist_ok=True)
        pipeline.render_solution(pz, positions, target, target.with_suffix(".png"))
        result["image"] = str(target)
    _emit(result)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
