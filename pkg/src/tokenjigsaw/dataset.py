"""Dataset manifests: which images become which puzzles.

A manifest is one UTF-8 JSON document. Each puzzle entry lists, in this
order: ``id``, ``seed`` (procedural image) or ``path`` (ingested image),
``grid_side``, ``missing_count``, ``shuffle_seed`` and ``split``. Images are
never stored for procedural corpora; they are regenerated from their seed.
"""
import json
from pathlib import Path

from .imageio import load_image, prepare_image
from .puzzle import PuzzleError, make_puzzle, synth_image
from .rng import derive_seed

MANIFEST_FORMAT = "tokenjigsaw-manifest/1"
IMAGE_SUFFIXES = (".png", ".ppm", ".pnm", ".jpg", ".jpeg")


def _entry(pid, source_key, source, grid_side, missing, shuffle_seed, split):
    return {"id": pid, source_key: source, "grid_side": grid_side,
            "missing_count": int(missing), "shuffle_seed": int(shuffle_seed), "split": split}


def list_images(image_dir):
    root = Path(image_dir)
    if not root.is_dir():
        raise PuzzleError(f"image directory {root} does not exist")
    return sorted(str(p) for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)


def build_manifest(cfg, stage_digest="", config_digest=""):
    """Manifest dict for the corpus described by ``cfg``.

    Training image ``i`` carries ``train_missing[i % len]`` missing pieces;
    every test image appears once per level in ``test_missing``.
    """
    corpus = cfg["corpus"]
    g = cfg["grid_side"]
    n_train, n_test = corpus["n_train"], corpus["n_test"]
    seeds = cfg["seeds"]
    if corpus["source"] == "synth":
        sources = [("seed", derive_seed(seeds["image"], "image", i)) for i in range(n_train + n_test)]
    else:
        paths = list_images(corpus["image_dir"])
        if len(paths) < n_train + n_test:
            raise PuzzleError(f"{len(paths)} images found, {n_train + n_test} required")
        sources = [("path", p) for p in paths[: n_train + n_test]]
    puzzles = []
    train_levels = corpus["train_missing"]
    for i in range(n_train):
        key, src = sources[i]
        puzzles.append(_entry(f"train-{i:05d}", key, src, g, train_levels[i % len(train_levels)],
                              derive_seed(seeds["shuffle"], "train", i), "train"))
    for j in range(n_test):
        key, src = sources[n_train + j]
        for m in corpus["test_missing"]:
            puzzles.append(_entry(f"test-{j:05d}-m{m}", key, src, g, m,
                                  derive_seed(seeds["shuffle"], "test", j, m), "test"))
    return {
        "format": MANIFEST_FORMAT,
        "config_digest": config_digest,
        "stage_digest": stage_digest,
        "grid_side": g,
        "piece_px": cfg["piece_px"],
        "source": corpus["source"],
        "puzzles": puzzles,
    }


def write_manifest(path, manifest):
    text = json.dumps(manifest, indent=1, ensure_ascii=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")
    return text


def read_manifest(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise PuzzleError(f"cannot read manifest {path}: {exc}") from exc
    if data.get("format") != MANIFEST_FORMAT:
        raise PuzzleError(f"{path} is not a {MANIFEST_FORMAT} manifest")
    return data


def entry_image(entry, piece_px):
    g = entry["grid_side"]
    if "seed" in entry:
        return synth_image(entry["seed"], g * piece_px)
    return prepare_image(load_image(entry["path"]), g, piece_px)


def entry_puzzle(entry, piece_px):
    return make_puzzle(entry_image(entry, piece_px), entry["grid_side"], entry["shuffle_seed"],
                       missing_count=entry["missing_count"], puzzle_id=entry["id"])


def load_puzzles(manifest, split=None):
    px = manifest["piece_px"]
    return [entry_puzzle(e, px) for e in manifest["puzzles"] if split is None or e["split"] == split]
