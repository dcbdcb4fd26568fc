"""Run configuration, content digests and stage lineage."""
import copy
import hashlib
import json
import os
from dataclasses import asdict
from pathlib import Path

import yaml

from .model import ELEMENT_WISE, INDEX_WISE, ModelConfig
from .tokenizer import TokenizerConfig
from .train import TrainConfig

OUTPUT_ENV = "TOKENJIGSAW_OUT"


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "output_dir": None,
    "grid_side": 3,
    "piece_px": 32,
    "seeds": {"image": 0, "shuffle": 1, "codebook": 2, "init": 3, "train": 4, "analysis": 5},
    "corpus": {
        "source": "synth",  # "synth" or "images"
        "image_dir": None,
        "n_train": 2000,
        "n_test": 200,
        "train_missing": [0],
        "test_missing": [0],
    },
    "tokenizer": asdict(TokenizerConfig()),
    "model": {
        "mode": INDEX_WISE,
        "d_model": 128,
        "n_heads": 4,
        "n_enc_layers": 2,
        "n_dec_layers": 2,
        "d_ff": 512,
        "dropout_rate": 0.2,
        "dtype": "float32",
    },
    "trainer": {k: v for k, v in asdict(TrainConfig()).items() if k != "seed"},
    "eval": {"batch_size": 256, "score_missing": "all"},
    "analysis": {"uniform_trials": 200},
}

# config sections that feed each stage, cumulatively
STAGE_KEYS = {
    "dataset": ["grid_side", "piece_px", "corpus", "seeds.image", "seeds.shuffle"],
    "codebook": ["tokenizer", "seeds.codebook"],
    "tokens": [],
    "model": ["model", "trainer", "seeds.init", "seeds.train"],
}
STAGE_ORDER = ["dataset", "codebook", "tokens", "model"]


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _parse_scalar(text):
    return yaml.safe_load(text)


def apply_overrides(cfg, overrides):
    """Apply ``a.b.c=value`` strings (values parsed as YAML scalars)."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        node = cfg
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config section {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = _parse_scalar(raw)
    return cfg


def load_config(path=None, overrides=None):
    data = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = apply_overrides(_merge(DEFAULTS, data), overrides)
    validate(cfg)
    return cfg


def validate(cfg):
    g, px = cfg["grid_side"], cfg["piece_px"]
    if not isinstance(g, int) or g < 1:
        raise ConfigError(f"grid_side must be a positive integer, got {g!r}")
    if not isinstance(px, int) or px < 1:
        raise ConfigError(f"piece_px must be a positive integer, got {px!r}")
    corpus = cfg["corpus"]
    if corpus["source"] not in ("synth", "images"):
        raise ConfigError(f"corpus.source must be 'synth' or 'images', got {corpus['source']!r}")
    if corpus["source"] == "images" and not corpus["image_dir"]:
        raise ConfigError("corpus.image_dir is required when corpus.source is 'images'")
    for key in ("train_missing", "test_missing"):
        levels = corpus[key]
        if not levels or any(not 0 <= int(m) < g * g for m in levels):
            raise ConfigError(f"corpus.{key} must list counts in [0, {g * g})")
    try:
        tok = tokenizer_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"tokenizer: {exc}") from exc
    if px % tok.granularity:
        raise ConfigError(f"piece_px {px} is not divisible by granularity {tok.granularity}")
    try:
        model_config(cfg)
        trainer_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    for name in ("image", "shuffle", "codebook", "init", "train", "analysis"):
        if not isinstance(cfg["seeds"].get(name), int):
            raise ConfigError(f"seeds.{name} must be an integer")


def tokenizer_config(cfg):
    return TokenizerConfig(**cfg["tokenizer"])


def model_config(cfg):
    tok = tokenizer_config(cfg)
    m = dict(cfg["model"])
    mode = m.pop("mode")
    n = cfg["grid_side"] ** 2
    build = ModelConfig.element_wise if mode == ELEMENT_WISE else ModelConfig.index_wise
    if mode not in (INDEX_WISE, ELEMENT_WISE):
        raise ConfigError(f"model.mode must be {INDEX_WISE!r} or {ELEMENT_WISE!r}")
    return build(tok, n, **m)


def trainer_config(cfg):
    return TrainConfig(seed=cfg["seeds"]["train"], **cfg["trainer"])


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest(obj):
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def _pick(cfg, dotted):
    node = cfg
    for part in dotted.split("."):
        node = node[part]
    return node


def stage_digest(cfg, stage):
    """Digest of every config value feeding ``stage`` and the stages before it."""
    keys = []
    for name in STAGE_ORDER[:STAGE_ORDER.index(stage) + 1]:
        keys.extend(STAGE_KEYS[name])
    return digest({k: _pick(cfg, k) for k in keys})


def config_digest(cfg):
    return digest({k: v for k, v in cfg.items() if k != "output_dir"})


def output_dir(cfg, override=None):
    path = override or cfg.get("output_dir") or os.environ.get(OUTPUT_ENV)
    if not path:
        path = "runs/default"
    return Path(path)


def dump_config(cfg):
    return yaml.safe_dump(cfg, sort_keys=False)
