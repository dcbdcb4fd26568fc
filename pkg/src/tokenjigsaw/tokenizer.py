"""Piece tokenizer: patches -> PCA -> k-means ids -> border super-tokens.

A fitted :class:`Codebook` maps one piece to a super-token of ``tau`` ids.
Content ids occupy ``0..k-1``; the special ids follow directly after:
``sep = k``, ``mask = k + 1``, ``pad = k + 2``, ``bos = k + 3``.
"""
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import container
from .numerics import (KMeansModel, PcaModel, kmeans_assign, kmeans_fit, pca_fit,
                       pca_transform, subsample_rows)

CODEBOOK_MAGIC = b"PZCB\x00\x01\x00\x00"
TOKENS_MAGIC = b"PZTK\x00\x01\x00\x00"
N_SPECIALS = 4


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class TokenizerConfig:
    granularity: int = 2
    reduced_dim: int = 32
    vocab_size: int = 256
    use_pca: bool = True
    border_only: bool = True
    clockwise: bool = True
    lex_order: bool = True
    use_separator: bool = True
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6
    max_fit_patches: int = 2_000_000

    def __post_init__(self):
        if self.granularity < 1:
            raise TokenizerError(f"granularity must be >= 1, got {self.granularity}")
        if self.vocab_size < 2:
            raise TokenizerError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.use_pca and self.reduced_dim < 1:
            raise TokenizerError(f"reduced_dim must be >= 1, got {self.reduced_dim}")

    @property
    def tau(self):
        return super_token_length(self.granularity, self.border_only)

    @property
    def sep_id(self):
        return self.vocab_size

    @property
    def mask_id(self):
        return self.vocab_size + 1

    @property
    def pad_id(self):
        return self.vocab_size + 2

    @property
    def bos_id(self):
        return self.vocab_size + 3

    @property
    def vocab_in(self):
        return self.vocab_size + N_SPECIALS

    def encoder_length(self, n_pieces):
        return n_pieces * self.tau + (n_pieces - 1) * int(self.use_separator)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


def super_token_length(T, border_only=True):
    if not border_only:
        return T * T
    return max(1, 4 * (T - 1))


def border_cells(T, clockwise=True):
    """Border cells of a TxT grid as (row, col).

    Clockwise starts at (0, 0): top row left to right, right column downwards,
    bottom row right to left, left column upwards. Otherwise raster order.
    """
    if T == 1:
        return [(0, 0)]
    if not clockwise:
        return [(r, c) for r in range(T) for c in range(T) if r in (0, T - 1) or c in (0, T - 1)]
    cells = [(0, c) for c in range(T)]
    cells += [(r, T - 1) for r in range(1, T)]
    cells += [(T - 1, c) for c in range(T - 2, -1, -1)]
    cells += [(r, 0) for r in range(T - 2, 0, -1)]
    return cells


def selection_indices(cfg):
    """Indices into the row-major patch grid, in emission order."""
    T = cfg.granularity
    if not cfg.border_only:
        return np.arange(T * T)
    return np.array([r * T + c for r, c in border_cells(T, cfg.clockwise)])


def extract_patches(piece, T):
    """``(T*T, (side/T)**2 * C)`` matrix of flattened patches, row-major."""
    px = piece.pixels if hasattr(piece, "pixels") else np.asarray(piece)
    side, _, C = px.shape
    if side % T:
        raise TokenizerError(f"piece side {side} is not divisible by T={T}")
    p = side // T
    return (px.reshape(T, p, T, p, C).transpose(0, 2, 1, 3, 4)
            .reshape(T * T, p * p * C).astype(np.float64))


@dataclass
class Codebook:
    config: TokenizerConfig
    km: KMeansModel
    pca: PcaModel = None
    piece_px: int = 32
    channels: int = 3
    lineage: dict = field(default_factory=dict)

    @property
    def k(self):
        return self.km.k

    def project(self, patches):
        return pca_transform(self.pca, patches) if self.config.use_pca else patches

    def to_bytes(self):
        cfg = self.config
        meta = {
            "kind": "codebook",
            "config": asdict(cfg),
            "piece_px": self.piece_px,
            "channels": self.channels,
            "special_ids": {"sep": cfg.sep_id, "mask": cfg.mask_id, "pad": cfg.pad_id, "bos": cfg.bos_id},
            "kmeans": {"inertia": float(self.km.inertia), "iterations_run": self.km.iterations_run,
                       "inertia_history": [float(v) for v in self.km.inertia_history]},
            "lineage": dict(self.lineage),
        }
        arrays = {"centroids": self.km.centroids}
        if self.pca is not None:
            arrays.update(pca_mean=self.pca.mean, pca_components=self.pca.components,
                          pca_explained_variance=self.pca.explained_variance)
        return container.dumps(CODEBOOK_MAGIC, meta, arrays)

    @classmethod
    def from_bytes(cls, raw):
        meta, arrays = container.loads(raw, CODEBOOK_MAGIC)
        km = KMeansModel(centroids=arrays["centroids"], inertia=meta["kmeans"]["inertia"],
                         iterations_run=meta["kmeans"]["iterations_run"],
                         inertia_history=meta["kmeans"]["inertia_history"])
        pca = None
        if "pca_components" in arrays:
            pca = PcaModel(mean=arrays["pca_mean"], components=arrays["pca_components"],
                           explained_variance=arrays["pca_explained_variance"])
        return cls(config=TokenizerConfig.from_dict(meta["config"]), km=km, pca=pca,
                   piece_px=meta["piece_px"], channels=meta["channels"],
                   lineage=meta.get("lineage", {}))

    def save(self, path):
        raw = self.to_bytes()
        with open(path, "wb") as fh:
            fh.write(raw)
        return container.digest_bytes(raw)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @property
    def digest(self):
        return container.digest_bytes(self.to_bytes())


def fit_codebook(train_pieces, cfg, seed):
    """Fit PCA (optional) and k-means over every patch of ``train_pieces``."""
    blocks = []
    geometry = None
    for piece in train_pieces:
        px = piece.pixels
        if geometry is None:
            geometry = (px.shape[0], px.shape[2])
        elif (px.shape[0], px.shape[2]) != geometry:
            raise TokenizerError("training pieces differ in size or channel count")
        blocks.append(extract_patches(piece, cfg.granularity))
    if not blocks:
        raise TokenizerError("no training pieces")
    X = np.concatenate(blocks)
    X = subsample_rows(X, cfg.max_fit_patches, seed)
    pca = None
    if cfg.use_pca:
        if cfg.reduced_dim > X.shape[1]:
            raise TokenizerError(f"reduced_dim {cfg.reduced_dim} exceeds patch dimension {X.shape[1]}")
        if cfg.reduced_dim > X.shape[0] - 1:
            raise TokenizerError(f"insufficient data: {X.shape[0]} patches for d={cfg.reduced_dim}")
        pca = pca_fit(X, cfg.reduced_dim)
        X = pca_transform(pca, X)
    distinct = np.unique(X, axis=0).shape[0]
    if distinct < cfg.vocab_size:
        raise TokenizerError(
            f"insufficient data: {distinct} distinct patch vectors for k={cfg.vocab_size}"
        )
    km = kmeans_fit(X, cfg.vocab_size, seed, max_iter=cfg.kmeans_max_iter, tol=cfg.kmeans_tol)
    return Codebook(config=cfg, km=km, pca=pca, piece_px=geometry[0], channels=geometry[1])


def _check_geometry(cb, px):
    if px.shape[0] != cb.piece_px or px.shape[1] != cb.piece_px or px.shape[2] != cb.channels:
        raise TokenizerError(
            f"piece of shape {px.shape} does not match codebook geometry "
            f"{cb.piece_px}x{cb.piece_px}x{cb.channels}"
        )


def patch_ids(cb, pieces):
    """Nearest-centroid id of every patch: ``(n_pieces, T*T)``, row-major."""
    T = cb.config.granularity
    mats = []
    for piece in pieces:
        _check_geometry(cb, piece.pixels)
        mats.append(extract_patches(piece, T))
    if not mats:
        return np.zeros((0, T * T), dtype=np.int64)
    ids = kmeans_assign(cb.km, cb.project(np.concatenate(mats)))
    return ids.reshape(len(mats), T * T)


def tokenize_pieces(cb, pieces):
    """Super-tokens of many pieces: ``(n_pieces, tau)``."""
    return patch_ids(cb, pieces)[:, selection_indices(cb.config)]


def tokenize_piece(cb, piece):
    return tokenize_pieces(cb, [piece])[0]


@dataclass
class EncodedPuzzle:
    encoder_ids: np.ndarray
    labels: np.ndarray  # grid position of the i-th encoded piece
    piece_order: np.ndarray  # shuffled index of the i-th encoded piece
    missing: np.ndarray  # missing flag of the i-th encoded piece
    tau: int
    use_separator: bool
    puzzle_id: str = ""

    @property
    def n_pieces(self):
        return len(self.labels)

    def spans(self):
        """``(N, tau)`` super-tokens in encoder order."""
        step = self.tau + int(self.use_separator)
        idx = np.arange(self.n_pieces)[:, None] * step + np.arange(self.tau)[None, :]
        return self.encoder_ids[idx]

    def solved_sequence(self, sep_id):
        """Super-tokens laid out in grid order, joined like the encoder input."""
        spans = self.spans()
        by_position = np.empty_like(spans)
        by_position[self.labels] = spans
        return join_spans(by_position, sep_id if self.use_separator else None)


def join_spans(spans, sep_id=None):
    spans = np.asarray(spans, dtype=np.int64)
    if sep_id is None:
        return spans.reshape(-1).copy()
    n, tau = spans.shape
    out = np.full(n * (tau + 1) - 1, sep_id, dtype=np.int64)
    for i in range(n):
        out[i * (tau + 1):i * (tau + 1) + tau] = spans[i]
    return out


def encode_tokens(super_tokens, labels, missing, cfg, puzzle_id=""):
    """Assemble an encoder sequence from per-piece super-tokens (shuffle order)."""
    super_tokens = np.array(super_tokens, dtype=np.int64, copy=True)
    missing = np.asarray(missing, dtype=bool)
    labels = np.asarray(labels, dtype=np.int64)
    super_tokens[missing] = cfg.mask_id
    n = len(super_tokens)
    if cfg.lex_order:
        order = sorted(range(n), key=lambda i: (tuple(super_tokens[i].tolist()), i))
    else:
        order = list(range(n))
    order = np.array(order, dtype=np.int64)
    spans = super_tokens[order]
    return EncodedPuzzle(
        encoder_ids=join_spans(spans, cfg.sep_id if cfg.use_separator else None),
        labels=labels[order],
        piece_order=order,
        missing=missing[order],
        tau=super_tokens.shape[1],
        use_separator=cfg.use_separator,
        puzzle_id=puzzle_id,
    )


def encode_puzzle(cb, pz):
    return encode_tokens(tokenize_pieces(cb, pz.pieces), pz.labels, pz.missing_flags,
                         cb.config, pz.puzzle_id)


def encode_many(cb, puzzles):
    """``encode_puzzle`` over a list, with one batched tokenizer call."""
    puzzles = list(puzzles)
    if not puzzles:
        return []
    toks = tokenize_pieces(cb, [p for pz in puzzles for p in pz.pieces])
    out, start = [], 0
    for pz in puzzles:
        n = len(pz.pieces)
        out.append(encode_tokens(toks[start:start + n], pz.labels, pz.missing_flags,
                                 cb.config, pz.puzzle_id))
        start += n
    return out


# --- token dataset files ----------------------------------------------------

def _put_varint(buf, value):
    value = int(value)
    if value < 0:
        raise TokenizerError("varints are unsigned")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            buf.append(byte | 0x80)
        else:
            buf.append(byte)
            return


def _get_varint(raw, pos):
    shift = result = 0
    while True:
        if pos >= len(raw):
            raise TokenizerError("truncated varint")
        byte = raw[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


def _put_array(buf, values):
    _put_varint(buf, len(values))
    for v in values:
        _put_varint(buf, v)


def _get_array(raw, pos):
    n, pos = _get_varint(raw, pos)
    out = []
    for _ in range(n):
        v, pos = _get_varint(raw, pos)
        out.append(v)
    return np.array(out, dtype=np.int64), pos


def dump_token_dataset(encoded, meta):
    """Bytes of a token dataset: container header + varint-packed records.

    Each record: id (length-prefixed UTF-8), encoder ids, labels, piece order,
    missing flags; every list is a varint count followed by varint values.
    """
    body = bytearray()
    for enc in encoded:
        pid = enc.puzzle_id.encode("utf-8")
        _put_varint(body, len(pid))
        body.extend(pid)
        _put_array(body, enc.encoder_ids)
        _put_array(body, enc.labels)
        _put_array(body, enc.piece_order)
        _put_array(body, enc.missing.astype(np.int64))
    first = encoded[0] if encoded else None
    header = dict(meta)
    header.update(kind="tokens", count=len(encoded),
                  tau=first.tau if first else None,
                  use_separator=first.use_separator if first else None)
    return container.dumps(TOKENS_MAGIC, header, {"records": np.frombuffer(bytes(body), dtype=np.uint8)})


def load_token_dataset(raw):
    meta, arrays = container.loads(raw, TOKENS_MAGIC)
    body = arrays["records"].tobytes()
    out, pos = [], 0
    for _ in range(meta["count"]):
        n, pos = _get_varint(body, pos)
        pid = body[pos:pos + n].decode("utf-8")
        pos += n
        enc_ids, pos = _get_array(body, pos)
        labels, pos = _get_array(body, pos)
        order, pos = _get_array(body, pos)
        missing, pos = _get_array(body, pos)
        out.append(EncodedPuzzle(enc_ids, labels, order, missing.astype(bool),
                                 meta["tau"], meta["use_separator"], pid))
    return meta, out


def write_token_dataset(path, encoded, meta):
    raw = dump_token_dataset(encoded, meta)
    with open(path, "wb") as fh:
        fh.write(raw)
    return container.digest_bytes(raw)


def read_token_dataset(path):
    with open(path, "rb") as fh:
        return load_token_dataset(fh.read())


def format_debug(encoder_ids, sep_id):
    """Space-separated ids with ``|`` standing for the separator."""
    return " ".join("|" if int(t) == sep_id else str(int(t)) for t in encoder_ids)


def parse_debug(text, sep_id):
    return np.array([sep_id if t == "|" else int(t) for t in text.split()], dtype=np.int64)


def format_debug_dataset(encoded, sep_id):
    lines = []
    for enc in encoded:
        lines.append("\t".join([
            enc.puzzle_id,
            format_debug(enc.encoder_ids, sep_id),
            " ".join(str(int(v)) for v in enc.labels),
            " ".join(str(int(v)) for v in enc.missing),
        ]))
    return "\n".join(lines) + "\n"
