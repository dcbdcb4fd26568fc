"""Square jigsaw puzzles: cutting, shuffling, missing pieces and a procedural
image source.

Images are ``(side, side, channels)`` float64 arrays with values in [0, 1].
Grid positions are row-major: position ``r * G + c`` is row ``r``, column ``c``.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .rng import make_rng


class PuzzleError(ValueError):
    pass


@dataclass(frozen=True)
class Piece:
    pixels: np.ndarray
    source_position: int
    present: bool = True

    @property
    def side(self):
        return self.pixels.shape[0]


@dataclass(frozen=True)
class PuzzleInstance:
    pieces: tuple
    grid_side: int
    shuffle_seed: int
    missing_count: int = 0
    puzzle_id: str = ""

    @property
    def n_pieces(self):
        return self.grid_side * self.grid_side

    @property
    def labels(self):
        """Grid position of each piece in the current (shuffled) order."""
        return np.array([p.source_position for p in self.pieces], dtype=np.int64)

    @property
    def missing_flags(self):
        return np.array([not p.present for p in self.pieces], dtype=bool)


def as_image(data):
    """Validate and normalise an array into the package's image convention."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise PuzzleError(f"image must be HxWxC, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min(initial=0.0) < 0.0 or img.max(initial=0.0) > 1.0:
        raise PuzzleError("image values must lie in [0, 1]")
    return img


def cut_image(img, grid_side):
    """Cut a square image into ``grid_side**2`` pieces in row-major order."""
    img = as_image(img)
    h, w = img.shape[:2]
    if grid_side < 1:
        raise PuzzleError(f"grid_side must be >= 1, got {grid_side}")
    if h != w:
        raise PuzzleError(f"image must be square, got {h}x{w}")
    if h % grid_side:
        raise PuzzleError(
            f"image side {h} is not divisible by grid side {grid_side} (remainder {h % grid_side})"
        )
    s = h // grid_side
    pieces = []
    for r in range(grid_side):
        for c in range(grid_side):
            block = img[r * s:(r + 1) * s, c * s:(c + 1) * s].copy()
            block.setflags(write=False)
            pieces.append(Piece(block, r * grid_side + c))
    return pieces


def reassemble(pieces, grid_side, positions=None):
    """Place ``pieces`` on the grid. ``positions[i]`` is the slot of piece i;
    defaults to each piece's own source position. Missing pieces are drawn black."""
    if positions is None:
        positions = [p.source_position for p in pieces]
    positions = [int(q) for q in positions]
    if sorted(positions) != list(range(grid_side * grid_side)):
        raise PuzzleError("positions must be a permutation of the grid")
    s = pieces[0].side
    ch = pieces[0].pixels.shape[2]
    out = np.zeros((s * grid_side, s * grid_side, ch))
    for piece, q in zip(pieces, positions):
        r, c = divmod(q, grid_side)
        if piece.present:
            out[r * s:(r + 1) * s, c * s:(c + 1) * s] = piece.pixels
    return out


def fisher_yates(n, rng):
    """Permutation of range(n) by the Durstenfeld form of Fisher-Yates."""
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def shuffle(pieces, seed, grid_side=None, puzzle_id=""):
    pieces = list(pieces)
    if grid_side is None:
        grid_side = int(round(len(pieces) ** 0.5))
    if grid_side * grid_side != len(pieces):
        raise PuzzleError(f"{len(pieces)} pieces do not form a square grid")
    order = fisher_yates(len(pieces), make_rng(seed, "shuffle"))
    return PuzzleInstance(
        pieces=tuple(pieces[i] for i in order),
        grid_side=grid_side,
        shuffle_seed=int(seed),
        missing_count=sum(not p.present for p in pieces),
        puzzle_id=puzzle_id,
    )


def mark_missing(pz, m, seed):
    """Flag ``m`` pieces, chosen uniformly from ``seed``, as missing."""
    n = pz.n_pieces
    if not 0 <= m < n:
        raise PuzzleError(f"missing count must satisfy 0 <= m < {n}, got {m}")
    if m == 0:
        return pz
    chosen = set(make_rng(seed, "missing").choice(n, size=m, replace=False).tolist())
    pieces = tuple(
        replace(p, present=False) if i in chosen else p for i, p in enumerate(pz.pieces)
    )
    return replace(pz, pieces=pieces, missing_count=sum(not p.present for p in pieces))


def make_puzzle(img, grid_side, shuffle_seed, missing_count=0, missing_seed=None, puzzle_id=""):
    pz = shuffle(cut_image(img, grid_side), shuffle_seed, grid_side, puzzle_id)
    if missing_count:
        seed = shuffle_seed if missing_seed is None else missing_seed
        pz = mark_missing(pz, missing_count, seed)
    return pz


def is_permutation(values, n=None):
    values = [int(v) for v in values]
    n = len(values) if n is None else n
    return len(values) == n and sorted(values) == list(range(n))


# --- procedural images ------------------------------------------------------

SKY = np.array([0.55, 0.7, 0.95])
GROUND = np.array([0.35, 0.35, 0.15])


def _palette(rgb, channels):
    # grey or extra channels fall back to the mean level
    return rgb.copy() if channels == 3 else np.full(channels, rgb.mean())


def synth_image(seed, side, channels=3, falloff=0.85):
    """Deterministic procedural image with coherent low-frequency structure.

    Layers, back to front: a sky/ground blend across a tilted horizon, two
    low-frequency cosine fields, an oriented band texture, a soft blob near
    the centre, and illumination from the upper left that dims linearly by up
    to ``falloff`` towards the lower right. Sky and ground colours are jittered
    around a bluish and an earthy base colour, so the upper half of an image
    tends to look different from the lower half, as in outdoor photographs.
    Neighbouring pieces share colour and band phase along their common edge.
    """
    if side < 1:
        raise PuzzleError(f"side must be >= 1, got {side}")
    if not 0.0 <= falloff < 1.0:
        raise PuzzleError(f"falloff must be in [0, 1), got {falloff}")
    rng = make_rng(seed, "synth")
    yy, xx = np.meshgrid(
        (np.arange(side) + 0.5) / side, (np.arange(side) + 0.5) / side, indexing="ij"
    )

    sky = _palette(SKY, channels) + rng.uniform(-0.45, 0.05, size=channels)
    ground = _palette(GROUND, channels) + rng.uniform(-0.15, 0.45, size=channels)
    horizon = rng.uniform(0.3, 0.7)
    tilt = rng.uniform(-0.3, 0.3)
    softness = rng.uniform(0.03, 0.15)
    t = 1.0 / (1.0 + np.exp(-((yy - horizon - tilt * (xx - 0.5)) / softness)))
    img = (1 - t)[..., None] * sky + t[..., None] * ground

    for _ in range(2):
        fy, fx = rng.uniform(-2.0, 2.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
        img += wave[..., None] * rng.uniform(0.03, 0.1, size=channels)

    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(2.5, 6.0)
    phase = rng.uniform(0, 2 * np.pi)
    bands = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    img += bands[..., None] * rng.uniform(0.04, 0.12, size=channels)

    cy, cx = 0.5 + rng.uniform(-0.1, 0.1, size=2)
    radius = rng.uniform(0.12, 0.22)
    blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius ** 2))[..., None]
    color = rng.uniform(0.0, 1.0, size=channels)
    strength = rng.uniform(0.4, 0.8)
    img = img * (1 - strength * blob) + strength * blob * color

    wy, wx = rng.uniform(0.5, 1.0, size=2)
    light = 1.0 - falloff * (wy * yy + wx * xx) / (wy + wx)
    img *= light[..., None]
    img += rng.normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0)
