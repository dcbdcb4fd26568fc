"""PNG / binary PPM reading and PPM debug dumps."""
import re
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .puzzle import PuzzleError

_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def read_ppm(path):
    raw = Path(path).read_bytes()
    m = _PPM_HEADER.match(raw)
    if not m:
        raise PuzzleError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 65536:
        raise PuzzleError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    body = raw[m.end():]
    need = w * h * 3 * dtype.itemsize
    if len(body) < need:
        raise PuzzleError(f"{path}: truncated pixel data ({len(body)} < {need} bytes)")
    arr = np.frombuffer(body[:need], dtype=dtype).reshape(h, w, 3)
    return arr.astype(np.float64) / maxval


def write_ppm(path, img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    data = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def read_png(path):
    with PILImage.open(path) as im:
        im = im.convert("RGB")
        return np.asarray(im, dtype=np.float64) / 255.0


def load_image(path):
    path = Path(path)
    try:
        if path.suffix.lower() in (".ppm", ".pnm"):
            return read_ppm(path)
        return read_png(path)
    except (OSError, ValueError) as exc:
        raise PuzzleError(f"cannot read image {path}: {exc}") from exc


def prepare_image(img, grid_side, piece_px=None):
    """Centre-crop to the largest square whose side is a multiple of
    ``grid_side``; resample to ``grid_side * piece_px`` when given."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    side = min(h, w)
    side -= side % grid_side
    if side == 0:
        raise PuzzleError(f"image {h}x{w} is too small for a {grid_side}x{grid_side} grid")
    top, left = (h - side) // 2, (w - side) // 2
    img = img[top:top + side, left:left + side]
    if piece_px is not None and side != grid_side * piece_px:
        target = grid_side * piece_px
        u8 = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
        im = PILImage.fromarray(u8).resize((target, target), PILImage.BILINEAR)
        img = np.asarray(im, dtype=np.float64) / 255.0
    return img
