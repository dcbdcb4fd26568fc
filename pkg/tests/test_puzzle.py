import numpy as np
import pytest
from PIL import Image

from tokenjigsaw.imageio import load_image, prepare_image, read_ppm, write_ppm
from tokenjigsaw.puzzle import (PuzzleError, cut_image, fisher_yates, is_permutation,
                                make_puzzle, mark_missing, reassemble, shuffle, synth_image)
from tokenjigsaw.rng import derive_seed, make_rng


def test_cut_is_row_major():
    img = synth_image(1, 96)
    pieces = cut_image(img, 3)
    assert len(pieces) == 9
    for q, piece in enumerate(pieces):
        r, c = divmod(q, 3)
        assert piece.source_position == q
        np.testing.assert_array_equal(piece.pixels, img[32 * r:32 * (r + 1), 32 * c:32 * (c + 1)])


def test_reassemble_inverts_cut():
    img = synth_image(2, 64)
    pz = make_puzzle(img, 4, shuffle_seed=7)
    np.testing.assert_array_equal(reassemble(pz.pieces, 4, pz.labels), img)


def test_cut_rejects_indivisible_side():
    with pytest.raises(PuzzleError, match="remainder 1"):
        cut_image(np.zeros((10, 10, 3)), 3)


def test_cut_rejects_non_square_and_bad_values():
    with pytest.raises(PuzzleError):
        cut_image(np.zeros((9, 12, 3)), 3)
    with pytest.raises(PuzzleError):
        cut_image(np.full((9, 9, 3), 1.5), 3)


def test_shuffle_deterministic_and_seed_sensitive():
    pieces = cut_image(synth_image(3, 96), 3)
    a = shuffle(pieces, 11).labels
    np.testing.assert_array_equal(a, shuffle(pieces, 11).labels)
    assert is_permutation(a, 9)
    others = [tuple(shuffle(pieces, s).labels) for s in range(20)]
    assert len(set(others)) > 10


def test_fisher_yates_uniform_on_three():
    rng = make_rng(0, "fy")
    counts = {}
    trials = 12000
    for _ in range(trials):
        key = tuple(fisher_yates(3, rng))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    expected = trials / 6
    chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
    assert chi2 < 20.5  # p ~ 0.001 at 5 dof


def test_mark_missing_exact_count():
    pz = make_puzzle(synth_image(4, 48), 3, 0)
    for m in range(9):
        out = mark_missing(pz, m, seed=5)
        assert out.missing_flags.sum() == m == out.missing_count
    with pytest.raises(PuzzleError):
        mark_missing(pz, 9, seed=0)


def test_missing_pieces_render_black():
    pz = make_puzzle(synth_image(5, 48), 3, 0, missing_count=2)
    img = reassemble(pz.pieces, 3, pz.labels)
    for piece in pz.pieces:
        r, c = divmod(piece.source_position, 3)
        block = img[16 * r:16 * (r + 1), 16 * c:16 * (c + 1)]
        if piece.present:
            np.testing.assert_array_equal(block, piece.pixels)
        else:
            assert not block.any()


def test_synth_image_deterministic_in_range():
    a, b = synth_image(9, 40), synth_image(9, 40)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (40, 40, 3) and 0 <= a.min() and a.max() <= 1
    assert not np.array_equal(a, synth_image(10, 40))


def test_rng_keys_independent():
    assert derive_seed(0, "a") != derive_seed(0, "b")
    assert derive_seed(0, "a", 1) == derive_seed(0, "a", 1)
    x = make_rng(3, "k").random(4)
    np.testing.assert_array_equal(x, make_rng(3, "k").random(4))


def test_ppm_roundtrip(tmp_path):
    img = synth_image(6, 24)
    path = tmp_path / "x.ppm"
    write_ppm(path, img)
    back = read_ppm(path)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    write_ppm(path, back)
    np.testing.assert_array_equal(read_ppm(path), back)


def test_png_ingest_and_prepare(tmp_path):
    arr = (synth_image(7, 50)[:, :45] * 255).round().astype(np.uint8)
    Image.fromarray(arr).save(tmp_path / "x.png")
    img = load_image(tmp_path / "x.png")
    assert img.shape == (50, 45, 3)
    prep = prepare_image(img, 3, 8)
    assert prep.shape == (24, 24, 3)
    assert prepare_image(img, 3).shape == (45, 45, 3)


def test_load_image_errors(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    with pytest.raises(PuzzleError):
        load_image(bad)
    with pytest.raises(PuzzleError):
        load_image(tmp_path / "absent.ppm")
