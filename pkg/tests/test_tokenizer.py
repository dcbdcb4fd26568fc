import json
from pathlib import Path

import numpy as np
import pytest

from tokenjigsaw.numerics import KMeansModel
from tokenjigsaw.puzzle import Piece, PuzzleInstance
from tokenjigsaw.tokenizer import (Codebook, TokenizerConfig, TokenizerError, border_cells,
                                   dump_token_dataset, encode_many, encode_puzzle, encode_tokens,
                                   extract_patches, fit_codebook, format_debug, load_token_dataset,
                                   parse_debug, super_token_length, tokenize_pieces)

from conftest import small_puzzles

GOLDEN = json.loads((Path(__file__).parent / "golden" / "t4_clockwise.json").read_text())


def _golden_codebook():
    ids = np.arange(16)
    centroids = np.stack([ids / 15.0, (ids % 4) / 3.0, (ids // 4) / 3.0], axis=1)
    cfg = TokenizerConfig(granularity=4, vocab_size=16, use_pca=False)
    km = KMeansModel(centroids=centroids, inertia=0.0, iterations_run=0)
    return Codebook(config=cfg, km=km, piece_px=4, channels=3)


def _golden_piece(cb, j, position, present=True):
    px = np.zeros((4, 4, 3))
    for r in range(4):
        for c in range(4):
            px[r, c] = cb.km.centroids[(4 * r + c + 5 * j) % 16]
    return Piece(px, position, present)


def _golden_puzzle(cb, missing=None):
    pieces = tuple(_golden_piece(cb, j, GOLDEN["positions_of_piece"][j], j != missing)
                   for j in GOLDEN["shuffled_pieces"])
    return PuzzleInstance(pieces, 2, 0, missing_count=int(missing is not None))


def test_golden_border_order():
    cells = border_cells(4, clockwise=True)
    assert [4 * r + c for r, c in cells] == GOLDEN["border_rowmajor"]


def test_golden_super_tokens():
    cb = _golden_codebook()
    toks = tokenize_pieces(cb, [_golden_piece(cb, j, 0) for j in range(4)])
    assert toks.tolist() == GOLDEN["super_tokens"]
    assert cb.config.tau == 12


def test_golden_encoder_sequence():
    cb = _golden_codebook()
    enc = encode_puzzle(cb, _golden_puzzle(cb))
    assert enc.encoder_ids.tolist() == GOLDEN["encoder_ids"]
    assert enc.piece_order.tolist() == GOLDEN["piece_order"]
    assert enc.labels.tolist() == GOLDEN["labels"]
    assert len(enc.encoder_ids) == 4 * 12 + 3


def test_golden_masked_sequence():
    cb = _golden_codebook()
    enc = encode_puzzle(cb, _golden_puzzle(cb, missing=GOLDEN["missing_piece"]))
    assert enc.encoder_ids.tolist() == GOLDEN["masked_encoder_ids"]
    assert enc.piece_order.tolist() == GOLDEN["masked_piece_order"]
    assert enc.labels.tolist() == GOLDEN["masked_labels"]


@pytest.mark.parametrize("T,tau", [(1, 1), (2, 4), (3, 8), (4, 12), (8, 28)])
def test_super_token_length(T, tau):
    assert super_token_length(T) == tau
    assert len(border_cells(T)) == tau
    assert len(set(border_cells(T))) == tau


def test_raster_and_full_grid_variants():
    assert border_cells(3, clockwise=False) == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 2),
                                                 (2, 0), (2, 1), (2, 2)]
    assert super_token_length(3, border_only=False) == 9


@pytest.mark.parametrize("n,T,sep", [(9, 2, True), (9, 4, True), (16, 3, False), (4, 1, True)])
def test_sequence_length_law(n, T, sep):
    cfg = TokenizerConfig(granularity=T, vocab_size=16, use_separator=sep)
    toks = np.random.default_rng(0).integers(0, 16, size=(n, cfg.tau))
    enc = encode_tokens(toks, np.arange(n), np.zeros(n, bool), cfg)
    assert len(enc.encoder_ids) == n * cfg.tau + (n - 1) * sep == cfg.encoder_length(n)


def test_masking_replaces_exactly_tau_ids():
    cfg = TokenizerConfig(granularity=3, vocab_size=32)
    rng = np.random.default_rng(1)
    for m in range(4):
        toks = rng.integers(0, 32, size=(9, cfg.tau))
        missing = np.zeros(9, bool)
        missing[rng.choice(9, m, replace=False)] = True
        enc = encode_tokens(toks, np.arange(9), missing, cfg)
        assert int((enc.encoder_ids == cfg.mask_id).sum()) == m * cfg.tau
        assert int((enc.encoder_ids == cfg.sep_id).sum()) == 8
        spans = enc.spans()
        for i, orig in enumerate(enc.piece_order):
            if missing[orig]:
                assert np.all(spans[i] == cfg.mask_id)
            else:
                np.testing.assert_array_equal(spans[i], toks[orig])


def test_lex_order_ties_by_shuffled_index():
    cfg = TokenizerConfig(granularity=2, vocab_size=8)
    toks = np.array([[3, 1, 1, 1], [0, 5, 5, 5], [3, 1, 1, 1], [0, 5, 5, 4]])
    enc = encode_tokens(toks, [0, 1, 2, 3], np.zeros(4, bool), cfg)
    assert enc.piece_order.tolist() == [3, 1, 0, 2]
    no_lex = encode_tokens(toks, [0, 1, 2, 3], np.zeros(4, bool), TokenizerConfig(granularity=2, vocab_size=8, lex_order=False))
    assert no_lex.piece_order.tolist() == [0, 1, 2, 3]


def test_solved_sequence_is_grid_order():
    cfg = TokenizerConfig(granularity=2, vocab_size=8)
    toks = np.array([[1] * 4, [2] * 4, [3] * 4, [4] * 4])
    enc = encode_tokens(toks, [2, 0, 3, 1], np.zeros(4, bool), cfg)
    assert enc.solved_sequence(cfg.sep_id).tolist() == [2] * 4 + [8] + [4] * 4 + [8] + [1] * 4 + [8] + [3] * 4


def test_extract_patches_row_major():
    px = np.arange(4 * 4 * 1, dtype=float).reshape(4, 4, 1) / 15
    patches = extract_patches(Piece(px, 0), 2)
    np.testing.assert_array_equal(patches[1], px[0:2, 2:4].reshape(-1))
    np.testing.assert_array_equal(patches[2], px[2:4, 0:2].reshape(-1))


def test_codebook_roundtrip_bit_identical(tiny_codebook, tmp_path):
    raw = tiny_codebook.to_bytes()
    back = Codebook.from_bytes(raw)
    assert back.to_bytes() == raw
    np.testing.assert_array_equal(back.km.centroids, tiny_codebook.km.centroids)
    path = tmp_path / "cb.pzcb"
    digest = tiny_codebook.save(path)
    assert Codebook.load(path).digest == digest
    assert path.read_bytes()[:4] == b"PZCB"


def test_codebook_fit_deterministic(tiny_codebook):
    pieces = [p for pz in small_puzzles(20) for p in pz.pieces]
    again = fit_codebook(pieces, tiny_codebook.config, seed=0)
    assert again.to_bytes() == tiny_codebook.to_bytes()


def test_fit_codebook_rejects_insufficient_data():
    flat = [Piece(np.full((8, 8, 3), 0.5), i) for i in range(10)]
    with pytest.raises(TokenizerError, match="insufficient"):
        fit_codebook(flat, TokenizerConfig(granularity=2, reduced_dim=4, vocab_size=16), seed=0)


def test_geometry_mismatch(tiny_codebook):
    with pytest.raises(TokenizerError):
        tokenize_pieces(tiny_codebook, [Piece(np.zeros((6, 6, 3)), 0)])


def test_token_dataset_roundtrip(tiny_codebook):
    encoded = encode_many(tiny_codebook, small_puzzles(6, missing=1))
    raw = dump_token_dataset(encoded, {"split": "test"})
    meta, back = load_token_dataset(raw)
    assert meta["count"] == 6 and meta["split"] == "test"
    for a, b in zip(encoded, back):
        for field in ("encoder_ids", "labels", "piece_order", "missing"):
            np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
        assert a.puzzle_id == b.puzzle_id
    assert dump_token_dataset(back, {"split": "test"}) == raw


def test_encode_many_matches_single(tiny_codebook):
    puzzles = small_puzzles(3)
    batch = encode_many(tiny_codebook, puzzles)
    for pz, enc in zip(puzzles, batch):
        np.testing.assert_array_equal(encode_puzzle(tiny_codebook, pz).encoder_ids, enc.encoder_ids)


def test_debug_text_roundtrip():
    ids = np.array([3, 4, 16, 0, 1, 16, 17, 17])
    text = format_debug(ids, 16)
    assert text == "3 4 | 0 1 | 17 17"
    np.testing.assert_array_equal(parse_debug(text, 16), ids)
