import numpy as np
import pytest

from tokenjigsaw.puzzle import make_puzzle, synth_image
from tokenjigsaw.tokenizer import TokenizerConfig, fit_codebook


def small_puzzles(n, grid_side=3, piece_px=8, seed=0, missing=0):
    return [make_puzzle(synth_image(seed * 1000 + i, grid_side * piece_px), grid_side, i,
                        missing_count=missing, puzzle_id=f"p{i}") for i in range(n)]


@pytest.fixture(scope="session")
def tiny_codebook():
    cfg = TokenizerConfig(granularity=2, reduced_dim=8, vocab_size=16)
    pieces = [p for pz in small_puzzles(20) for p in pz.pieces]
    return fit_codebook(pieces, cfg, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria record one line each; printed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
