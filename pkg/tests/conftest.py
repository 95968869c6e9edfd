import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gridtx import CorpusConfig, GridMap, Patch, generate_corpus

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SMALL = dict(target_cells=40_000, patch_side_m=6.4)


@pytest.fixture(scope="session")
def small_corpus():
    """Three frames of roughly 40k cells, fast enough for unit tests."""
    return generate_corpus(CorpusConfig(seed=7, **SMALL), 3)


@pytest.fixture(scope="session")
def full_frame():
    return generate_corpus(CorpusConfig(seed=1), 1)[0]


def random_grid(rng: np.random.Generator, n_patches: int = 3, side: int = 8, quantized: bool = False) -> GridMap:
    patches = []
    for i in range(n_patches):
        if quantized:
            b = rng.integers(0, 256, size=(side, side), dtype=np.uint8)
            d = (rng.integers(0, 256, size=(side, side)) % (256 - b.astype(np.int64))).astype(np.uint8)
        else:
            b = rng.random((side, side), dtype=np.float32)
            # the 0.999 margin absorbs float32 rounding of the product
            d = (rng.random((side, side)) * (1.0 - b.astype(np.float64)) * 0.999).astype(np.float32)
        cells = np.stack([b, d], axis=-1)
        patches.append(Patch(i + 1, (16.0 * i, -8.0), 0.1 * (1 + i % 3), side, cells))
    return GridMap(0.5, tuple(patches), timestamp=123_456_789, frame_id="map")


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
