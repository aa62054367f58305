from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from steadyskip.ingest import Frame, GrayFrame


def textured_values(width: int, height: int, shift_x: float = 0.0) -> np.ndarray:
    """Smooth 2-D texture in [0, 1] with gradients everywhere; evaluating
    at x - shift_x renders the same pattern translated right by shift_x."""
    x = np.arange(width, dtype=np.float64)[None, :] - shift_x
    y = np.arange(height, dtype=np.float64)[:, None]
    values = (
        0.25 * np.sin(0.25 * x + 1.1)
        + 0.25 * np.cos(0.19 * y - 0.6)
        + 0.15 * np.sin(0.11 * x + 0.13 * y)
        + 0.12 * np.cos(0.07 * x - 0.17 * y + 0.5)
    )
    return 0.5 + 0.5 * (values / 0.77)


def textured_gray(width: int, height: int, shift_x: float = 0.0) -> GrayFrame:
    return GrayFrame(data=np.clip(textured_values(width, height, shift_x), 0.0, 1.0))


def solid_frame(width: int, height: int, rgb: tuple[int, int, int], index: int = 0) -> Frame:
    data = np.zeros((height, width, 3), dtype=np.uint8)
    data[:] = rgb
    return Frame(index=index, data=data)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
