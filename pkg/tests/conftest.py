"""Shared synthetic data for the test suite.

All inputs are procedural and deterministic: textured frames with enough
high-frequency content that blurring visibly changes them, plus videos whose
per-frame sharpness we control by pre-blurring.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


def texture(height: int, width: int, seed: int = 0) -> np.ndarray:
    """A float32 RGB frame mixing low-frequency shapes and fine detail."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    base = np.empty((height, width, 3), dtype=np.float64)
    for ch in range(3):
        fx, fy = rng.uniform(1.5, 4.0, size=2)
        px, py = rng.uniform(0, 2 * np.pi, size=2)
        base[:, :, ch] = 0.5 + 0.25 * np.sin(2 * np.pi * fx * xx / width + px) * np.cos(
            2 * np.pi * fy * yy / height + py
        )
    detail = rng.random((height, width, 3))
    blobs = np.zeros((height, width, 1))
    for _ in range(6):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        r = rng.uniform(2.0, max(4.0, max(height, width) / 4))
        blobs[:, :, 0] += 0.3 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    frame = 0.55 * base + 0.3 * detail + blobs
    return np.clip(frame, 0.0, 1.0).astype(np.float32)


def card_image(height: int = 64, width: int = 96) -> np.ndarray:
    """A fixed mid-contrast card: ramp + checkerboard + one soft disc."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    ramp = 0.25 + 0.5 * xx / max(width - 1, 1)
    checker = 0.1 * (((yy // 4) + (xx // 4)) % 2)
    disc = 0.15 * np.exp(-((yy - height / 2) ** 2 + (xx - width / 2) ** 2) / (2 * 8.0**2))
    gray = np.clip(ramp + checker + disc, 0.05, 0.95)
    return np.repeat(gray[:, :, None], 3, axis=2).astype(np.float32)


def blur_box(frame: np.ndarray, size: int = 9) -> np.ndarray:
    """Independent box blur (per channel) used to make frames less sharp."""
    from scipy.ndimage import uniform_filter

    out = np.empty_like(frame, dtype=np.float64)
    for ch in range(frame.shape[2]):
        out[:, :, ch] = uniform_filter(frame[:, :, ch].astype(np.float64), size=size, mode="nearest")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def make_video(
    n_frames: int,
    height: int = 48,
    width: int = 64,
    seed: int = 0,
    sharp_every: int | None = None,
) -> list[np.ndarray]:
    """A deterministic video of textured frames.

    With ``sharp_every`` set, only frames at those positions keep their full
    detail; the rest are pre-blurred so selection has an unambiguous target.
    """
    frames = []
    for i in range(n_frames):
        frame = texture(height, width, seed=seed * 1000 + i)
        if sharp_every is not None and i % sharp_every != sharp_every // 2:
            frame = blur_box(frame, size=5)
        frames.append(frame)
    return frames


@pytest.fixture()
def card():
    return card_image()


@pytest.fixture(scope="session")
def small_bank():
    """Five symmetric 21-px kernels, enough for pipeline-level tests."""
    from deblurfit import build_bank

    return build_bank((5, 0, 0), seed=11)


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(num, name): identifies one release-gate check"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call":
        item.call_report = report
