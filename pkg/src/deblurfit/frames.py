"""Sharp-frame selection by variance of the Laplacian.

Blurred frames have weak high-frequency content, so the spread of the
Laplacian response separates sharp frames from blurry ones.  Each frame is
scored on its luminance channel and the best frame of every fixed-size
window of the video is kept as a training target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, EmptyInputError, ParameterError

# ITU-R BT.601 luma coefficients.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

DEFAULT_WINDOW = 20


def to_luminance(frame: np.ndarray) -> np.ndarray:
    """Weighted RGB-to-gray conversion, computed in double precision."""
    frame = np.asarray(frame)
    if frame.ndim == 2:
        return frame.astype(np.float64)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DegenerateInputError(
            f"expected an H x W x 3 frame, got shape {frame.shape}"
        )
    r, g, b = LUMA_WEIGHTS
    f = frame.astype(np.float64)
    return r * f[..., 0] + g * f[..., 1] + b * f[..., 2]


def laplacian(image: np.ndarray) -> np.ndarray:
    """3x3 Laplacian response on the valid interior (no padding).

    Returns an (H-2) x (W-2) array; the stencil is the standard
    4-neighbour kernel (centre weight -4).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise DegenerateInputError(f"expected a 2-d image, got shape {image.shape}")
    h, w = image.shape
    if h < 3 or w < 3:
        raise DegenerateInputError(f"image {h}x{w} too small for a 3x3 stencil")
    return (
        image[:-2, 1:-1]
        + image[2:, 1:-1]
        + image[1:-1, :-2]
        + image[1:-1, 2:]
        - 4.0 * image[1:-1, 1:-1]
    )


def sharpness_score(frame: np.ndarray) -> float:
    """Sum of squared deviations of the Laplacian response from its mean.

    This is the (unnormalised) variance of the Laplacian over the valid
    interior; larger means sharper.  Constant frames score exactly 0.
    """
    lap = laplacian(to_luminance(frame))
    centered = lap - lap.mean()
    return float(np.sum(centered * centered))


@dataclass(frozen=True)
class SelectionResult:
    """Indices of the frames chosen as sharp, one per window."""

    indices: tuple[int, ...]
    window: int

    def __contains__(self, index: int) -> bool:
        return index in self.indices


def _window_argmax(scores: np.ndarray, window: int) -> tuple[int, ...]:
    """Index of the maximum score in each consecutive window; first wins ties."""
    picks = []
    for start in range(0, len(scores), window):
        chunk = scores[start : start + window]
        picks.append(start + int(np.argmax(chunk)))
    return tuple(picks)


def select_sharp_frames(
    video: list[np.ndarray], window: int = DEFAULT_WINDOW
) -> SelectionResult:
    """Pick the sharpest frame of each consecutive window of the video.

    The video is split into runs of ``window`` frames (the final run may be
    shorter) and the frame with the highest sharpness score in each run is
    selected.  Ties go to the lowest frame index.
    """
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    if len(video) == 0:
        raise EmptyInputError("cannot select frames from an empty video")
    scores = np.array([sharpness_score(f) for f in video])
    return SelectionResult(indices=_window_argmax(scores, window), window=window)


def sharpness_report(
    video: list[np.ndarray], window: int = DEFAULT_WINDOW
) -> list[tuple[int, float, bool]]:
    """Per-frame (index, score, selected) rows for the whole video."""
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    if len(video) == 0:
        raise EmptyInputError("cannot report on an empty video")
    scores = np.array([sharpness_score(f) for f in video])
    chosen = set(_window_argmax(scores, window))
    return [(i, float(s), i in chosen) for i, s in enumerate(scores)]
