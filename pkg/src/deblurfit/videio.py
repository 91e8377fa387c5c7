"""Frame-directory I/O: videos live as frame_000000.png ... sequences.

8-bit RGB PNGs; loading maps integer v to v/255 (float32), saving rounds
half-up, so a save/load roundtrip only ever moves a value by quantization.
"""

from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, EmptyInputError

FRAME_PATTERN = "frame_%06d.png"
_FRAME_RE = re.compile(r"^frame_(\d{6})\.png$")


def frame_path(directory, index: int) -> Path:
    return Path(directory) / (FRAME_PATTERN % index)


def load_frame(path) -> np.ndarray:
    """One PNG to an H x W x 3 float32 array in [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return (arr.astype(np.float32) / 255.0).astype(np.float32)


def save_frame(path, frame: np.ndarray) -> None:
    """Float [0,1] frame to an 8-bit RGB PNG, rounding half-up."""
    arr = np.asarray(frame)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"expected an H x W x 3 frame, got shape {arr.shape}")
    quantized = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")


def list_frame_files(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"frame directory {directory} does not exist")
    files = []
    for name in os.listdir(directory):
        m = _FRAME_RE.match(name)
        if m:
            files.append((int(m.group(1)), directory / name))
    files.sort()
    return [p for _, p in files]


def load_frames(directory) -> list[np.ndarray]:
    files = list_frame_files(directory)
    if not files:
        raise EmptyInputError(f"no frame_NNNNNN.png files in {directory}")
    return [load_frame(p) for p in files]


def save_frames(directory, frames: list[np.ndarray]) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        p = frame_path(directory, i)
        save_frame(p, frame)
        paths.append(p)
    return paths
