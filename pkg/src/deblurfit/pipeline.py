"""Training-pair pipeline: random sharp crops paired with synthetic blur.

Selected sharp frames are cropped at random offsets (no flips, no
rotations), blurred with kernels drawn uniformly from a bank, and weighted
by the sharpness of the crop so blurry-ish targets count less.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, EmptyBankError, EmptyInputError, ParameterError
from .frames import sharpness_score
from .kernels import DEFAULT_GAMMA, KernelBank, apply_blur

log = logging.getLogger(__name__)

DEFAULT_PATCH_SIZE = 256
DEFAULT_BATCH_SIZE = 4
DEFAULT_WEIGHT_NORM = 100.0  # the constant N dividing patch sharpness


@dataclass(frozen=True)
class PipelineConfig:
    patch_size: int = DEFAULT_PATCH_SIZE
    batch_size: int = DEFAULT_BATCH_SIZE
    weight_norm: float = DEFAULT_WEIGHT_NORM
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1:
            raise ParameterError(f"patch_size must be >= 1, got {self.patch_size}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.weight_norm > 0:
            raise ParameterError(f"weight_norm must be > 0, got {self.weight_norm}")


@dataclass(frozen=True)
class TrainPair:
    """One (sharp target, blurry input) patch pair.

    weight is sharpness_score(sharp) / N.  frame_id, offset, and kernel_id
    record provenance: re-cropping the same frame at the same offset and
    re-blurring with the same bank kernel reproduces the pair bit-for-bit.
    """

    sharp: np.ndarray
    blurry: np.ndarray
    weight: float
    kernel_id: int
    frame_id: int = -1
    offset: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.sharp.shape != self.blurry.shape:
            raise ParameterError(
                f"pair shapes differ: {self.sharp.shape} vs {self.blurry.shape}"
            )
        if not (np.isfinite(self.weight) and self.weight >= 0):
            raise ParameterError(f"pair weight must be finite and >= 0, got {self.weight}")


def _random_offset(
    shape: tuple[int, ...], size: int, rng: np.random.Generator
) -> tuple[int, int]:
    h, w = shape[:2]
    if h < size or w < size:
        raise DegenerateInputError(f"frame {h}x{w} smaller than patch size {size}")
    return int(rng.integers(h - size + 1)), int(rng.integers(w - size + 1))


def sample_patch(frame: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Axis-aligned random crop; the only augmentation this pipeline has."""
    oy, ox = _random_offset(frame.shape, size, rng)
    return frame[oy : oy + size, ox : ox + size]


def make_pair(
    patch: np.ndarray,
    bank: KernelBank,
    gamma: float,
    weight_norm: float,
    rng: np.random.Generator,
    frame_id: int = -1,
    offset: tuple[int, int] = (0, 0),
) -> TrainPair:
    """Blur a sharp patch with a uniformly drawn bank kernel and weight it."""
    if len(bank) == 0:
        raise EmptyBankError("cannot draw kernels from an empty bank")
    kernel_id = int(rng.integers(len(bank)))
    blurry = apply_blur(patch, bank.kernels[kernel_id], gamma)
    weight = sharpness_score(patch) / weight_norm
    return TrainPair(
        sharp=patch,
        blurry=blurry,
        weight=weight,
        kernel_id=kernel_id,
        frame_id=frame_id,
        offset=offset,
    )


def batches(
    frames: list[np.ndarray],
    config: PipelineConfig,
    bank: KernelBank,
    gamma: float = DEFAULT_GAMMA,
):
    """Endless iterator of TrainPair batches, deterministic for a given seed.

    Frames too small for the patch size are skipped (with a warning); the
    source frame of every pair is chosen uniformly among the usable ones.
    """
    if len(bank) == 0:
        raise EmptyBankError("cannot build batches from an empty bank")
    usable = []
    for i, frame in enumerate(frames):
        if frame.shape[0] < config.patch_size or frame.shape[1] < config.patch_size:
            log.warning(
                "skipping frame %d (%dx%d smaller than patch size %d)",
                i,
                frame.shape[0],
                frame.shape[1],
                config.patch_size,
            )
        else:
            usable.append(i)
    if not usable:
        raise EmptyInputError("no frame is large enough for the configured patch size")
    rng = np.random.default_rng(config.seed)

    def generate():
        while True:
            batch = []
            for _ in range(config.batch_size):
                frame_id = usable[int(rng.integers(len(usable)))]
                frame = frames[frame_id]
                offset = _random_offset(frame.shape, config.patch_size, rng)
                patch = frame[
                    offset[0] : offset[0] + config.patch_size,
                    offset[1] : offset[1] + config.patch_size,
                ]
                batch.append(
                    make_pair(
                        patch,
                        bank,
                        gamma,
                        config.weight_norm,
                        rng,
                        frame_id=frame_id,
                        offset=offset,
                    )
                )
            yield batch

    return generate()
