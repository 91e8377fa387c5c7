"""Full-frame inference: pad, run the generator, crop, clamp."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DegenerateInputError, ParameterError
from .nnet import ParameterSet, batch_to_images, generator_apply, images_to_batch


@dataclass(frozen=True)
class PaddingPlan:
    """Reflect-pad amounts taking a frame to the next divisible size."""

    target_height: int
    target_width: int
    top: int
    bottom: int
    left: int
    right: int


def plan_padding(height: int, width: int, levels: int) -> PaddingPlan:
    """Pad plan to the next multiples of 2**levels (possibly zero padding)."""
    div = 2**levels
    if height < div or width < div:
        raise DegenerateInputError(
            f"frame {height}x{width} smaller than the network stride {div}"
        )
    th = -(-height // div) * div
    tw = -(-width // div) * div
    dh = th - height
    dw = tw - width
    return PaddingPlan(
        target_height=th,
        target_width=tw,
        top=dh // 2,
        bottom=dh - dh // 2,
        left=dw // 2,
        right=dw - dw // 2,
    )


def _forward_padded(params: ParameterSet, x: torch.Tensor, levels: int) -> torch.Tensor:
    plan = plan_padding(x.shape[2], x.shape[3], levels)
    padded = F.pad(x, (plan.left, plan.right, plan.top, plan.bottom), mode="reflect")
    out = generator_apply(params.tensors, levels, padded)
    return out[
        :,
        :,
        plan.top : plan.top + x.shape[2],
        plan.left : plan.left + x.shape[3],
    ]


def _feather_ramp(n: int, overlap: int, fade_lo: bool, fade_hi: bool) -> np.ndarray:
    """Per-axis blend weights; smoothstep ramps that vanish at interior seams.

    A tile's outermost pixels carry the worst truncated-context error, so
    they get weight zero and the neighbouring tile (which sees them well
    inside its own support) takes over; complementary ramps sum to one.
    Sides at the canvas boundary keep full weight - there the tile sees
    exactly the context a whole-frame pass would.
    """
    w = np.ones(n, dtype=np.float64)
    k = min(overlap, n)
    if k < 2:
        return w
    t = np.linspace(0.0, 1.0, k)
    ramp = t * t * (3.0 - 2.0 * t)
    if fade_lo:
        w[:k] = np.minimum(w[:k], ramp)
    if fade_hi:
        w[-k:] = np.minimum(w[-k:], ramp[::-1])
    return w


def deblur_frame(
    params: ParameterSet,
    frame: np.ndarray,
    tile: int | None = None,
    overlap: int = 32,
) -> np.ndarray:
    """Deblur one H x W x 3 frame; output matches its shape, clamped to [0,1].

    With ``tile`` set, the (padded) frame is processed in overlapping tiles
    blended by linear feathering - for frames too large for whole-frame
    memory.  Tile size must be divisible by 2**levels and exceed 2*overlap.
    """
    if params.arch.get("kind") != "generator":
        raise ParameterError("params do not describe a generator")
    levels = int(params.arch["levels"])
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DegenerateInputError(f"expected an H x W x 3 frame, got {frame.shape}")
    x = images_to_batch(frame)
    div = 2**levels
    with torch.no_grad():
        if tile is None or (frame.shape[0] <= tile and frame.shape[1] <= tile):
            out = _forward_padded(params, x, levels)
        else:
            if tile % div or tile <= 2 * overlap or overlap < 2:
                raise ParameterError(
                    f"tile must be divisible by {div} and larger than twice the "
                    f"overlap (>= 2)"
                )
            plan = plan_padding(x.shape[2], x.shape[3], levels)
            canvas = F.pad(
                x, (plan.left, plan.right, plan.top, plan.bottom), mode="reflect"
            )
            h, w = canvas.shape[2], canvas.shape[3]
            acc = torch.zeros_like(canvas)
            wsum = torch.zeros(1, 1, h, w, dtype=canvas.dtype)
            stride = tile - overlap
            ys = sorted({min(y, max(h - tile, 0)) for y in range(0, h, stride)})
            xs = sorted({min(xx, max(w - tile, 0)) for xx in range(0, w, stride)})
            for y0 in ys:
                for x0 in xs:
                    y1 = min(y0 + tile, h)
                    x1 = min(x0 + tile, w)
                    piece = canvas[:, :, y0:y1, x0:x1]
                    res = generator_apply(params.tensors, levels, piece)
                    wy = _feather_ramp(y1 - y0, overlap, y0 > 0, y1 < h)
                    wx = _feather_ramp(x1 - x0, overlap, x0 > 0, x1 < w)
                    weight = torch.from_numpy(np.outer(wy, wx)).to(canvas.dtype)
                    acc[:, :, y0:y1, x0:x1] += res * weight
                    wsum[:, :, y0:y1, x0:x1] += weight
            out = (acc / wsum)[
                :,
                :,
                plan.top : plan.top + x.shape[2],
                plan.left : plan.left + x.shape[3],
            ]
        out = out.clamp(0.0, 1.0)
    return batch_to_images(out)[0]


def deblur_video(
    params: ParameterSet,
    video: list[np.ndarray],
    tile: int | None = None,
    overlap: int = 32,
) -> list[np.ndarray]:
    """Frame-wise deblurring; order and count preserved, no cross-frame state."""
    outputs = []
    for i, frame in enumerate(video):
        try:
            outputs.append(deblur_frame(params, frame, tile=tile, overlap=overlap))
        except Exception as exc:
            raise type(exc)(f"frame {i}: {exc}") from exc
    return outputs
