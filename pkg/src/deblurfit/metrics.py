"""Quality and temporal-consistency metrics.

PSNR/SSIM and a feature-space perceptual distance measure per-frame
fidelity against a reference; the warping error measures flicker by
checking how well each frame predicts the next one through optical flow.
Flow fields here follow the backward convention: a field attached to the
pair (t, t+1) holds, per pixel of frame t, the (dx, dy) displacement at
which frame t+1 shows the same content.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import correlate1d

from .errors import DegenerateInputError, ShapeError
from .frames import to_luminance
from .nnet import ExtractorConfig, images_to_batch, perceptual_loss

PSNR_CAP_DB = 100.0  # stands in for +inf in tabular output

FLOW_LEVELS = 3
FLOW_BLOCK = 8
FLOW_SEARCH = 4
FB_CONSISTENCY_PX = 1.0

UNIT_LAYER_WEIGHTS = (1.0, 1.0, 1.0, 1.0, 1.0)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range; inf if equal."""
    if a.shape != b.shape:
        raise ShapeError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(radius: int = 5, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _windowed(image: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation with a symmetric 1-d window."""
    r = (len(window) - 1) // 2
    tmp = correlate1d(image, window, axis=0, mode="constant")
    tmp = correlate1d(tmp, window, axis=1, mode="constant")
    return tmp[r:-r, r:-r]


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity on luminance.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1;
    averaged over the region where the window fits entirely.
    """
    if a.shape != b.shape:
        raise ShapeError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    x = to_luminance(a)
    y = to_luminance(b)
    if min(x.shape) < 11:
        raise DegenerateInputError(f"ssim needs >= 11 px per side, got {x.shape}")
    window = _gaussian_window()
    c1 = 0.01**2
    c2 = 0.03**2
    mu_x = _windowed(x, window)
    mu_y = _windowed(y, window)
    xx = _windowed(x * x, window) - mu_x * mu_x
    yy = _windowed(y * y, window) - mu_y * mu_y
    xy = _windowed(x * y, window) - mu_x * mu_y
    score = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    )
    return float(score.mean())


def perceptual_distance(extractor_cfg: ExtractorConfig, a: np.ndarray, b: np.ndarray) -> float:
    """Feature-space distance: the perceptual loss with unit layer weights."""
    cfg = dataclasses.replace(extractor_cfg, layer_weights=UNIT_LAYER_WEIGHTS)
    with torch.no_grad():
        value = perceptual_loss(cfg, images_to_batch(a), images_to_batch(b))
    return float(value)


# ---------------------------------------------------------------------------
# optical flow (coarse-to-fine block matching)


def _bilinear_resize(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Resize leading 2 dims with bilinear sampling (align-corners=False)."""
    h, w = arr.shape[:2]
    th, tw = shape
    ys = (np.arange(th, dtype=np.float64) + 0.5) * (h / th) - 0.5
    xs = (np.arange(tw, dtype=np.float64) + 0.5) * (w / tw) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    if arr.ndim == 2:
        a = arr[np.ix_(y0, x0)]
        b = arr[np.ix_(y0, x1)]
        c = arr[np.ix_(y1, x0)]
        d = arr[np.ix_(y1, x1)]
    else:
        a = arr[np.ix_(y0, x0)]
        b = arr[np.ix_(y0, x1)]
        c = arr[np.ix_(y1, x0)]
        d = arr[np.ix_(y1, x1)]
        fy = fy[..., None]
        fx = fx[..., None]
    return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    return img[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    if img.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    return (1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1]) + fy * (
        (1 - fx) * img[y1, x0] + fx * img[y1, x1]
    )


def _translate_clamped(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    h, w = img.shape
    rows = np.clip(np.arange(h) + dy, 0, h - 1)
    cols = np.clip(np.arange(w) + dx, 0, w - 1)
    return img[np.ix_(rows, cols)]


def _block_sums(values: np.ndarray, block: int) -> np.ndarray:
    """Sum of values over each block of a block x block tiling (partial edges kept)."""
    h, w = values.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    integral[1:, 1:] = np.cumsum(np.cumsum(values, axis=0), axis=1)
    edges_y = np.unique(np.minimum(np.arange(0, h + block, block), h))
    edges_x = np.unique(np.minimum(np.arange(0, w + block, block), w))
    y0, y1 = edges_y[:-1], edges_y[1:]
    x0, x1 = edges_x[:-1], edges_x[1:]
    return (
        integral[np.ix_(y1, x1)]
        - integral[np.ix_(y0, x1)]
        - integral[np.ix_(y1, x0)]
        + integral[np.ix_(y0, x0)]
    )


def _search_offsets(radius: int) -> list[tuple[int, int]]:
    # zero first, then by growing magnitude, so ties resolve to small motion
    offs = [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
    ]
    offs.sort(key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))
    return offs


def estimate_flow(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Backward flow from frame a to frame b by coarse-to-fine block matching.

    3-level pyramid; at each level every 8x8 block searches +-4 px around
    its current estimate; the coarse flow is upsampled bilinearly.  Returns
    an H x W x 2 float32 field of (dx, dy) displacements.
    """
    if a.shape != b.shape:
        raise ShapeError(f"flow shapes differ: {a.shape} vs {b.shape}")
    ga = [to_luminance(a)]
    gb = [to_luminance(b)]
    for _ in range(FLOW_LEVELS - 1):
        if min(ga[-1].shape) < 2 * FLOW_BLOCK:
            break
        ga.append(_downsample2(ga[-1]))
        gb.append(_downsample2(gb[-1]))
    offsets = _search_offsets(FLOW_SEARCH)
    flow = np.zeros(ga[-1].shape + (2,), dtype=np.float64)
    for level in range(len(ga) - 1, -1, -1):
        la, lb = ga[level], gb[level]
        h, w = la.shape
        if flow.shape[:2] != (h, w):
            flow = _bilinear_resize(flow, (h, w)) * 2.0
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        warped = _sample_bilinear(lb, ys + flow[..., 1], xs + flow[..., 0])
        costs = []
        for dy, dx in offsets:
            diff = la - _translate_clamped(warped, dy, dx)
            costs.append(_block_sums(diff * diff, FLOW_BLOCK))
        costs = np.stack(costs)  # (n_offsets, nby, nbx)
        best = np.argmin(costs, axis=0)
        off = np.array(offsets)
        add_dy = off[best, 0]
        add_dx = off[best, 1]
        per_px_dy = np.repeat(np.repeat(add_dy, FLOW_BLOCK, axis=0), FLOW_BLOCK, axis=1)[:h, :w]
        per_px_dx = np.repeat(np.repeat(add_dx, FLOW_BLOCK, axis=0), FLOW_BLOCK, axis=1)[:h, :w]
        flow[..., 0] += per_px_dx
        flow[..., 1] += per_px_dy
    return flow.astype(np.float32)


def warp(frame: np.ndarray, flow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backward-warp a frame by a flow field.

    Returns (warped, valid): warped(y, x) = frame(y + dy, x + dx) sampled
    bilinearly; valid marks pixels whose sample stayed inside the frame.
    """
    if flow.ndim != 3 or flow.shape[2] != 2 or flow.shape[:2] != frame.shape[:2]:
        raise ShapeError(
            f"flow shape {flow.shape} inconsistent with frame {frame.shape}"
        )
    h, w = frame.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sy = ys + flow[..., 1].astype(np.float64)
    sx = xs + flow[..., 0].astype(np.float64)
    valid = (sy >= 0) & (sy <= h - 1) & (sx >= 0) & (sx <= w - 1)
    warped = _sample_bilinear(frame.astype(np.float64), sy, sx)
    return warped.astype(np.float32), valid


def warping_error(
    video: list[np.ndarray],
    flows: list[np.ndarray] | None = None,
    backward_flows: list[np.ndarray] | None = None,
) -> float:
    """Mean masked MSE between each frame and the warped next frame.

    The mask combines warp validity with forward-backward consistency: a
    pixel counts only when the forward and backward flows cancel to within
    1 px.  Backward flows are estimated when not supplied.  Pairs with an
    empty mask contribute 0.
    """
    if len(video) < 2:
        raise DegenerateInputError("warping error needs at least 2 frames")
    n_pairs = len(video) - 1
    if flows is not None and len(flows) != n_pairs:
        raise ShapeError(f"expected {n_pairs} flow fields, got {len(flows)}")
    if backward_flows is not None and len(backward_flows) != n_pairs:
        raise ShapeError(f"expected {n_pairs} backward flow fields")
    total = 0.0
    for t in range(n_pairs):
        total += pair_warping_error(
            video[t],
            video[t + 1],
            flow=None if flows is None else flows[t],
            backward_flow=None if backward_flows is None else backward_flows[t],
        )
    return total / n_pairs


def pair_warping_error(
    frame_a: np.ndarray,
    frame_b: np.ndarray,
    flow: np.ndarray | None = None,
    backward_flow: np.ndarray | None = None,
) -> float:
    """Masked MSE between frame_a and frame_b warped back onto it."""
    if flow is None:
        flow = estimate_flow(frame_a, frame_b)
    if backward_flow is None:
        backward_flow = estimate_flow(frame_b, frame_a)
    warped, valid = warp(frame_b, flow)
    roundtrip, _ = warp(backward_flow, flow)
    residual = np.sqrt(np.sum((flow + roundtrip) ** 2, axis=2))
    mask = valid & (residual <= FB_CONSISTENCY_PX)
    if not mask.any():
        return 0.0
    diff = frame_a.astype(np.float64) - warped.astype(np.float64)
    if diff.ndim == 3:
        per_px = np.mean(diff * diff, axis=2)
    else:
        per_px = diff * diff
    return float(per_px[mask].mean())


# ---------------------------------------------------------------------------
# report assembly and flow files


@dataclass
class MetricReport:
    """Per-frame metric rows plus recomputable aggregates.

    Row keys: frame, psnr, ssim, perceptual, warp (None when undefined;
    warp on row t covers the pair t -> t+1, so the last row has none).
    """

    rows: list[dict]

    def column(self, key: str) -> list[float]:
        return [r[key] for r in self.rows if r.get(key) is not None]

    def aggregates(self) -> dict[str, dict[str, float]]:
        out = {"mean": {}, "median": {}}
        for key in ("psnr", "ssim", "perceptual", "warp"):
            values = self.column(key)
            if values:
                out["mean"][key] = float(np.mean(values))
                out["median"][key] = float(np.median(values))
        return out


def evaluate_video(
    outputs: list[np.ndarray],
    reference: list[np.ndarray] | None = None,
    extractor_cfg: ExtractorConfig | None = None,
    flows: list[np.ndarray] | None = None,
    backward_flows: list[np.ndarray] | None = None,
) -> MetricReport:
    """Score a frame sequence, against a reference when one is given."""
    if reference is not None and len(reference) != len(outputs):
        raise ShapeError(
            f"reference has {len(reference)} frames for {len(outputs)} outputs"
        )
    extractor_cfg = extractor_cfg if extractor_cfg is not None else ExtractorConfig()
    rows = []
    for i, frame in enumerate(outputs):
        row: dict = {"frame": i, "psnr": None, "ssim": None, "perceptual": None, "warp": None}
        if reference is not None:
            row["psnr"] = min(psnr(frame, reference[i]), PSNR_CAP_DB)
            row["ssim"] = ssim(frame, reference[i])
            row["perceptual"] = perceptual_distance(extractor_cfg, frame, reference[i])
        rows.append(row)
    if len(outputs) >= 2:
        for t in range(len(outputs) - 1):
            rows[t]["warp"] = pair_warping_error(
                outputs[t],
                outputs[t + 1],
                flow=None if flows is None else flows[t],
                backward_flow=None if backward_flows is None else backward_flows[t],
            )
    return MetricReport(rows=rows)


def save_flow(path, flow: np.ndarray) -> None:
    from .archive import save_archive

    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeError(f"flow must be H x W x 2, got {flow.shape}")
    save_archive(path, {"flow": flow.astype(np.float32)}, {"kind": "flow"})


def load_flow(path) -> np.ndarray:
    from .archive import load_archive
    from .errors import DataError

    tensors, meta = load_archive(path)
    if meta.get("kind") != "flow" or "flow" not in tensors:
        raise DataError(f"{path} is not a flow archive")
    flow = tensors["flow"]
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise DataError(f"{path}: flow tensor has shape {flow.shape}")
    return flow
