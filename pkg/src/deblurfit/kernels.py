"""Motion-blur kernel synthesis and blur application.

Kernels are built by rasterizing motion trajectories onto a small odd-sized
grid: straight segments centered on the grid (the default family), one-sided
segments anchored at the center, and simulated random-walk trajectories.
Blur is applied in linearized intensity: the input is de-gamma'd, convolved
under reflect padding, and re-gamma'd.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import (
    DegenerateInputError,
    EmptyBankError,
    OutOfSupportError,
    ParameterError,
)

KERNEL_SIZES = (21, 31, 41)
DEFAULT_BANK_COUNTS = (4000, 2000, 4000)
DEFAULT_GAMMA = 2.2

SAMPLES_PER_PIXEL = 64  # rasterizer line-sampling density

FAMILY_SYMMETRIC = "symmetric-linear"
FAMILY_ASYMMETRIC = "asymmetric-linear"
FAMILY_SIMULATED = "simulated"
FAMILIES = (FAMILY_SYMMETRIC, FAMILY_ASYMMETRIC, FAMILY_SIMULATED)

# Random-walk parameters of the simulated family.
WALK_HEADING_SIGMA_DEG = 20.0
WALK_STEP_PIXELS = 1.0
WALK_MIN_STEPS = 5


@dataclass(frozen=True)
class MotionVector:
    """A straight motion of `length` pixels at `orientation` degrees.

    The orientation is measured from the positive x (column) axis and is
    undirected, so it lives in [0, 180).
    """

    length: float
    orientation: float

    def __post_init__(self):
        if not self.length > 0:
            raise ParameterError(f"motion length must be > 0, got {self.length}")
        if not (0.0 <= self.orientation < 180.0):
            raise ParameterError(
                f"orientation must lie in [0, 180), got {self.orientation}"
            )


@dataclass(frozen=True)
class BlurKernel:
    """A normalized p x p blur kernel.

    weights: nonnegative float64 array summing to 1.
    family:  which construction produced it.
    motion:  the generating motion vector, when the family has one.
    """

    weights: np.ndarray
    family: str
    motion: MotionVector | None = None

    def __post_init__(self):
        w = self.weights
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ParameterError(f"kernel weights must be odd and square, got {w.shape}")
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown kernel family {self.family!r}")

    @property
    def size(self) -> int:
        return self.weights.shape[0]


def _unit_direction(orientation_deg: float) -> tuple[float, float]:
    """(dx, dy) unit vector for an angle measured counter-clockwise from +x.

    Rows of the kernel grid grow downward, so the y component is negated:
    a 45-degree motion slopes up-and-right (the anti-diagonal of the array).
    At exactly 0 and 90 degrees the direction snaps onto the axis so those
    kernels occupy a single row or column bit-exactly.
    """
    o = orientation_deg % 180.0
    if o == 0.0:
        return 1.0, 0.0
    if o == 90.0:
        return 0.0, -1.0
    rad = math.radians(o)
    return math.cos(rad), -math.sin(rad)


def _splat(ys: np.ndarray, xs: np.ndarray, size: int) -> np.ndarray:
    """Deposit equal mass at sub-pixel points, split bilinearly over 4 cells.

    Points must already lie inside [0, size-1] in both coordinates.  The
    accumulator has one spare row/column so that points sitting exactly on
    the far edge (fractional part zero) stay in bounds.
    """
    iy = np.floor(ys).astype(np.int64)
    ix = np.floor(xs).astype(np.int64)
    fy = ys - iy
    fx = xs - ix
    acc = np.zeros((size + 1, size + 1), dtype=np.float64)
    np.add.at(acc, (iy, ix), (1.0 - fy) * (1.0 - fx))
    np.add.at(acc, (iy, ix + 1), (1.0 - fy) * fx)
    np.add.at(acc, (iy + 1, ix), fy * (1.0 - fx))
    np.add.at(acc, (iy + 1, ix + 1), fy * fx)
    return acc[:size, :size]


def _segment_points(
    start: tuple[float, float], end: tuple[float, float], n: int
) -> tuple[np.ndarray, np.ndarray]:
    """n midpoint samples (ys, xs) evenly spaced along a segment."""
    t = (np.arange(n, dtype=np.float64) + 0.5) / n
    ys = start[0] + t * (end[0] - start[0])
    xs = start[1] + t * (end[1] - start[1])
    return ys, xs


def _check_in_grid(points_yx: list[tuple[float, float]], size: int) -> None:
    lim = float(size - 1)
    for y, x in points_yx:
        if not (-1e-9 <= y <= lim + 1e-9 and -1e-9 <= x <= lim + 1e-9):
            raise OutOfSupportError(
                f"segment endpoint ({y:.3f}, {x:.3f}) leaves the {size}x{size} grid"
            )


def rasterize_segment(
    center: tuple[float, float], length: float, orientation: float, size: int
) -> np.ndarray:
    """Rasterize a centered line segment to a normalized size x size map.

    The segment of the given pixel length and orientation (degrees), centered
    at `center` = (row, col), is sampled at 64 points per pixel of length
    (midpoint rule); every sample deposits equal mass split bilinearly among
    its four nearest cells.  The result sums to 1.
    """
    if length <= 0:
        raise ParameterError(f"segment length must be > 0, got {length}")
    dx, dy = _unit_direction(orientation)
    cy, cx = center
    half = 0.5 * length
    a = (cy - half * dy, cx - half * dx)
    b = (cy + half * dy, cx + half * dx)
    _check_in_grid([a, b], size)
    # A segment shorter than one sampling interval degenerates to a single
    # sample at its midpoint, so sub-resolution motions give a clean delta.
    if length * SAMPLES_PER_PIXEL < 1.0:
        n = 1
    else:
        n = SAMPLES_PER_PIXEL * math.ceil(length)
    ys, xs = _segment_points(a, b, n)
    # Clip pure rounding noise so the splat indices stay in range.
    ys = np.clip(ys, 0.0, size - 1.0)
    xs = np.clip(xs, 0.0, size - 1.0)
    weights = _splat(ys, xs, size)
    return weights / weights.sum()


def symmetric_kernel(motion: MotionVector, size: int) -> BlurKernel:
    """Kernel of a straight segment centered on the kernel grid.

    The weights are symmetrized so the kernel equals its own 180-degree
    rotation exactly, not merely up to rounding.
    """
    if not motion.length < size:
        raise ParameterError(
            f"motion length {motion.length} too long for a {size}x{size} kernel"
        )
    c = (size - 1) / 2.0
    w = rasterize_segment((c, c), motion.length, motion.orientation, size)
    w = 0.5 * (w + w[::-1, ::-1])
    w /= w.sum()
    return BlurKernel(weights=w, family=FAMILY_SYMMETRIC, motion=motion)


def asymmetric_kernel(motion: MotionVector, size: int, rng: np.random.Generator) -> BlurKernel:
    """Kernel of a straight segment anchored at the center, extending one way.

    The side it extends toward is chosen by the rng, so both half-planes of
    each orientation occur.
    """
    if not motion.length < size:
        raise ParameterError(
            f"motion length {motion.length} too long for a {size}x{size} kernel"
        )
    dx, dy = _unit_direction(motion.orientation)
    side = 1.0 if rng.integers(2) == 1 else -1.0
    c = (size - 1) / 2.0
    a = (c, c)
    b = (c + side * motion.length * dy, c + side * motion.length * dx)
    _check_in_grid([a, b], size)
    n = SAMPLES_PER_PIXEL * math.ceil(motion.length)
    ys, xs = _segment_points(a, b, n)
    ys = np.clip(ys, 0.0, size - 1.0)
    xs = np.clip(xs, 0.0, size - 1.0)
    w = _splat(ys, xs, size)
    w /= w.sum()
    return BlurKernel(weights=w, family=FAMILY_ASYMMETRIC, motion=motion)


def simulated_kernel(steps: int, size: int, rng: np.random.Generator) -> BlurKernel:
    """Kernel of a simulated camera-shake trajectory.

    A random walk of unit steps whose heading drifts by Gaussian increments
    (sigma 20 degrees per step) is recentered on its centroid, clipped to the
    grid, then densified and splatted like a straight segment.
    """
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    heading = rng.uniform(0.0, 2.0 * math.pi)
    noise = rng.normal(0.0, math.radians(WALK_HEADING_SIGMA_DEG), size=steps)
    headings = heading + np.cumsum(noise)
    deltas = WALK_STEP_PIXELS * np.stack(
        [-np.sin(headings), np.cos(headings)], axis=1
    )  # (dy, dx) per step, rows growing downward
    vertices = np.concatenate([np.zeros((1, 2)), np.cumsum(deltas, axis=0)], axis=0)
    c = (size - 1) / 2.0
    vertices = vertices - vertices.mean(axis=0) + np.array([c, c])
    vertices = np.clip(vertices, 0.0, size - 1.0)
    n_per_step = SAMPLES_PER_PIXEL * math.ceil(WALK_STEP_PIXELS)
    ys_parts = []
    xs_parts = []
    for a, b in zip(vertices[:-1], vertices[1:]):
        ys, xs = _segment_points((a[0], a[1]), (b[0], b[1]), n_per_step)
        ys_parts.append(ys)
        xs_parts.append(xs)
    w = _splat(np.concatenate(ys_parts), np.concatenate(xs_parts), size)
    w /= w.sum()
    return BlurKernel(weights=w, family=FAMILY_SIMULATED, motion=None)


def mirrored_pair(
    size: int, rng: np.random.Generator
) -> tuple[BlurKernel, BlurKernel]:
    """One motion draw, two kernels: (l, o) and its left-right mirror (l, 180-o).

    The second kernel is built by reflecting the first's weights about the
    vertical axis, which coincides with rasterizing the mirrored segment and
    guarantees the two are exact horizontal mirrors of each other.  At o=90
    the mirror maps the kernel onto itself, so the pair is identical.
    """
    length = float(rng.uniform(0.5, size - 1))
    orientation = float(rng.uniform(0.0, 180.0))
    first = symmetric_kernel(MotionVector(length, orientation), size)
    mirrored = MotionVector(length, (180.0 - orientation) % 180.0)
    second = BlurKernel(
        weights=first.weights[:, ::-1].copy(),
        family=FAMILY_SYMMETRIC,
        motion=mirrored,
    )
    return first, second


@dataclass
class KernelBank:
    """A list of kernels grouped by size, with its generation recipe."""

    kernels: list[BlurKernel]
    counts: tuple[int, int, int]
    seed: int
    family: str = FAMILY_SYMMETRIC

    def __len__(self) -> int:
        return len(self.kernels)

    def of_size(self, size: int) -> list[BlurKernel]:
        return [k for k in self.kernels if k.size == size]


def build_bank(
    counts: tuple[int, int, int] = DEFAULT_BANK_COUNTS,
    seed: int = 0,
    family: str = FAMILY_SYMMETRIC,
) -> KernelBank:
    """Generate the requested number of kernels per size in {21, 31, 41}.

    Lengths are drawn uniformly from (0.5, p-1) and orientations uniformly
    from [0, 180); the asymmetric family halves the length range so its
    one-sided segments stay on the grid, and the simulated family draws its
    step count uniformly from [5, p].  Deterministic for a given seed.
    """
    if family not in FAMILIES:
        raise ParameterError(f"unknown kernel family {family!r}")
    if len(counts) != len(KERNEL_SIZES):
        raise ParameterError(f"expected {len(KERNEL_SIZES)} counts, got {counts}")
    if any(c < 0 for c in counts):
        raise ParameterError(f"kernel counts must be >= 0, got {counts}")
    if sum(counts) == 0:
        raise EmptyBankError("all kernel counts are zero")
    rng = np.random.default_rng(seed)
    kernels: list[BlurKernel] = []
    for size, count in zip(KERNEL_SIZES, counts):
        for _ in range(count):
            if family == FAMILY_SYMMETRIC:
                length = float(rng.uniform(0.5, size - 1))
                orientation = float(rng.uniform(0.0, 180.0))
                kernels.append(symmetric_kernel(MotionVector(length, orientation), size))
            elif family == FAMILY_ASYMMETRIC:
                length = float(rng.uniform(0.5, (size - 1) / 2.0))
                orientation = float(rng.uniform(0.0, 180.0))
                kernels.append(
                    asymmetric_kernel(MotionVector(length, orientation), size, rng)
                )
            else:
                steps = int(rng.integers(WALK_MIN_STEPS, size + 1))
                kernels.append(simulated_kernel(steps, size, rng))
    return KernelBank(kernels=kernels, counts=tuple(counts), seed=seed, family=family)


def save_bank(path, bank: KernelBank) -> None:
    """Serialize a bank to a named-tensor archive.

    One tensor per size group (names k21/k31/k41, shapes (n, p, p)); the
    counts, seed, and family travel in the header.  Weights are stored as
    float32; loading renormalizes them, so the unit-mass invariant survives
    the roundtrip.
    """
    from .archive import save_archive

    tensors = {}
    for size, count in zip(KERNEL_SIZES, bank.counts):
        group = bank.of_size(size)
        if len(group) != count:
            raise ParameterError(
                f"bank declares {count} kernels of size {size} but holds {len(group)}"
            )
        if group:
            tensors[f"k{size}"] = np.stack([k.weights for k in group])
    meta = {
        "kind": "kernel-bank",
        "counts": list(bank.counts),
        "seed": int(bank.seed),
        "family": bank.family,
    }
    save_archive(path, tensors, meta)


def load_bank(path) -> KernelBank:
    """Read a bank archive back into BlurKernel objects."""
    from .archive import load_archive
    from .errors import DataError

    tensors, meta = load_archive(path)
    if meta.get("kind") != "kernel-bank":
        raise DataError(f"{path} is not a kernel-bank archive")
    counts = meta.get("counts")
    family = meta.get("family", FAMILY_SYMMETRIC)
    if (
        not isinstance(counts, list)
        or len(counts) != len(KERNEL_SIZES)
        or family not in FAMILIES
    ):
        raise DataError(f"{path} has a malformed kernel-bank header")
    kernels: list[BlurKernel] = []
    for size, count in zip(KERNEL_SIZES, counts):
        name = f"k{size}"
        if count == 0:
            if name in tensors:
                raise DataError(f"{path}: unexpected tensor {name} for a zero count")
            continue
        group = tensors.get(name)
        if group is None or group.shape != (count, size, size):
            raise DataError(f"{path}: tensor {name} missing or mis-shaped")
        for w in group:
            w64 = w.astype(np.float64)
            total = w64.sum()
            if not np.isfinite(total) or total <= 0 or w64.min() < 0:
                raise DataError(f"{path}: tensor {name} holds an invalid kernel")
            kernels.append(BlurKernel(weights=w64 / total, family=family))
    return KernelBank(
        kernels=kernels, counts=tuple(counts), seed=int(meta.get("seed", 0)), family=family
    )


def degamma(image: np.ndarray, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Map display intensities to linear light via x -> x**gamma."""
    if gamma <= 0:
        raise ParameterError(f"gamma must be > 0, got {gamma}")
    image = np.asarray(image)
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise ParameterError("degamma expects values in [0, 1]")
    return image**gamma


def regamma(image: np.ndarray, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Inverse of degamma: x -> x**(1/gamma)."""
    if gamma <= 0:
        raise ParameterError(f"gamma must be > 0, got {gamma}")
    image = np.asarray(image)
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise ParameterError("regamma expects values in [0, 1]")
    return image ** (1.0 / gamma)


def apply_blur(
    sharp: np.ndarray, kernel: BlurKernel, gamma: float = DEFAULT_GAMMA
) -> np.ndarray:
    """Blur a frame with a kernel in linearized intensity.

    Per channel: degamma, convolve (true convolution) under reflect padding,
    regamma.  gamma=1 disables the linearization.  The output has the input's
    shape and dtype and is clamped to [0, 1].
    """
    sharp = np.asarray(sharp)
    spatial = sharp.shape[:2]
    p = kernel.size
    if spatial[0] < p or spatial[1] < p:
        raise DegenerateInputError(
            f"frame {spatial} smaller than the {p}x{p} kernel"
        )
    out_dtype = sharp.dtype if sharp.dtype.kind == "f" else np.float32
    lin = degamma(sharp.astype(np.float64), gamma)
    if lin.ndim == 2:
        lin = lin[..., None]
        squeeze = True
    elif lin.ndim == 3:
        squeeze = False
    else:
        raise DegenerateInputError(f"expected a 2-d or 3-d frame, got {sharp.shape}")
    r = p // 2
    channels = []
    for c in range(lin.shape[2]):
        padded = np.pad(lin[:, :, c], r, mode="reflect")
        channels.append(fftconvolve(padded, kernel.weights, mode="valid"))
    blurred = np.stack(channels, axis=2)
    if squeeze:
        blurred = blurred[:, :, 0]
    blurred = np.clip(blurred, 0.0, 1.0)
    out = regamma(blurred, gamma)
    return np.clip(out, 0.0, 1.0).astype(out_dtype)
