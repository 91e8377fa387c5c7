"""Networks and losses, written functionally over named-tensor dicts.

Keeping parameters in plain ``{name: tensor}`` dicts (instead of Module
objects) lets the meta-learning loop run forward passes through adapted
parameter copies, keeps checkpoints trivially serializable, and makes the
finite-difference gradient tests exercise exactly the ops used in training.

Layout convention: images travel through these functions as NCHW float
tensors with values in [0, 1] at the network boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np
import torch
import torch.nn.functional as F

from .errors import (
    ConfigError,
    DegenerateInputError,
    NumericError,
    ParameterError,
    ShapeError,
)

LEAKY_SLOPE = 0.2

MODE_FIXED_RANDOM = "fixed-random"
MODE_PRETRAINED = "pretrained-file"

DEFAULT_LAYER_WEIGHTS = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class ParameterSet:
    """Named float tensors plus the architecture they instantiate."""

    tensors: dict[str, torch.Tensor]
    arch: dict
    step: int = 0

    def assert_finite(self) -> None:
        for name, t in self.tensors.items():
            if not torch.isfinite(t).all():
                raise NumericError(f"parameter {name} contains non-finite values")

    def clone(self) -> "ParameterSet":
        return ParameterSet(
            tensors={k: v.detach().clone().requires_grad_(v.requires_grad) for k, v in self.tensors.items()},
            arch=dict(self.arch),
            step=self.step,
        )


@dataclass(frozen=True)
class GeneratorConfig:
    levels: int = 3
    base_channels: int = 16

    def __post_init__(self):
        if self.levels < 1:
            raise ParameterError(f"levels must be >= 1, got {self.levels}")
        if self.base_channels < 1:
            raise ParameterError(
                f"base_channels must be >= 1, got {self.base_channels}"
            )


@dataclass(frozen=True)
class ExtractorConfig:
    """Configuration of the frozen perceptual feature extractor.

    mode "fixed-random" builds a seeded 5-stage conv stack (self-contained);
    mode "pretrained-file" loads conv weights from a named-tensor archive
    with tensors conv{stage}_{index}.weight/.bias and taps the second
    convolution of each stage.
    """

    mode: str = MODE_FIXED_RANDOM
    weights_file: str | None = None
    layer_weights: tuple[float, ...] = DEFAULT_LAYER_WEIGHTS
    seed: int = 77
    channels: tuple[int, ...] = (8, 16, 32, 32, 32)

    def __post_init__(self):
        if self.mode not in (MODE_FIXED_RANDOM, MODE_PRETRAINED):
            raise ConfigError(f"unknown extractor mode {self.mode!r}")
        lw = self.layer_weights
        if len(lw) != 5 or any(w < 0 for w in lw) or not any(w > 0 for w in lw):
            raise ConfigError(
                "layer_weights must be 5 nonnegative values, not all zero"
            )
        if len(self.channels) != 5 or any(c < 1 for c in self.channels):
            raise ConfigError("channels must be 5 positive counts")
        if self.mode == MODE_PRETRAINED and not self.weights_file:
            raise ConfigError("pretrained-file mode needs weights_file")


@dataclass(frozen=True)
class DiscriminatorConfig:
    channels: tuple[int, ...] = (16, 32, 64, 64, 64)

    def __post_init__(self):
        if len(self.channels) != 5 or any(c < 1 for c in self.channels):
            raise ConfigError("discriminator needs 5 positive channel counts")


@dataclass
class OptimizerState:
    """Adam moments for a named parameter dict."""

    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


# ---------------------------------------------------------------------------
# primitive ops (shared by every forward pass and by the gradient tests)


def conv3x3(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Same-size 3x3 convolution with zero padding."""
    return F.conv2d(x, weight, bias, padding=1)


def conv1x1(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    return F.conv2d(x, weight, bias)


def conv3x3_stride2(x, weight, bias) -> torch.Tensor:
    return F.conv2d(x, weight, bias, stride=2, padding=1)


def lrelu(x: torch.Tensor) -> torch.Tensor:
    return F.leaky_relu(x, LEAKY_SLOPE)


def downsample(x: torch.Tensor) -> torch.Tensor:
    """2x reduction by average pooling."""
    return F.avg_pool2d(x, 2)


def upsample(x: torch.Tensor) -> torch.Tensor:
    """2x nearest-neighbour enlargement."""
    return F.interpolate(x, scale_factor=2, mode="nearest")


def concat(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return torch.cat([a, b], dim=1)


def l1_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    return (a - b).abs().mean()


# ---------------------------------------------------------------------------
# initialization


def _uniform(shape, fan_in: int, gen: torch.Generator) -> torch.Tensor:
    # fan-in scaled with the leaky-rectifier gain, so activation magnitudes
    # survive depth and training starts from a responsive network
    bound = float(np.sqrt(6.0 / ((1.0 + LEAKY_SLOPE**2) * fan_in)))
    t = torch.empty(shape, dtype=torch.float32)
    t.uniform_(-bound, bound, generator=gen)
    return t


def _conv_pair(tensors, gen, prefix, c_in, c_out):
    tensors[f"{prefix}.weight"] = _uniform((c_out, c_in, 3, 3), c_in * 9, gen)
    tensors[f"{prefix}.bias"] = torch.zeros(c_out)


def generator_channels(cfg: GeneratorConfig) -> list[int]:
    """Encoder output channels per level."""
    return [cfg.base_channels * (2**i) for i in range(cfg.levels)]


def init_generator(cfg: GeneratorConfig, seed: int = 0) -> ParameterSet:
    """Seeded uniform fan-in initialization; biases start at zero."""
    gen = torch.Generator().manual_seed(seed)
    tensors: dict[str, torch.Tensor] = {}
    chans = generator_channels(cfg)
    c_prev = 3
    for i, c in enumerate(chans):
        _conv_pair(tensors, gen, f"enc{i}.conv0", c_prev, c)
        _conv_pair(tensors, gen, f"enc{i}.conv1", c, c)
        c_prev = c
    c_mid = chans[-1] * 2
    _conv_pair(tensors, gen, "mid.conv0", c_prev, c_mid)
    _conv_pair(tensors, gen, "mid.conv1", c_mid, c_mid)
    c_up = c_mid
    for i in reversed(range(cfg.levels)):
        _conv_pair(tensors, gen, f"dec{i}.conv0", c_up + chans[i], chans[i])
        _conv_pair(tensors, gen, f"dec{i}.conv1", chans[i], chans[i])
        c_up = chans[i]
    tensors["out.weight"] = _uniform((3, chans[0], 1, 1), chans[0], gen)
    tensors["out.bias"] = torch.zeros(3)
    for t in tensors.values():
        t.requires_grad_(True)
    arch = {
        "kind": "generator",
        "levels": cfg.levels,
        "base_channels": cfg.base_channels,
    }
    return ParameterSet(tensors=tensors, arch=arch, step=0)


def init_discriminator(cfg: DiscriminatorConfig, seed: int = 0) -> ParameterSet:
    gen = torch.Generator().manual_seed(seed)
    tensors: dict[str, torch.Tensor] = {}
    c_prev = 3
    for i, c in enumerate(cfg.channels):
        _conv_pair(tensors, gen, f"d{i}", c_prev, c)
        c_prev = c
    tensors["dout.weight"] = _uniform((1, c_prev, 1, 1), c_prev, gen)
    tensors["dout.bias"] = torch.zeros(1)
    for t in tensors.values():
        t.requires_grad_(True)
    arch = {"kind": "discriminator", "channels": list(cfg.channels)}
    return ParameterSet(tensors=tensors, arch=arch, step=0)


# ---------------------------------------------------------------------------
# generator


def generator_apply(
    tensors: Mapping[str, torch.Tensor], levels: int, x: torch.Tensor
) -> torch.Tensor:
    """U-Net forward over a named tensor mapping (usable with adapted params)."""
    if x.dim() != 4:
        raise ShapeError(f"expected an NCHW batch, got shape {tuple(x.shape)}")
    div = 2**levels
    if x.shape[2] % div or x.shape[3] % div:
        raise ShapeError(
            f"spatial size {tuple(x.shape[2:])} not divisible by {div}; pad first"
        )
    skips = []
    for i in range(levels):
        x = lrelu(conv3x3(x, tensors[f"enc{i}.conv0.weight"], tensors[f"enc{i}.conv0.bias"]))
        x = lrelu(conv3x3(x, tensors[f"enc{i}.conv1.weight"], tensors[f"enc{i}.conv1.bias"]))
        skips.append(x)
        x = downsample(x)
    x = lrelu(conv3x3(x, tensors["mid.conv0.weight"], tensors["mid.conv0.bias"]))
    x = lrelu(conv3x3(x, tensors["mid.conv1.weight"], tensors["mid.conv1.bias"]))
    for i in reversed(range(levels)):
        x = concat(upsample(x), skips[i])
        x = lrelu(conv3x3(x, tensors[f"dec{i}.conv0.weight"], tensors[f"dec{i}.conv0.bias"]))
        x = lrelu(conv3x3(x, tensors[f"dec{i}.conv1.weight"], tensors[f"dec{i}.conv1.bias"]))
    return conv1x1(x, tensors["out.weight"], tensors["out.bias"])


def generator_forward(params: ParameterSet, x: torch.Tensor) -> torch.Tensor:
    """Forward through a ParameterSet; output is linear (unclamped)."""
    if params.arch.get("kind") != "generator":
        raise ParameterError("params do not describe a generator")
    return generator_apply(params.tensors, int(params.arch["levels"]), x)


# ---------------------------------------------------------------------------
# frozen feature extractor


class FeatureExtractor:
    """A frozen 5-tap convolutional feature pyramid.

    Taps come out at input scale and after each of four 2x pools, so the
    five maps sit at scales 1, 1/2, 1/4, 1/8, 1/16.
    """

    def __init__(self, cfg: ExtractorConfig):
        self.cfg = cfg
        self.normalize: tuple[torch.Tensor, torch.Tensor] | None = None
        if cfg.mode == MODE_FIXED_RANDOM:
            gen = torch.Generator().manual_seed(cfg.seed)
            self.stages = []
            c_prev = 3
            for c in cfg.channels:
                w = _uniform((c, c_prev, 3, 3), c_prev * 9, gen)
                b = torch.zeros(c)
                self.stages.append([(w, b)])
                c_prev = c
            self.pool = "avg"
        else:
            self.stages, self.normalize = _load_pretrained_stages(cfg.weights_file)
            self.pool = "max"
        for stage in self.stages:
            for w, b in stage:
                w.requires_grad_(False)
                b.requires_grad_(False)

    def parameter_vector(self) -> torch.Tensor:
        """Flat copy of all weights; used to assert the extractor stays frozen."""
        return torch.cat(
            [t.flatten() for stage in self.stages for wb in stage for t in wb]
        ).clone()

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.dim() != 4:
            raise ShapeError(f"expected an NCHW batch, got shape {tuple(x.shape)}")
        if x.shape[2] < 32 or x.shape[3] < 32:
            raise DegenerateInputError(
                f"extractor needs inputs of at least 32x32, got {tuple(x.shape[2:])}"
            )
        if self.normalize is not None:
            mean, std = self.normalize
            x = (x - mean.to(x.dtype)) / std.to(x.dtype)
        taps = []
        for s, stage in enumerate(self.stages):
            tap = None
            for j, (w, b) in enumerate(stage):
                x = F.relu(F.conv2d(x, w.to(x.dtype), b.to(x.dtype), padding=1))
                if j == min(1, len(stage) - 1):
                    tap = x
            taps.append(tap)
            if s + 1 < len(self.stages):
                # the next stage continues from the full stage output
                x = F.max_pool2d(x, 2) if self.pool == "max" else F.avg_pool2d(x, 2)
        return taps


def _load_pretrained_stages(path):
    from .archive import load_archive
    from .errors import DataError

    try:
        tensors, meta = load_archive(path)
    except DataError as exc:
        raise ConfigError(f"cannot load extractor weights: {exc}") from exc
    if meta.get("kind") != "feature-extractor":
        raise ConfigError(f"{path} is not a feature-extractor archive")
    stage_convs = meta.get("stage_convs", [2, 2, 2, 2, 2])
    if not isinstance(stage_convs, list) or len(stage_convs) != 5:
        raise ConfigError(f"{path}: stage_convs must list 5 counts")
    stages = []
    for s, n in enumerate(stage_convs, start=1):
        if not isinstance(n, int) or n < 2:
            raise ConfigError(f"{path}: stage {s} must have >= 2 convolutions")
        stage = []
        for j in range(1, n + 1):
            try:
                w = torch.from_numpy(tensors[f"conv{s}_{j}.weight"])
                b = torch.from_numpy(tensors[f"conv{s}_{j}.bias"])
            except KeyError as exc:
                raise ConfigError(f"{path}: missing tensor for conv{s}_{j}") from exc
            if w.dim() != 4 or b.dim() != 1 or w.shape[0] != b.shape[0]:
                raise ConfigError(f"{path}: conv{s}_{j} has inconsistent shapes")
            stage.append((w, b))
        stages.append(stage)
    normalize = None
    if "input_mean" in meta and "input_std" in meta:
        mean = torch.tensor(meta["input_mean"], dtype=torch.float32).view(1, 3, 1, 1)
        std = torch.tensor(meta["input_std"], dtype=torch.float32).view(1, 3, 1, 1)
        normalize = (mean, std)
    return stages, normalize


@lru_cache(maxsize=8)
def _cached_extractor(cfg: ExtractorConfig) -> FeatureExtractor:
    return FeatureExtractor(cfg)


def make_extractor(cfg: ExtractorConfig) -> FeatureExtractor:
    return _cached_extractor(cfg)


def _as_extractor(e) -> FeatureExtractor:
    return e if isinstance(e, FeatureExtractor) else make_extractor(e)


def feature_extract(extractor, x: torch.Tensor) -> list[torch.Tensor]:
    """The 5 frozen feature maps of a batch (accepts a config or an extractor)."""
    return _as_extractor(extractor).features(x)


# ---------------------------------------------------------------------------
# losses


def perceptual_losses(
    extractor, prediction: torch.Tensor, target: torch.Tensor
) -> torch.Tensor:
    """Per-sample perceptual distance, shape (B,).

    For each of the 5 taps: mean absolute feature difference per sample,
    weighted by the extractor's layer weights and summed.
    """
    ex = _as_extractor(extractor)
    if prediction.shape != target.shape:
        raise ShapeError(
            f"prediction {tuple(prediction.shape)} vs target {tuple(target.shape)}"
        )
    fp = ex.features(prediction)
    ft = ex.features(target)
    total = None
    for lam, a, b in zip(ex.cfg.layer_weights, fp, ft):
        per_sample = (a - b).abs().mean(dim=(1, 2, 3))
        term = lam * per_sample
        total = term if total is None else total + term
    return total


def perceptual_loss(extractor, prediction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Scalar perceptual loss: the batch mean of per-sample distances."""
    return perceptual_losses(extractor, prediction, target).mean()


def reweighted_loss(weight, lp):
    """Scale a perceptual loss by a sharpness-derived weight."""
    if not float(weight) >= 0:
        raise ParameterError(f"weight must be >= 0, got {weight}")
    return weight * lp


# ---------------------------------------------------------------------------
# discriminator and adversarial losses


def discriminator_apply(tensors: Mapping[str, torch.Tensor], x: torch.Tensor) -> torch.Tensor:
    """Patch logit map: five stride-2 3x3 convs, then a linear 1x1 conv."""
    if x.dim() != 4:
        raise ShapeError(f"expected an NCHW batch, got shape {tuple(x.shape)}")
    if x.shape[2] < 64 or x.shape[3] < 64:
        raise DegenerateInputError(
            f"discriminator needs inputs of at least 64x64, got {tuple(x.shape[2:])}"
        )
    for i in range(5):
        x = lrelu(conv3x3_stride2(x, tensors[f"d{i}.weight"], tensors[f"d{i}.bias"]))
    return conv1x1(x, tensors["dout.weight"], tensors["dout.bias"])


def discriminator_forward(params: ParameterSet, x: torch.Tensor) -> torch.Tensor:
    if params.arch.get("kind") != "discriminator":
        raise ParameterError("params do not describe a discriminator")
    return discriminator_apply(params.tensors, x)


def discriminator_scores(tensors: Mapping[str, torch.Tensor], x: torch.Tensor) -> torch.Tensor:
    """Per-sample critic score: the spatial mean of the patch logits."""
    return discriminator_apply(tensors, x).mean(dim=(1, 2, 3))


def wgan_gp_losses(
    d_params: ParameterSet,
    real: torch.Tensor,
    fake: torch.Tensor,
    lambda_gp: float = 10.0,
    rng: np.random.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Critic and generator losses with a gradient penalty.

    d_loss = mean D(fake) - mean D(real)
             + lambda_gp * mean((|grad D at interpolates|_2 - 1)^2)
    g_loss = -mean D(fake)

    The interpolation coefficients are drawn per sample from rng.
    """
    if real.shape != fake.shape:
        raise ShapeError(f"real {tuple(real.shape)} vs fake {tuple(fake.shape)}")
    tensors = d_params.tensors if isinstance(d_params, ParameterSet) else d_params
    rng = rng if rng is not None else np.random.default_rng(0)
    s_real = discriminator_scores(tensors, real)
    s_fake = discriminator_scores(tensors, fake)
    eps_np = rng.uniform(size=(real.shape[0], 1, 1, 1))
    eps = torch.from_numpy(eps_np).to(real.dtype)
    mixed = (eps * real + (1.0 - eps) * fake).detach().requires_grad_(True)
    s_mixed = discriminator_scores(tensors, mixed)
    (grad,) = torch.autograd.grad(s_mixed.sum(), mixed, create_graph=True)
    norms = grad.flatten(1).norm(dim=1)
    penalty = ((norms - 1.0) ** 2).mean()
    d_loss = s_fake.mean() - s_real.mean() + lambda_gp * penalty
    g_loss = -s_fake.mean()
    return d_loss, g_loss


# ---------------------------------------------------------------------------
# gradients and the optimizer


def _tensor_dict(params) -> dict[str, torch.Tensor]:
    return params.tensors if isinstance(params, ParameterSet) else dict(params)


def gradients(loss: torch.Tensor, params) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of a scalar loss for every named parameter."""
    tensors = _tensor_dict(params)
    if not torch.isfinite(loss):
        raise NumericError(f"loss is non-finite ({float(loss.detach())})")
    names = list(tensors.keys())
    grads = torch.autograd.grad(
        loss, [tensors[n] for n in names], allow_unused=True, create_graph=False
    )
    return {
        n: (g if g is not None else torch.zeros_like(tensors[n]))
        for n, g in zip(names, grads)
    }


def init_optimizer(params) -> OptimizerState:
    tensors = _tensor_dict(params)
    return OptimizerState(
        m={n: torch.zeros_like(t) for n, t in tensors.items()},
        v={n: torch.zeros_like(t) for n, t in tensors.items()},
    )


def adam_step(params, grads: Mapping[str, torch.Tensor], state: OptimizerState, lr: float):
    """One Adam update with bias correction; mutates params and state."""
    tensors = _tensor_dict(params)
    if set(grads.keys()) != set(tensors.keys()):
        raise ShapeError("gradient names do not match parameter names")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    with torch.no_grad():
        for name, p in tensors.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape mismatch for {name}")
            m = state.m[name]
            v = state.v[name]
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            denom = (v / c2).sqrt_().add_(state.eps)
            p.data.addcdiv_(m / c1, denom, value=-lr)
    if isinstance(params, ParameterSet):
        params.step += 1
    return params, state


# ---------------------------------------------------------------------------
# numpy <-> torch boundary helpers


def images_to_batch(images: list[np.ndarray] | np.ndarray) -> torch.Tensor:
    """Stack H x W x 3 float arrays into an NCHW float32 tensor."""
    if isinstance(images, np.ndarray):
        images = [images]
    arrs = [np.ascontiguousarray(im, dtype=np.float32) for im in images]
    batch = np.stack(arrs)
    return torch.from_numpy(batch).permute(0, 3, 1, 2).contiguous()


def batch_to_images(batch: torch.Tensor) -> list[np.ndarray]:
    """NCHW tensor back to a list of H x W x C float32 arrays."""
    arr = batch.detach().permute(0, 2, 3, 1).contiguous().cpu().numpy()
    return [np.ascontiguousarray(a, dtype=np.float32) for a in arr]
