"""Per-video fitting: optimize the generator on a video's own sharp frames.

Each iteration draws a batch of weighted sharp/blurry pairs, measures the
perceptual distance between the generator's output and the sharp target,
scales it by the pair weight, and takes one Adam step.  An optional critic
adds an adversarial term.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .archive import load_archive, save_archive
from .errors import DataError, ParameterError
from .kernels import DEFAULT_GAMMA, KernelBank
from .nnet import (
    DiscriminatorConfig,
    ExtractorConfig,
    GeneratorConfig,
    OptimizerState,
    ParameterSet,
    adam_step,
    discriminator_scores,
    generator_apply,
    gradients,
    images_to_batch,
    init_discriminator,
    init_generator,
    init_optimizer,
    make_extractor,
    perceptual_losses,
    wgan_gp_losses,
)
from .pipeline import PipelineConfig, batches

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

DEFAULT_ITERATIONS = 4000  # desk-scale; full-fidelity runs use 400_000


@dataclass(frozen=True)
class FitConfig:
    iterations: int = DEFAULT_ITERATIONS
    lr_generator: float = 5e-5
    lr_discriminator: float = 1e-4
    adversarial: bool = False
    adversarial_weight: float = 1.0
    lambda_gp: float = 10.0
    reweighting: bool = True
    checkpoint_every: int = 0  # 0 = only the final checkpoint
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ParameterError(f"iterations must be >= 0, got {self.iterations}")
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ParameterError("learning rates must be > 0")
        if self.adversarial_weight < 0 or self.lambda_gp < 0:
            raise ParameterError("adversarial_weight and lambda_gp must be >= 0")
        if self.checkpoint_every < 0:
            raise ParameterError("checkpoint_every must be >= 0")


@dataclass
class FitLog:
    """Per-iteration training records.

    Rows are (iteration, loss, d_loss, g_adv, seconds); the adversarial
    entries are None when the critic is off, and the CSV form then omits
    those columns entirely.
    """

    adversarial: bool
    rows: list[tuple] = field(default_factory=list)

    def losses(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    def smoothed_losses(self, window: int = 100) -> np.ndarray:
        """Trailing moving average of the loss column."""
        losses = self.losses()
        if len(losses) == 0:
            return losses
        sums = np.cumsum(np.insert(losses, 0, 0.0))
        starts = np.maximum(np.arange(len(losses)) - window + 1, 0)
        return (sums[1:] - sums[starts]) / (np.arange(len(losses)) - starts + 1)


def write_fitlog(fitlog: FitLog, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if fitlog.adversarial:
            writer.writerow(["iter", "loss", "d_loss", "g_adv", "seconds"])
            for it, loss, d_loss, g_adv, secs in fitlog.rows:
                writer.writerow([it, f"{loss:.8g}", f"{d_loss:.8g}", f"{g_adv:.8g}", f"{secs:.3f}"])
        else:
            writer.writerow(["iter", "loss", "seconds"])
            for it, loss, _, _, secs in fitlog.rows:
                writer.writerow([it, f"{loss:.8g}", f"{secs:.3f}"])


def _batch_tensors(batch):
    blurry = images_to_batch([p.blurry for p in batch])
    sharp = images_to_batch([p.sharp for p in batch])
    weights = torch.tensor([p.weight for p in batch], dtype=torch.float32)
    return blurry, sharp, weights


def fit(
    frames: list[np.ndarray],
    bank: KernelBank,
    cfg: FitConfig,
    pipe_cfg: PipelineConfig | None = None,
    gen_cfg: GeneratorConfig | None = None,
    extractor_cfg: ExtractorConfig | None = None,
    disc_cfg: DiscriminatorConfig | None = None,
    gamma: float = DEFAULT_GAMMA,
    init_params: ParameterSet | None = None,
    checkpoint_path=None,
    batch_source=None,
) -> tuple[ParameterSet, FitLog]:
    """Fit a generator to a video's sharp frames; returns (params, log).

    Deterministic for fixed seeds.  ``init_params`` (cloned, never mutated)
    starts the run from an existing parameter set; ``batch_source`` replaces
    the internal pipeline with any iterator of TrainPair batches.  On a
    non-finite loss the run aborts with the last written checkpoint intact.
    """
    pipe_cfg = pipe_cfg if pipe_cfg is not None else PipelineConfig()
    gen_cfg = gen_cfg if gen_cfg is not None else GeneratorConfig()
    extractor_cfg = extractor_cfg if extractor_cfg is not None else ExtractorConfig()
    disc_cfg = disc_cfg if disc_cfg is not None else DiscriminatorConfig()

    if init_params is not None:
        params = init_params.clone()
    else:
        params = init_generator(gen_cfg, cfg.seed)
    levels = int(params.arch["levels"])
    extractor = make_extractor(extractor_cfg)
    frozen_before = extractor.parameter_vector()

    disc = None
    disc_state = None
    gp_rng = None
    if cfg.adversarial:
        disc = init_discriminator(disc_cfg, cfg.seed + 1)
        disc_state = init_optimizer(disc)
        gp_rng = np.random.default_rng([cfg.seed, 2])

    source = batch_source if batch_source is not None else batches(frames, pipe_cfg, bank, gamma)
    source_iter = iter(source)
    opt_state = init_optimizer(params)
    fitlog = FitLog(adversarial=cfg.adversarial)
    start = time.perf_counter()

    for i in range(1, cfg.iterations + 1):
        batch = next(source_iter)
        blurry, sharp, weights = _batch_tensors(batch)
        out = generator_apply(params.tensors, levels, blurry)
        lp = perceptual_losses(extractor, out, sharp)
        if cfg.reweighting:
            loss = (weights * lp).mean()
        else:
            loss = lp.mean()
        d_loss_val = None
        g_adv_val = None
        if cfg.adversarial:
            g_adv = -discriminator_scores(disc.tensors, out).mean()
            total = loss + cfg.adversarial_weight * g_adv
            g_adv_val = float(g_adv.detach())
        else:
            total = loss
        grads = gradients(total, params)
        adam_step(params, grads, opt_state, cfg.lr_generator)
        if cfg.adversarial:
            d_loss, _ = wgan_gp_losses(disc, sharp, out.detach(), cfg.lambda_gp, gp_rng)
            d_grads = gradients(d_loss, disc)
            adam_step(disc, d_grads, disc_state, cfg.lr_discriminator)
            d_loss_val = float(d_loss.detach())
        fitlog.rows.append(
            (
                params.step,
                float(loss.detach()),
                d_loss_val,
                g_adv_val,
                time.perf_counter() - start,
            )
        )
        if (
            checkpoint_path is not None
            and cfg.checkpoint_every > 0
            and i % cfg.checkpoint_every == 0
        ):
            params.assert_finite()
            save_checkpoint(params, opt_state, checkpoint_path, disc=disc, disc_state=disc_state)

    if checkpoint_path is not None:
        params.assert_finite()
        save_checkpoint(params, opt_state, checkpoint_path, disc=disc, disc_state=disc_state)

    after = extractor.parameter_vector()
    if not torch.equal(frozen_before, after):
        raise AssertionError("feature extractor drifted during training")
    return params, fitlog


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(
    params: ParameterSet,
    state: OptimizerState | None,
    path,
    disc: ParameterSet | None = None,
    disc_state: OptimizerState | None = None,
    meta_init: bool = False,
) -> None:
    """Write parameters (and moments) to a named-tensor archive."""
    tensors = {}
    for name, t in params.tensors.items():
        tensors[f"param.{name}"] = t.detach().numpy()
    if state is not None:
        for name, t in state.m.items():
            tensors[f"adam.m.{name}"] = t.numpy()
        for name, t in state.v.items():
            tensors[f"adam.v.{name}"] = t.numpy()
    if disc is not None:
        for name, t in disc.tensors.items():
            tensors[f"disc.{name}"] = t.detach().numpy()
        if disc_state is not None:
            for name, t in disc_state.m.items():
                tensors[f"dadam.m.{name}"] = t.numpy()
            for name, t in disc_state.v.items():
                tensors[f"dadam.v.{name}"] = t.numpy()
    meta = {
        "kind": "checkpoint",
        "checkpoint_version": CHECKPOINT_VERSION,
        "arch": params.arch,
        "step": int(params.step),
        "adam_t": int(state.t) if state is not None else None,
        "meta": bool(meta_init),
    }
    if disc is not None:
        meta["disc_arch"] = disc.arch
        meta["dadam_t"] = int(disc_state.t) if disc_state is not None else None
    save_archive(path, tensors, meta)


def _split_group(tensors: dict, prefix: str) -> dict[str, torch.Tensor]:
    out = {}
    for name, arr in tensors.items():
        if name.startswith(prefix):
            out[name[len(prefix) :]] = torch.from_numpy(arr.copy())
    return out


def load_checkpoint(path) -> tuple[ParameterSet, OptimizerState | None]:
    """Read back (generator ParameterSet, OptimizerState or None)."""
    tensors, meta = load_archive(path)
    if meta.get("kind") != "checkpoint":
        raise DataError(f"{path} is not a checkpoint archive")
    if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise DataError(
            f"{path}: unsupported checkpoint version {meta.get('checkpoint_version')!r}"
        )
    arch = meta.get("arch")
    if not isinstance(arch, dict) or "kind" not in arch:
        raise DataError(f"{path} is missing its architecture descriptor")
    param_tensors = _split_group(tensors, "param.")
    if not param_tensors:
        raise DataError(f"{path} holds no parameter tensors")
    for t in param_tensors.values():
        t.requires_grad_(True)
    params = ParameterSet(tensors=param_tensors, arch=arch, step=int(meta.get("step", 0)))
    m = _split_group(tensors, "adam.m.")
    v = _split_group(tensors, "adam.v.")
    state = None
    if m or v:
        if set(m) != set(param_tensors) or set(v) != set(param_tensors):
            raise DataError(f"{path}: optimizer moments do not match parameters")
        state = OptimizerState(m=m, v=v, t=int(meta.get("adam_t") or 0))
    return params, state


def checkpoint_is_meta(path) -> bool:
    _, meta = load_archive(path)
    return bool(meta.get("meta"))
