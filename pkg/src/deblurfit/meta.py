"""Meta-initialization: learn generator weights that fine-tune quickly.

Every meta-iteration samples a batch of tasks across several videos.  A
task is one sharp patch blurred twice with a mirrored kernel pair: the
inner step adapts the parameters on the first blur, the outer step
evaluates the adapted parameters on the mirrored blur and updates the
shared initialization.  Task losses are averaged over the batch (not
summed) so the outer step size is independent of the batch size and a
zero-length inner step reduces exactly to plain training.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .errors import EmptyInputError, ParameterError
from .frames import DEFAULT_WINDOW, select_sharp_frames, sharpness_score
from .kernels import DEFAULT_GAMMA, KERNEL_SIZES, KernelBank, apply_blur, mirrored_pair
from .nnet import (
    ExtractorConfig,
    GeneratorConfig,
    ParameterSet,
    adam_step,
    generator_apply,
    gradients,
    images_to_batch,
    init_generator,
    init_optimizer,
    make_extractor,
    perceptual_losses,
)
from .pipeline import PipelineConfig, _random_offset
from .training import FitConfig, FitLog, fit

log = logging.getLogger(__name__)


def _raise_numeric(value: torch.Tensor, where: str):
    from .errors import NumericError

    raise NumericError(f"{where} task loss is non-finite ({float(value.detach())})")


@dataclass(frozen=True)
class MetaConfig:
    alpha: float = 1e-4  # inner (adaptation) step size
    beta: float = 1e-5  # outer (meta) step size
    meta_iterations: int = 500
    tasks_per_batch: int = 4
    order: str = "first"
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ParameterError("alpha and beta must be >= 0")
        if self.meta_iterations < 1 or self.tasks_per_batch < 1:
            raise ParameterError("meta_iterations and tasks_per_batch must be >= 1")
        if self.order not in ("first", "second"):
            raise ParameterError(f"order must be 'first' or 'second', got {self.order!r}")


@dataclass(frozen=True)
class TaskSample:
    """One GT patch with two blurry renditions from a mirrored kernel pair."""

    gt: np.ndarray
    inner_blurry: np.ndarray
    outer_blurry: np.ndarray
    weight: float


def _usable_sharp_frames(
    videos: list[list[np.ndarray]], window: int, patch_size: int
) -> list[list[np.ndarray]]:
    if not videos:
        raise EmptyInputError("need at least one video for meta-training")
    per_video = []
    for vi, video in enumerate(videos):
        selected = select_sharp_frames(video, window=window)
        frames = [
            video[i]
            for i in selected.indices
            if video[i].shape[0] >= patch_size and video[i].shape[1] >= patch_size
        ]
        if not frames:
            raise EmptyInputError(
                f"video {vi} has no selected frame large enough for {patch_size}px patches"
            )
        per_video.append(frames)
    return per_video


def task_batches(
    videos: list[list[np.ndarray]],
    bank: KernelBank,
    cfg: MetaConfig,
    pipe_cfg: PipelineConfig,
    gamma: float = DEFAULT_GAMMA,
    window: int = DEFAULT_WINDOW,
):
    """Endless deterministic iterator of TaskSample batches.

    One mirrored kernel pair is drawn per batch and shared by its tasks; the
    kernel size is drawn in proportion to the bank's per-size counts.
    """
    per_video = _usable_sharp_frames(videos, window, pipe_cfg.patch_size)
    sizes = [s for s, c in zip(KERNEL_SIZES, bank.counts) if c > 0]
    probs = np.array([c for c in bank.counts if c > 0], dtype=np.float64)
    probs /= probs.sum()
    rng = np.random.default_rng(cfg.seed)

    def generate():
        while True:
            size = int(rng.choice(sizes, p=probs))
            inner_kernel, outer_kernel = mirrored_pair(size, rng)
            batch = []
            for _ in range(cfg.tasks_per_batch):
                video_frames = per_video[int(rng.integers(len(per_video)))]
                frame = video_frames[int(rng.integers(len(video_frames)))]
                oy, ox = _random_offset(frame.shape, pipe_cfg.patch_size, rng)
                gt = frame[oy : oy + pipe_cfg.patch_size, ox : ox + pipe_cfg.patch_size]
                batch.append(
                    TaskSample(
                        gt=gt,
                        inner_blurry=apply_blur(gt, inner_kernel, gamma),
                        outer_blurry=apply_blur(gt, outer_kernel, gamma),
                        weight=sharpness_score(gt) / pipe_cfg.weight_norm,
                    )
                )
            yield batch

    return generate()


def _task_loss(extractor, tensors, levels, blurry_np, gt_np, weight) -> torch.Tensor:
    out = generator_apply(tensors, levels, images_to_batch(blurry_np))
    lp = perceptual_losses(extractor, out, images_to_batch(gt_np))
    w = torch.tensor([weight], dtype=torch.float32)
    return (w * lp).mean()


def maml_train(
    videos: list[list[np.ndarray]],
    bank: KernelBank,
    cfg: MetaConfig,
    pipe_cfg: PipelineConfig | None = None,
    gen_cfg: GeneratorConfig | None = None,
    extractor_cfg: ExtractorConfig | None = None,
    gamma: float = DEFAULT_GAMMA,
    window: int = DEFAULT_WINDOW,
    init_params: ParameterSet | None = None,
    task_source=None,
) -> ParameterSet:
    """Learn a fast-adapting initialization across videos.

    Per meta-iteration and task: one plain gradient step of size alpha on
    the inner blurry patch, then the task loss of the adapted parameters on
    the mirrored outer patch.  The mean task loss drives one Adam step of
    size beta on the shared parameters.  order='first' treats the adapted
    parameters as constants when differentiating the outer loss; 'second'
    differentiates through the inner step.  The adversarial term is always
    off here.
    """
    pipe_cfg = pipe_cfg if pipe_cfg is not None else PipelineConfig()
    gen_cfg = gen_cfg if gen_cfg is not None else GeneratorConfig()
    extractor_cfg = extractor_cfg if extractor_cfg is not None else ExtractorConfig()
    extractor = make_extractor(extractor_cfg)

    params = init_params.clone() if init_params is not None else init_generator(gen_cfg, cfg.seed)
    levels = int(params.arch["levels"])
    names = list(params.tensors.keys())
    source = task_source if task_source is not None else task_batches(
        videos, bank, cfg, pipe_cfg, gamma, window
    )
    source_iter = iter(source)
    outer_state = init_optimizer(params)
    second_order = cfg.order == "second"

    for _ in range(cfg.meta_iterations):
        tasks = next(source_iter)
        k = len(tasks)
        accum: dict[str, torch.Tensor] | None = None
        outer_terms = []
        for task in tasks:
            inner_loss = _task_loss(
                extractor, params.tensors, levels, task.inner_blurry, task.gt, task.weight
            )
            if not torch.isfinite(inner_loss):
                _raise_numeric(inner_loss, "inner")
            inner_grads = torch.autograd.grad(
                inner_loss,
                [params.tensors[n] for n in names],
                create_graph=second_order,
                allow_unused=True,
            )
            adapted = {}
            for n, g in zip(names, inner_grads):
                base = params.tensors[n]
                step = base - cfg.alpha * (g if g is not None else torch.zeros_like(base))
                if not second_order:
                    step = step.detach().requires_grad_(True)
                adapted[n] = step
            outer_loss = _task_loss(
                extractor, adapted, levels, task.outer_blurry, task.gt, task.weight
            )
            if not torch.isfinite(outer_loss):
                _raise_numeric(outer_loss, "outer")
            if second_order:
                outer_terms.append(outer_loss)
            else:
                task_grads = torch.autograd.grad(
                    outer_loss, [adapted[n] for n in names], allow_unused=True
                )
                if accum is None:
                    accum = {
                        n: (g.clone() if g is not None else torch.zeros_like(params.tensors[n]))
                        for n, g in zip(names, task_grads)
                    }
                else:
                    for n, g in zip(names, task_grads):
                        if g is not None:
                            accum[n] += g
        if second_order:
            mean_loss = torch.stack(outer_terms).mean()
            outer_grads = gradients(mean_loss, params)
        else:
            outer_grads = {n: accum[n] / k for n in names}
        adam_step(params, outer_grads, outer_state, cfg.beta)
    return params


def finetune(
    meta_params: ParameterSet,
    video: list[np.ndarray],
    bank: KernelBank,
    cfg: FitConfig,
    pipe_cfg: PipelineConfig | None = None,
    extractor_cfg: ExtractorConfig | None = None,
    gamma: float = DEFAULT_GAMMA,
    window: int = DEFAULT_WINDOW,
    checkpoint_path=None,
) -> tuple[ParameterSet, FitLog]:
    """Adapt a meta-initialization to one video: training.fit started from it.

    iterations=0 returns an untouched copy of the initialization.
    """
    if cfg.iterations == 0:
        return meta_params.clone(), FitLog(adversarial=cfg.adversarial)
    selected = select_sharp_frames(video, window=window)
    frames = [video[i] for i in selected.indices]
    return fit(
        frames,
        bank,
        cfg,
        pipe_cfg=pipe_cfg,
        extractor_cfg=extractor_cfg,
        gamma=gamma,
        init_params=meta_params,
        checkpoint_path=checkpoint_path,
    )
