"""Video deblurring by per-video training on the video's own sharp frames.

The toolkit selects the sharpest frames of a blurry video, synthesizes
realistic motion-blurred copies of them, trains a small U-Net to invert the
blur on exactly that data, and then runs the trained model over every frame.
A MAML-style meta initialization across videos makes the per-video fit fast.
"""

from .archive import load_archive, save_archive
from .config import BlurConfig, RunConfig, SelectionConfig, dump_config, load_config
from .errors import (
    ConfigError,
    DataError,
    DeblurfitError,
    NumericError,
    UsageError,
)
from .frames import (
    select_sharp_frames,
    sharpness_report,
    sharpness_score,
    to_luminance,
)
from .inference import deblur_frame, deblur_video, plan_padding
from .kernels import (
    BlurKernel,
    KernelBank,
    MotionVector,
    apply_blur,
    asymmetric_kernel,
    build_bank,
    degamma,
    load_bank,
    mirrored_pair,
    regamma,
    save_bank,
    simulated_kernel,
    symmetric_kernel,
)
from .meta import MetaConfig, finetune, maml_train
from .metrics import (
    MetricReport,
    estimate_flow,
    evaluate_video,
    pair_warping_error,
    perceptual_distance,
    psnr,
    ssim,
    warp,
    warping_error,
)
from .nnet import (
    DiscriminatorConfig,
    ExtractorConfig,
    GeneratorConfig,
    ParameterSet,
    init_generator,
)
from .pipeline import PipelineConfig, TrainPair, batches, make_pair, sample_patch
from .training import (
    FitConfig,
    FitLog,
    fit,
    load_checkpoint,
    save_checkpoint,
    write_fitlog,
)

__version__ = "0.1.0"

__all__ = [
    "BlurConfig",
    "BlurKernel",
    "ConfigError",
    "DataError",
    "DeblurfitError",
    "DiscriminatorConfig",
    "ExtractorConfig",
    "FitConfig",
    "FitLog",
    "GeneratorConfig",
    "KernelBank",
    "MetaConfig",
    "MetricReport",
    "MotionVector",
    "NumericError",
    "ParameterSet",
    "PipelineConfig",
    "RunConfig",
    "SelectionConfig",
    "TrainPair",
    "UsageError",
    "apply_blur",
    "asymmetric_kernel",
    "batches",
    "build_bank",
    "deblur_frame",
    "deblur_video",
    "degamma",
    "dump_config",
    "estimate_flow",
    "evaluate_video",
    "finetune",
    "fit",
    "init_generator",
    "load_archive",
    "load_bank",
    "load_checkpoint",
    "load_config",
    "make_pair",
    "maml_train",
    "mirrored_pair",
    "pair_warping_error",
    "perceptual_distance",
    "plan_padding",
    "psnr",
    "regamma",
    "sample_patch",
    "save_archive",
    "save_bank",
    "save_checkpoint",
    "select_sharp_frames",
    "sharpness_report",
    "sharpness_score",
    "simulated_kernel",
    "ssim",
    "symmetric_kernel",
    "to_luminance",
    "warp",
    "warping_error",
    "write_fitlog",
]
