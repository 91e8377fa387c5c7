"""Command-line entry points.

Subcommands cover the whole pipeline: score (sharpness report), kernels
(bank synthesis), synth (synthetic blurry video + manifest), fit (per-video
training), meta (shared initialization across videos), deblur (inference),
and eval (quality report).  Every command is deterministic given its inputs,
config, and seed, and exits 0 on success, 1 on usage errors, 2 on config
errors, 3 on I/O errors, and 4 on numeric failures.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
from pathlib import Path

import filelock
import numpy as np

from . import plots, videio
from .config import RunConfig, dump_config, load_config
from .errors import DataError, DeblurfitError, UsageError
from .frames import select_sharp_frames, sharpness_report
from .inference import deblur_video
from .kernels import KernelBank, apply_blur, build_bank, load_bank, save_bank
from .meta import maml_train
from .metrics import evaluate_video, load_flow
from .training import (
    fit,
    load_checkpoint,
    save_checkpoint,
    write_fitlog,
)

LOCK_NAME = ".deblurfit.lock"


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through the error hierarchy."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@contextlib.contextmanager
def _output_guard(target, kind: str = "file"):
    """Hold an exclusive lock while writing to a file or directory."""
    target = Path(target)
    if kind == "dir":
        target.mkdir(parents=True, exist_ok=True)
        lock_path = target / LOCK_NAME
    else:
        target.parent.mkdir(parents=True, exist_ok=True)
        lock_path = target.parent / (target.name + ".lock")
    lock = filelock.FileLock(str(lock_path), timeout=0)
    try:
        with lock:
            yield
    except filelock.Timeout:
        raise DataError(f"{target} is locked by another writer") from None


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config, overrides=tuple(args.override or ()))
    if getattr(args, "dump_config", None):
        dump_config(cfg, args.dump_config)
    return cfg


def _make_bank(cfg: RunConfig) -> KernelBank:
    return build_bank(cfg.blur.counts, seed=cfg.blur.seed, family=cfg.blur.family)


def _format_cell(value) -> str:
    return "" if value is None else f"{value:.6g}"


# ---------------------------------------------------------------------------
# commands


def cmd_score(in_dir, out_csv, cfg: RunConfig) -> int:
    frames = videio.load_frames(in_dir)
    rows = sharpness_report(frames, window=cfg.selection.window)
    out_csv = Path(out_csv)
    with _output_guard(out_csv):
        with open(out_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "score", "selected"])
            for index, score, selected in rows:
                writer.writerow([index, f"{score:.6g}", int(selected)])
        plots.save_sharpness_plot(rows, out_csv.with_suffix(".png"))
    n_sel = sum(1 for r in rows if r[2])
    print(f"scored {len(rows)} frames, {n_sel} selected -> {out_csv}")
    return 0


def cmd_kernels(out_file, cfg: RunConfig) -> int:
    bank = _make_bank(cfg)
    out_file = Path(out_file)
    with _output_guard(out_file):
        save_bank(out_file, bank)
        plots.save_kernel_montage(bank, out_file.with_suffix(".png"))
    for size in (21, 31, 41):
        group = bank.of_size(size)
        if not group:
            continue
        sum_err = max(abs(float(k.weights.sum()) - 1.0) for k in group)
        flip_err = max(
            float(np.abs(k.weights - k.weights[::-1, ::-1]).max()) for k in group
        )
        print(
            f"size {size}: {len(group)} kernels, max |sum-1| = {sum_err:.3g}, "
            f"max |w - rot180(w)| = {flip_err:.3g}"
        )
    print(f"saved {len(bank)} kernels -> {out_file}")
    return 0


def cmd_synth(in_dir, out_dir, manifest_path, cfg: RunConfig) -> int:
    frames = videio.load_frames(in_dir)
    selection = select_sharp_frames(frames, window=cfg.selection.window)
    bank = _make_bank(cfg)
    gamma = cfg.blur.effective_gamma
    rng = np.random.default_rng([cfg.blur.seed, 1])
    out_dir = Path(out_dir)
    manifest_path = Path(manifest_path) if manifest_path else out_dir / "manifest.json"
    records = []
    outputs = []
    for i, frame in enumerate(frames):
        if i in selection:
            outputs.append(frame)
            records.append({"index": i, "kept_sharp": True})
            continue
        kernel_id = int(rng.integers(len(bank.kernels)))
        kernel = bank.kernels[kernel_id]
        outputs.append(apply_blur(frame, kernel, gamma))
        record = {
            "index": i,
            "kept_sharp": False,
            "kernel_id": kernel_id,
            "family": kernel.family,
            "size": kernel.size,
        }
        if kernel.motion is not None:
            record["length"] = kernel.motion.length
            record["orientation"] = kernel.motion.orientation
        records.append(record)
    manifest = {
        "window": cfg.selection.window,
        "gamma": gamma,
        "bank": {
            "counts": list(cfg.blur.counts),
            "family": cfg.blur.family,
            "seed": cfg.blur.seed,
        },
        "selected": list(selection.indices),
        "frames": records,
    }
    with _output_guard(out_dir, kind="dir"):
        videio.save_frames(out_dir, outputs)
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
    n_blurred = sum(1 for r in records if not r["kept_sharp"])
    print(
        f"wrote {len(outputs)} frames ({n_blurred} blurred, "
        f"{len(outputs) - n_blurred} kept sharp) -> {out_dir}"
    )
    return 0


def cmd_fit(in_dir, out_checkpoint, cfg: RunConfig, init_checkpoint=None) -> int:
    frames = videio.load_frames(in_dir)
    selection = select_sharp_frames(frames, window=cfg.selection.window)
    sharp = [frames[i] for i in selection.indices]
    bank = _make_bank(cfg)
    init_params = None
    if init_checkpoint is not None:
        init_params, _ = load_checkpoint(init_checkpoint)
    out_checkpoint = Path(out_checkpoint)
    with _output_guard(out_checkpoint):
        params, fitlog = fit(
            sharp,
            bank,
            cfg.fit,
            pipe_cfg=cfg.pipeline,
            gen_cfg=cfg.generator,
            extractor_cfg=cfg.extractor,
            gamma=cfg.blur.effective_gamma,
            init_params=init_params,
            checkpoint_path=out_checkpoint,
        )
        log_csv = out_checkpoint.with_suffix(".log.csv")
        write_fitlog(fitlog, log_csv)
        plots.save_loss_plot(fitlog, out_checkpoint.with_suffix(".loss.png"))
    losses = fitlog.losses()
    if len(losses):
        print(f"fit {len(losses)} iterations, final loss {losses[-1]:.6g}")
    print(f"checkpoint -> {out_checkpoint}, log -> {log_csv}")
    return 0


def cmd_meta(in_dirs, out_checkpoint, cfg: RunConfig) -> int:
    videos = [videio.load_frames(d) for d in in_dirs]
    bank = _make_bank(cfg)
    out_checkpoint = Path(out_checkpoint)
    with _output_guard(out_checkpoint):
        params = maml_train(
            videos,
            bank,
            cfg.meta,
            pipe_cfg=cfg.pipeline,
            gen_cfg=cfg.generator,
            extractor_cfg=cfg.extractor,
            gamma=cfg.blur.effective_gamma,
            window=cfg.selection.window,
        )
        save_checkpoint(params, None, out_checkpoint, meta_init=True)
    print(
        f"meta-trained on {len(videos)} videos for {cfg.meta.meta_iterations} "
        f"iterations -> {out_checkpoint}"
    )
    return 0


def cmd_deblur(in_dir, checkpoint, out_dir, tile=None, overlap=32) -> int:
    params, _ = load_checkpoint(checkpoint)
    frames = videio.load_frames(in_dir)
    out_dir = Path(out_dir)
    with _output_guard(out_dir, kind="dir"):
        outputs = deblur_video(params, frames, tile=tile, overlap=overlap)
        videio.save_frames(out_dir, outputs)
    print(f"deblurred {len(outputs)} frames -> {out_dir}")
    return 0


def _load_flow_dir(directory) -> list[np.ndarray]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"flow directory {directory} does not exist")
    files = sorted(directory.glob("flow_*.nta"))
    if not files:
        raise DataError(f"no flow_*.nta files in {directory}")
    return [load_flow(p) for p in files]


def cmd_eval(out_dir, report_csv, cfg: RunConfig, reference_dir=None, flow_dir=None, backward_flow_dir=None) -> int:
    outputs = videio.load_frames(out_dir)
    reference = videio.load_frames(reference_dir) if reference_dir else None
    flows = _load_flow_dir(flow_dir) if flow_dir else None
    backward = _load_flow_dir(backward_flow_dir) if backward_flow_dir else None
    report = evaluate_video(
        outputs,
        reference=reference,
        extractor_cfg=cfg.extractor,
        flows=flows,
        backward_flows=backward,
    )
    report_csv = Path(report_csv)
    aggregates = report.aggregates()
    keys = ("psnr", "ssim", "perceptual", "warp")
    with _output_guard(report_csv):
        with open(report_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", *keys])
            for row in report.rows:
                writer.writerow([row["frame"], *(_format_cell(row[k]) for k in keys)])
            for stat in ("mean", "median"):
                writer.writerow(
                    [stat, *(_format_cell(aggregates[stat].get(k)) for k in keys)]
                )
        plots.save_metric_plot(report, report_csv.with_suffix(".png"))
    shown = {k: v for k, v in aggregates["mean"].items()}
    summary = ", ".join(f"{k} {v:.6g}" for k, v in shown.items()) or "no metrics"
    print(f"evaluated {len(outputs)} frames ({summary}) -> {report_csv}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_options(parser):
    parser.add_argument("--config", metavar="FILE", help="INI config file")
    parser.add_argument(
        "--override",
        metavar="SECTION.KEY=VALUE",
        action="append",
        help="override one config value (repeatable)",
    )
    parser.add_argument(
        "--dump-config", metavar="FILE", help="write the effective config and continue"
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="deblurfit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="per-frame sharpness report (CSV + figure)")
    p.add_argument("in_dir")
    p.add_argument("out_csv")
    _add_config_options(p)

    p = sub.add_parser("kernels", help="synthesize a blur-kernel bank")
    p.add_argument("out_file")
    _add_config_options(p)

    p = sub.add_parser("synth", help="make a synthetic blurry video + manifest")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    p.add_argument("--manifest", metavar="FILE", help="manifest path (default: out_dir/manifest.json)")
    _add_config_options(p)

    p = sub.add_parser("fit", help="train a model on one video's sharp frames")
    p.add_argument("in_dir")
    p.add_argument("out_checkpoint")
    p.add_argument("--init", metavar="CHECKPOINT", help="start from this checkpoint")
    _add_config_options(p)

    p = sub.add_parser("meta", help="learn a shared initialization across videos")
    p.add_argument("in_dirs", nargs="+")
    p.add_argument("out_checkpoint")
    _add_config_options(p)

    p = sub.add_parser("deblur", help="run a checkpoint over a frame directory")
    p.add_argument("in_dir")
    p.add_argument("checkpoint")
    p.add_argument("out_dir")
    p.add_argument("--tile", type=int, help="tile size for large frames")
    p.add_argument("--overlap", type=int, default=32, help="tile overlap in pixels")

    p = sub.add_parser("eval", help="quality metrics report (CSV + figure)")
    p.add_argument("out_dir")
    p.add_argument("report_csv")
    p.add_argument("--reference", metavar="DIR", help="ground-truth frame directory")
    p.add_argument("--flows", metavar="DIR", help="directory of flow_*.nta files")
    p.add_argument(
        "--backward-flows", metavar="DIR", help="directory of reverse flow_*.nta files"
    )
    _add_config_options(p)

    return parser


def _dispatch(args) -> int:
    if args.command == "score":
        return cmd_score(args.in_dir, args.out_csv, _load_run_config(args))
    if args.command == "kernels":
        return cmd_kernels(args.out_file, _load_run_config(args))
    if args.command == "synth":
        return cmd_synth(args.in_dir, args.out_dir, args.manifest, _load_run_config(args))
    if args.command == "fit":
        return cmd_fit(
            args.in_dir, args.out_checkpoint, _load_run_config(args), init_checkpoint=args.init
        )
    if args.command == "meta":
        return cmd_meta(args.in_dirs, args.out_checkpoint, _load_run_config(args))
    if args.command == "deblur":
        return cmd_deblur(
            args.in_dir, args.checkpoint, args.out_dir, tile=args.tile, overlap=args.overlap
        )
    if args.command == "eval":
        return cmd_eval(
            args.out_dir,
            args.report_csv,
            _load_run_config(args),
            reference_dir=args.reference,
            flow_dir=args.flows,
            backward_flow_dir=args.backward_flows,
        )
    raise UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _dispatch(args)
    except DeblurfitError as exc:
        print(f"deblurfit: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
