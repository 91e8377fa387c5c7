"""Tests for the per-video fitting loop and checkpointing."""

import csv

import numpy as np
import pytest
import torch

from deblurfit.archive import load_archive, save_archive
from deblurfit.errors import DataError, NumericError, ParameterError
from deblurfit.nnet import DiscriminatorConfig, ExtractorConfig, GeneratorConfig, init_generator
from deblurfit.pipeline import PipelineConfig, TrainPair
from deblurfit.training import (
    FitConfig,
    FitLog,
    checkpoint_is_meta,
    fit,
    load_checkpoint,
    save_checkpoint,
    write_fitlog,
)

from conftest import texture

TINY_GEN = GeneratorConfig(levels=2, base_channels=4)
SMALL_EXTRACTOR = ExtractorConfig(channels=(4, 4, 4, 4, 4))


def small_fit(small_bank, iterations, seed=0, patch=32, **cfg_kwargs):
    frames = [texture(48, 48, seed=s) for s in range(2)]
    cfg = FitConfig(iterations=iterations, seed=seed, **cfg_kwargs)
    pipe = PipelineConfig(patch_size=patch, batch_size=2, seed=seed)
    return fit(
        frames,
        small_bank,
        cfg,
        pipe_cfg=pipe,
        gen_cfg=TINY_GEN,
        extractor_cfg=SMALL_EXTRACTOR,
    )


class TestFit:
    def test_single_iteration_updates_parameters(self, small_bank):
        params, fitlog = small_fit(small_bank, iterations=1, seed=1)
        fresh = init_generator(TINY_GEN, seed=1)
        assert params.step == 1
        assert len(fitlog.rows) == 1
        changed = any(
            not torch.equal(params.tensors[n], fresh.tensors[n]) for n in params.tensors
        )
        assert changed

    def test_zero_iterations_is_noop(self, small_bank, tmp_path):
        frames = [texture(48, 48, seed=0)]
        cfg = FitConfig(iterations=0, seed=2)
        path = tmp_path / "ck.nta"
        params, fitlog = fit(
            frames,
            small_bank,
            cfg,
            pipe_cfg=PipelineConfig(patch_size=32, batch_size=1),
            gen_cfg=TINY_GEN,
            extractor_cfg=SMALL_EXTRACTOR,
            checkpoint_path=path,
        )
        fresh = init_generator(TINY_GEN, seed=2)
        for n in params.tensors:
            assert torch.equal(params.tensors[n], fresh.tensors[n])
        assert fitlog.rows == []
        assert path.exists()

    def test_same_seed_identical_runs(self, small_bank):
        params_a, log_a = small_fit(small_bank, iterations=8, seed=3)
        params_b, log_b = small_fit(small_bank, iterations=8, seed=3)
        assert np.array_equal(log_a.losses(), log_b.losses())
        for n in params_a.tensors:
            assert torch.equal(params_a.tensors[n], params_b.tensors[n])

    def test_iteration_numbers_monotonic(self, small_bank):
        _, fitlog = small_fit(small_bank, iterations=5, seed=4)
        iters = [row[0] for row in fitlog.rows]
        assert iters == sorted(iters)
        assert len(set(iters)) == len(iters)
        assert all(np.isfinite(row[1]) for row in fitlog.rows)

    def test_initialization_from_existing_parameters(self, small_bank):
        start, _ = small_fit(small_bank, iterations=2, seed=5)
        frames = [texture(48, 48, seed=0)]
        params, _ = fit(
            frames,
            small_bank,
            FitConfig(iterations=3, seed=5),
            pipe_cfg=PipelineConfig(patch_size=32, batch_size=1),
            extractor_cfg=SMALL_EXTRACTOR,
            init_params=start,
        )
        assert params.step == 5
        # the incoming parameters are cloned, never touched
        assert start.step == 2

    def test_reweighting_toggle(self, small_bank):
        patch = texture(32, 32, seed=6)
        blurry = texture(32, 32, seed=7)
        pair = TrainPair(sharp=patch, blurry=blurry, weight=0.0, kernel_id=0)

        def source():
            while True:
                yield [pair]

        frames = [patch]
        on_params, on_log = fit(
            frames,
            small_bank,
            FitConfig(iterations=1, reweighting=True, seed=0),
            gen_cfg=TINY_GEN,
            extractor_cfg=SMALL_EXTRACTOR,
            batch_source=source(),
        )
        off_params, off_log = fit(
            frames,
            small_bank,
            FitConfig(iterations=1, reweighting=False, seed=0),
            gen_cfg=TINY_GEN,
            extractor_cfg=SMALL_EXTRACTOR,
            batch_source=source(),
        )
        # a zero-weight pair contributes nothing when reweighting is on
        assert on_log.rows[0][1] == 0.0
        assert off_log.rows[0][1] > 0.0

    def test_adversarial_run_logs_both_losses(self, small_bank):
        frames = [texture(72, 72, seed=8)]
        params, fitlog = fit(
            frames,
            small_bank,
            FitConfig(iterations=2, adversarial=True, seed=9),
            pipe_cfg=PipelineConfig(patch_size=64, batch_size=1),
            gen_cfg=TINY_GEN,
            extractor_cfg=SMALL_EXTRACTOR,
            disc_cfg=DiscriminatorConfig(channels=(4, 4, 4, 4, 4)),
        )
        assert fitlog.adversarial
        for _, loss, d_loss, g_adv, _ in fitlog.rows:
            assert np.isfinite(loss)
            assert np.isfinite(d_loss)
            assert np.isfinite(g_adv)

    def test_numeric_abort_keeps_last_checkpoint(self, small_bank, tmp_path):
        patch = texture(32, 32, seed=10)
        good = TrainPair(sharp=patch, blurry=patch.copy(), weight=0.5, kernel_id=0)
        poisoned = patch.copy()
        poisoned[0, 0, 0] = np.nan
        bad = TrainPair(sharp=patch, blurry=poisoned, weight=0.5, kernel_id=0)

        def source():
            yield [good]
            yield [bad]

        path = tmp_path / "ck.nta"
        with pytest.raises(NumericError):
            fit(
                [patch],
                small_bank,
                FitConfig(iterations=2, checkpoint_every=1, seed=0),
                gen_cfg=TINY_GEN,
                extractor_cfg=SMALL_EXTRACTOR,
                batch_source=source(),
                checkpoint_path=path,
            )
        params, _ = load_checkpoint(path)
        assert params.step == 1

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"iterations": -1},
            {"lr_generator": 0.0},
            {"lr_discriminator": -1e-4},
            {"adversarial_weight": -1.0},
            {"lambda_gp": -1.0},
            {"checkpoint_every": -1},
        ],
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(ParameterError):
            FitConfig(**kwargs)


class TestFitLog:
    def test_smoothed_losses_match_bruteforce(self):
        rng = np.random.default_rng(0)
        losses = rng.uniform(0.1, 2.0, size=50)
        fitlog = FitLog(adversarial=False)
        for i, value in enumerate(losses, start=1):
            fitlog.rows.append((i, float(value), None, None, 0.0))
        window = 7
        smoothed = fitlog.smoothed_losses(window=window)
        for i in range(len(losses)):
            lo = max(0, i - window + 1)
            assert smoothed[i] == pytest.approx(np.mean(losses[lo : i + 1]), rel=1e-12)

    def test_smoothed_losses_empty(self):
        assert len(FitLog(adversarial=False).smoothed_losses()) == 0

    def test_csv_without_adversary(self, tmp_path):
        fitlog = FitLog(adversarial=False)
        fitlog.rows = [(1, 0.5, None, None, 0.01), (2, 0.25, None, None, 0.02)]
        path = tmp_path / "log.csv"
        write_fitlog(fitlog, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iter", "loss", "seconds"]
        assert rows[1][0] == "1"
        assert float(rows[1][1]) == 0.5
        assert len(rows) == 3

    def test_csv_with_adversary(self, tmp_path):
        fitlog = FitLog(adversarial=True)
        fitlog.rows = [(1, 0.5, 1.25, -0.75, 0.01)]
        path = tmp_path / "log.csv"
        write_fitlog(fitlog, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iter", "loss", "d_loss", "g_adv", "seconds"]
        assert float(rows[1][2]) == 1.25
        assert float(rows[1][3]) == -0.75


class TestCheckpoints:
    def test_roundtrip_bit_exact(self, small_bank, tmp_path):
        params, _ = small_fit(small_bank, iterations=2, seed=11)
        from deblurfit.nnet import init_optimizer

        state = init_optimizer(params)
        state.t = 2
        for t in state.m.values():
            t.add_(0.125)
        path = tmp_path / "ck.nta"
        save_checkpoint(params, state, path)
        loaded, loaded_state = load_checkpoint(path)
        assert loaded.arch == params.arch
        assert loaded.step == params.step
        for n in params.tensors:
            assert torch.equal(loaded.tensors[n], params.tensors[n].detach())
            assert loaded.tensors[n].requires_grad
        assert loaded_state.t == 2
        for n in state.m:
            assert torch.equal(loaded_state.m[n], state.m[n])
            assert torch.equal(loaded_state.v[n], state.v[n])

    def test_stateless_checkpoint(self, tmp_path):
        params = init_generator(TINY_GEN, seed=0)
        path = tmp_path / "meta.nta"
        save_checkpoint(params, None, path, meta_init=True)
        loaded, state = load_checkpoint(path)
        assert state is None
        assert checkpoint_is_meta(path)
        assert loaded.arch["kind"] == "generator"

    def test_plain_checkpoint_not_meta(self, tmp_path):
        params = init_generator(TINY_GEN, seed=0)
        path = tmp_path / "ck.nta"
        save_checkpoint(params, None, path)
        assert not checkpoint_is_meta(path)

    def test_truncated_file(self, tmp_path):
        params = init_generator(TINY_GEN, seed=0)
        path = tmp_path / "ck.nta"
        save_checkpoint(params, None, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_wrong_kind(self, tmp_path):
        path = tmp_path / "bank.nta"
        save_archive(path, {"x": np.zeros(3, dtype=np.float32)}, {"kind": "bank"})
        with pytest.raises(DataError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "ck.nta"
        save_archive(
            path,
            {"param.x": np.zeros(3, dtype=np.float32)},
            {
                "kind": "checkpoint",
                "checkpoint_version": 99,
                "arch": {"kind": "generator", "levels": 2, "base_channels": 4},
                "step": 0,
            },
        )
        with pytest.raises(DataError, match="version"):
            load_checkpoint(path)

    def test_missing_parameters(self, tmp_path):
        path = tmp_path / "ck.nta"
        save_archive(
            path,
            {"other.x": np.zeros(3, dtype=np.float32)},
            {
                "kind": "checkpoint",
                "checkpoint_version": 1,
                "arch": {"kind": "generator", "levels": 2, "base_channels": 4},
                "step": 0,
            },
        )
        with pytest.raises(DataError, match="no parameter tensors"):
            load_checkpoint(path)

    def test_inconsistent_moments(self, tmp_path):
        params = init_generator(TINY_GEN, seed=0)
        from deblurfit.nnet import init_optimizer

        path = tmp_path / "ck.nta"
        save_checkpoint(params, init_optimizer(params), path)
        tensors, meta = load_archive(path)
        removed = next(n for n in tensors if n.startswith("adam.m."))
        del tensors[removed]
        save_archive(path, tensors, meta)
        with pytest.raises(DataError, match="moments"):
            load_checkpoint(path)

    def test_resumed_run_continues_step_counter(self, small_bank, tmp_path):
        path = tmp_path / "ck.nta"
        frames = [texture(48, 48, seed=0)]
        pipe = PipelineConfig(patch_size=32, batch_size=1, seed=0)
        fit(
            frames,
            small_bank,
            FitConfig(iterations=3, seed=12),
            pipe_cfg=pipe,
            gen_cfg=TINY_GEN,
            extractor_cfg=SMALL_EXTRACTOR,
            checkpoint_path=path,
        )
        loaded, _ = load_checkpoint(path)
        assert loaded.step == 3
        params, fitlog = fit(
            frames,
            small_bank,
            FitConfig(iterations=2, seed=12),
            pipe_cfg=pipe,
            gen_cfg=TINY_GEN,
            extractor_cfg=SMALL_EXTRACTOR,
            init_params=loaded,
        )
        assert params.step == 5
        assert [row[0] for row in fitlog.rows] == [4, 5]
