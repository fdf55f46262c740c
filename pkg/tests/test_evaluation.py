"""Evaluation tests: displacement metrics against closed forms, analytic
baselines on kinematics they should nail exactly, fold aggregation, the
throughput benchmark, and the loss-mode ablation harness."""

import math

import numpy as np
import pytest

from boxcast.data import SynthSpec, slice_minitracks, synth_tracks
from boxcast.errors import ConfigError, DataError, ShapeError
from boxcast.evaluation import (
    BASELINE_KINDS,
    MetricReport,
    ablation_run,
    ade,
    baseline_predict,
    benchmark_tps,
    evaluate,
    evaluate_baseline,
    evaluate_predictions,
    evaluate_with,
    fde,
    fde_at,
    summarize_folds,
)
from boxcast.model import MODE_TRAJ, ModelDims, init_params
from boxcast.training import TrainConfig


def cv_minitracks(k, p, count=4, velocity=(2.0, 1.0), seed=0, **kw):
    spec = SynthSpec(kind="constant-velocity", length=k + p,
                     velocity=velocity, seed=seed, **kw)
    out = []
    for t in synth_tracks(spec, count):
        out.extend(slice_minitracks(t, window=k + p, stride=k + p))
    return out


class TestMetrics:
    def test_three_four_five_offset(self):
        gt = np.tile([10.0, 20.0, 5.0, 8.0], (6, 1))
        pred = gt + [3.0, 4.0, 0.0, 0.0]
        assert ade(pred, gt) == 5.0
        assert fde(pred, gt) == 5.0
        assert all(fde_at(pred, gt, t) == 5.0 for t in range(1, 7))

    def test_linearly_growing_displacement(self):
        p = 8
        t = np.arange(1.0, p + 1)
        gt = np.zeros((p, 4)) + [0.0, 0.0, 2.0, 2.0]
        pred = gt.copy()
        pred[:, 0] += t
        for step in range(1, p + 1):
            assert fde_at(pred, gt, step) == float(step)
        assert ade(pred, gt) == pytest.approx((p + 1) / 2.0)
        assert fde(pred, gt) == fde_at(pred, gt, p)

    def test_sizes_do_not_enter_the_metrics(self):
        gt = np.tile([10.0, 20.0, 5.0, 8.0], (4, 1))
        pred = gt.copy()
        pred[:, 2:] = 999.0
        assert ade(pred, gt) == 0.0

    def test_step_bounds(self):
        gt = np.tile([0.0, 0.0, 1.0, 1.0], (3, 1))
        with pytest.raises(IndexError):
            fde_at(gt, gt, 0)
        with pytest.raises(IndexError):
            fde_at(gt, gt, 4)

    def test_shape_mismatch(self):
        a = np.zeros((3, 4))
        with pytest.raises(ShapeError):
            ade(a, np.zeros((4, 4)))
        with pytest.raises(ShapeError):
            ade(np.zeros(4), np.zeros(4))


class TestEvaluatePredictions:
    def test_aggregation_matches_a_manual_average(self):
        rng = np.random.default_rng(0)
        pairs = []
        for _ in range(5):
            gt = rng.normal(100.0, 20.0, size=(7, 4))
            pred = gt + rng.normal(0.0, 3.0, size=(7, 4))
            pairs.append((pred, gt))
        report = evaluate_predictions(pairs, input_k=9)
        disp = np.stack([np.hypot(*(pr[:, :2] - gt[:, :2]).T)
                         for pr, gt in pairs])
        assert report.ade == pytest.approx(disp.mean(), rel=1e-15)
        assert report.fde == pytest.approx(disp[:, -1].mean(), rel=1e-15)
        for t in range(1, 8):
            assert report.fde_at[t] == pytest.approx(disp[:, t - 1].mean(),
                                                     rel=1e-15)
        assert report.n_samples == 5
        assert report.horizon_p == 7
        assert report.input_k == 9
        assert report.fde == report.fde_at[7]

    def test_nonpositive_predicted_sizes_are_counted_not_clamped(self):
        gt = np.tile([10.0, 20.0, 5.0, 8.0], (4, 1))
        pred = gt.copy()
        pred[0, 2] = 0.0
        pred[2, 3] = -1.0
        report = evaluate_predictions([(pred, gt)], input_k=2)
        assert report.nonpositive_size_count == 2
        assert report.ade == 0.0

    def test_empty_set_rejected(self):
        with pytest.raises(ConfigError, match="empty"):
            evaluate_predictions([], input_k=2)


class TestBaselines:
    def test_constant_velocity_is_exact_on_its_own_kinematics(self):
        mts = cv_minitracks(k=5, p=6)
        report = evaluate_baseline("constant-velocity", mts, k=5, p=6)
        assert report.ade == 0.0
        assert report.fde == 0.0

    def test_constant_acceleration_is_exact_on_its_own_kinematics(self):
        spec = SynthSpec(kind="constant-acceleration", length=12,
                         velocity=(2.0, 1.0), accel=(0.5, 0.25), seed=1)
        mts = []
        for t in synth_tracks(spec, 3):
            mts.extend(slice_minitracks(t, window=12, stride=12))
        report = evaluate_baseline("constant-acceleration", mts, k=5, p=7)
        assert report.ade == 0.0
        assert report.fde == 0.0

    def test_stationary_error_grows_as_t_times_speed(self):
        p = 6
        mts = cv_minitracks(k=4, p=p, velocity=(1.0, 2.0))
        report = evaluate_baseline("stationary", mts, k=4, p=p)
        speed = math.sqrt(5.0)
        for t in range(1, p + 1):
            assert report.fde_at[t] == pytest.approx(t * speed, rel=1e-12)
        assert report.ade == pytest.approx(speed * (p + 1) / 2.0, rel=1e-12)

    def test_velocity_uses_only_the_last_step(self):
        boxes = np.array([[0.0, 0.0, 10.0, 20.0],
                          [50.0, 9.0, 10.0, 20.0],
                          [51.0, 10.0, 11.0, 21.0]])
        pred = baseline_predict("constant-velocity", boxes, steps=3)
        np.testing.assert_array_equal(pred, [[52.0, 11.0, 12.0, 22.0],
                                             [53.0, 12.0, 13.0, 23.0],
                                             [54.0, 13.0, 14.0, 24.0]])

    def test_acceleration_triangular_accumulation(self):
        # positions 0, 1, 4 give v2=3, a=2: next steps 9, 16, 25 (squares)
        boxes = np.array([[0.0, 0.0, 2.0, 2.0],
                          [1.0, 0.0, 2.0, 2.0],
                          [4.0, 0.0, 2.0, 2.0]])
        pred = baseline_predict("constant-acceleration", boxes, steps=3)
        np.testing.assert_array_equal(pred[:, 0], [9.0, 16.0, 25.0])

    def test_stationary_repeats_the_anchor(self):
        boxes = np.array([[3.0, 4.0, 5.0, 6.0]])
        pred = baseline_predict("stationary", boxes, steps=4)
        np.testing.assert_array_equal(pred, np.tile([3.0, 4.0, 5.0, 6.0],
                                                    (4, 1)))

    def test_validation(self):
        boxes = np.tile([0.0, 0.0, 2.0, 2.0], (3, 1))
        with pytest.raises(ConfigError, match="unknown baseline"):
            baseline_predict("psychic", boxes, steps=2)
        with pytest.raises(ConfigError):
            baseline_predict("stationary", boxes, steps=0)
        with pytest.raises(DataError):
            baseline_predict("constant-velocity", boxes[:1], steps=2)
        with pytest.raises(DataError):
            baseline_predict("constant-acceleration", boxes[:2], steps=2)
        assert set(BASELINE_KINDS) == {"constant-velocity",
                                       "constant-acceleration", "stationary"}


class TestEvaluateModel:
    def test_stub_delta_head_nails_matching_kinematics(self):
        dims = ModelDims(k=5, p=6, hidden=8, latent=4)
        params = init_params(dims, seed=2)
        for t in params.tensors().values():
            t[...] = 0.0
        params.fc_delta.b[...] = [2.0, 1.0, 0.0, 0.0]
        mts = cv_minitracks(k=5, p=6, velocity=(2.0, 1.0))
        report = evaluate(params, mts)
        assert report.ade == 0.0
        assert report.fde == 0.0
        assert report.nonpositive_size_count == 0
        assert report.horizon_p == 6
        assert report.input_k == 5

    def test_wrong_minitrack_length_rejected(self):
        params = init_params(ModelDims(k=5, p=6, hidden=8, latent=4), seed=3)
        mts = cv_minitracks(k=5, p=5)
        with pytest.raises(DataError, match="expected k\\+p"):
            evaluate(params, mts)

    def test_empty_set_rejected(self):
        params = init_params(ModelDims(k=5, p=6, hidden=8, latent=4), seed=4)
        with pytest.raises(ConfigError, match="empty"):
            evaluate_with(lambda b, pr: None, [], 5, 6)


class TestSummarizeFolds:
    def test_equal_weight_per_fold(self):
        def rep(ade_v, fde_v, n):
            return MetricReport(ade=ade_v, fde=fde_v,
                                fde_at={1: fde_v}, n_samples=n,
                                horizon_p=1, input_k=1)
        summary = summarize_folds([rep(1.0, 2.0, 10),
                                   rep(2.0, 4.0, 1),
                                   rep(6.0, 6.0, 1)])
        assert summary["ade"] == pytest.approx(3.0)
        assert summary["fde"] == pytest.approx(4.0)
        assert summary["n_folds"] == 3
        assert summary["n_samples"] == 12
        assert "equal weight" in summary["weighting"]

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            summarize_folds([])


class TestBenchmark:
    def test_single_thread_smoke(self):
        params = init_params(ModelDims(k=5, p=6, hidden=8, latent=4), seed=5)
        report = benchmark_tps(params, threads=1, duration=0.05, n_windows=4)
        assert report.n_predictions > 0
        assert report.per_thread == [report.n_predictions]
        assert report.trajectories_per_second == pytest.approx(
            report.n_predictions / report.elapsed_s)
        assert report.equivalent_fps == pytest.approx(
            report.trajectories_per_second * 6)
        assert report.threads == 1
        assert report.dtype == "float32"
        assert (report.k, report.p) == (5, 6)

    def test_two_threads_report_per_thread_counts(self):
        params = init_params(ModelDims(k=5, p=6, hidden=8, latent=4), seed=6)
        report = benchmark_tps(params, threads=2, duration=0.05, n_windows=4)
        assert len(report.per_thread) == 2
        assert sum(report.per_thread) == report.n_predictions
        assert all(c > 0 for c in report.per_thread)

    def test_validation(self):
        params = init_params(ModelDims(k=5, p=6, hidden=8, latent=4), seed=7)
        with pytest.raises(ConfigError):
            benchmark_tps(params, threads=0)
        with pytest.raises(ConfigError):
            benchmark_tps(params, duration=0.0)


class TestAblation:
    CFG = TrainConfig(k=5, p=4, hidden=8, latent=4, batch_size=4, epochs=2,
                      base_lr=0.003, halve_every=2, seed=0)

    def test_rows_cover_modes_by_horizon(self):
        mts = cv_minitracks(k=5, p=4, count=4, start_jitter=5.0, seed=8)
        rows = ablation_run(mts, self.CFG, horizons=(2, 4))
        assert [(r["mode"], r["horizon"]) for r in rows] == [
            ("traj-del", 2), ("traj-del", 4),
            ("traj", 2), ("traj", 4),
            ("traj+auto-enc", 2), ("traj+auto-enc", 4)]
        for r in rows:
            assert math.isfinite(r["ade"]) and r["ade"] >= 0.0
            assert math.isfinite(r["fde"]) and r["fde"] >= 0.0

    def test_truncated_scoring_is_prefix_consistent(self):
        # the ADE over a 1-step horizon equals that model's fde_at[1], so
        # truncation must reproduce the first-step column exactly
        mts = cv_minitracks(k=5, p=4, count=4, start_jitter=5.0, seed=9)
        rows = ablation_run(mts, self.CFG, modes=(MODE_TRAJ,),
                            horizons=(1, 4))
        assert rows[0]["ade"] == rows[0]["fde"]
        assert rows[0]["horizon"] == 1

    def test_horizon_beyond_model_requires_retraining(self):
        mts = cv_minitracks(k=5, p=4, count=4, seed=10)
        with pytest.raises(ConfigError, match="exceeds"):
            ablation_run(mts, self.CFG, modes=(MODE_TRAJ,), horizons=(8,))

    def test_retrain_per_horizon_fits_shorter_models(self):
        mts = cv_minitracks(k=5, p=4, count=4, start_jitter=5.0, seed=11)
        rows = ablation_run(mts, self.CFG, modes=(MODE_TRAJ,),
                            horizons=(2, 3), retrain_per_horizon=True)
        assert [(r["mode"], r["horizon"]) for r in rows] == [("traj", 2),
                                                             ("traj", 3)]
        for r in rows:
            assert math.isfinite(r["ade"])

    def test_runs_are_deterministic(self):
        mts = cv_minitracks(k=5, p=4, count=4, start_jitter=5.0, seed=12)
        a = ablation_run(mts, self.CFG, modes=(MODE_TRAJ,), horizons=(4,))
        b = ablation_run(mts, self.CFG, modes=(MODE_TRAJ,), horizons=(4,))
        assert a == b

    def test_bad_horizons_rejected(self):
        mts = cv_minitracks(k=5, p=4, count=4, seed=13)
        with pytest.raises(ConfigError):
            ablation_run(mts, self.CFG, horizons=())
        with pytest.raises(ConfigError):
            ablation_run(mts, self.CFG, horizons=(0, 2))
        with pytest.raises(ConfigError):
            ablation_run(mts, self.CFG, modes=("warp",), horizons=(2,))
