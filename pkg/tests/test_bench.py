"""Tests for the synthetic benchmark harness.

Correlation values are cross-checked against independent implementations
(numpy.corrcoef, scipy.stats) and hand arithmetic; Monte Carlo assertions
reuse seeds that were verified interactively before being frozen.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from farms.bench import (
    AlignmentPoint,
    GaussianSpec,
    ToyExperimentConfig,
    alignment_correlation,
    bias_sweep,
    gen_gaussian,
    hill_validation,
    mp_comparison_data,
    pearson_correlation,
    teacher_student_run,
    toy_sampler_config,
)
from farms.exceptions import TrainingDivergedError
from farms.sampler import SubsampleConfig


class TestGenGaussian:
    def test_same_spec_same_bits(self):
        spec = GaussianSpec(2, 2, "unit", 7)
        np.testing.assert_array_equal(gen_gaussian(spec), gen_gaussian(spec))

    def test_he_fan_in_variance(self):
        # law of large numbers: 50000 entries, target variance 2/50 = 0.04
        matrix = gen_gaussian(GaussianSpec(1000, 50, "he_fan_in", 7))
        assert abs(matrix.var() - 0.04) < 0.004

    def test_unit_variance(self):
        matrix = gen_gaussian(GaussianSpec(500, 200, "unit", 3))
        assert abs(matrix.var() - 1.0) < 0.05

    def test_single_scalar(self):
        assert gen_gaussian(GaussianSpec(1, 1, "unit", 0)).shape == (1, 1)

    def test_different_seeds_differ(self):
        a = gen_gaussian(GaussianSpec(4, 4, "unit", 1))
        b = gen_gaussian(GaussianSpec(4, 4, "unit", 2))
        assert not np.array_equal(a, b)

    @pytest.mark.parametrize("kwargs", [
        {"m": 0, "n": 1},
        {"m": 1, "n": -2},
        {"m": 1, "n": 1, "variance_mode": "xavier"},
        {"m": 1, "n": 1, "seed": -1},
    ])
    def test_invalid_specs(self, kwargs):
        with pytest.raises(ValueError):
            GaussianSpec(**kwargs)


class TestBiasSweep:
    def test_square_identity_plan_bit_exact(self):
        res = bias_sweep([(100, 100)], 1, SubsampleConfig(), seed=9)
        row = res.rows[0]
        assert row["baseline"]["mean"] == row["farms"]["mean"]

    def test_aspect_bias_separation(self):
        # mirror of the canonical sweep at reduced trial count
        res = bias_sweep([(100, 100), (512, 100), (1024, 100)], 8,
                         SubsampleConfig(), seed=3)
        means = [row["baseline"]["mean"] for row in res.rows]
        assert means[0] < means[1] < means[2]
        assert res.ranges["farms"] < 0.5 * res.ranges["baseline"]

    def test_threads_do_not_change_bits(self):
        args = ([(100, 100), (512, 100)], 4, SubsampleConfig())
        serial = bias_sweep(*args, seed=3)
        pooled = bias_sweep(*args, seed=3, threads=4)
        assert serial.to_dict() == pooled.to_dict()

    def test_failed_trials_recorded_and_skipped(self):
        # 1x1 matrices have no usable tail; every trial errors out
        res = bias_sweep([(1, 1)], 2, SubsampleConfig(), seed=0)
        assert res.rows[0]["completed"] == 0
        assert len(res.errors) == 2
        assert res.ranges == {"baseline": None, "farms": None}

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            bias_sweep([], 1, SubsampleConfig())
        with pytest.raises(ValueError):
            bias_sweep([(10, 10)], 0, SubsampleConfig())
        with pytest.raises(ValueError):
            bias_sweep([(10, 0)], 1, SubsampleConfig())


class TestHillValidation:
    @pytest.mark.parametrize("alpha", [1.5, 2.5, 4.0])
    def test_recovers_known_exponent(self, alpha):
        mean, std = hill_validation(alpha, 10000, 20, seed=11)
        assert abs(mean - alpha) < 0.1
        assert std >= 0.0

    def test_tiny_sample_reports_wide_std(self):
        mean, std = hill_validation(2.5, 10, 30, seed=4)
        assert math.isfinite(mean) and math.isfinite(std)
        assert std > 0.05

    def test_rejects_alpha_at_one(self):
        with pytest.raises(ValueError):
            hill_validation(1.0, 100, 1)


class TestMPComparison:
    def test_ks_decreases_with_size_at_fixed_aspect(self):
        small = mp_comparison_data(125, 500, 3, seed=5)
        large = mp_comparison_data(500, 2000, 3, seed=5)
        assert np.mean(large["ks"]) < np.mean(small["ks"])
        assert max(large["ks"]) < 0.03

    def test_square_bulk_edges(self):
        data = mp_comparison_data(4, 4, 1, seed=1)
        assert data["bulk_edges"] == [0.0, 4.0]

    def test_histogram_is_a_density(self):
        data = mp_comparison_data(125, 500, 3, seed=5)
        widths = np.diff(data["histogram"]["edges"])
        assert np.sum(np.asarray(data["histogram"]["density"]) * widths) == pytest.approx(1.0)

    def test_tall_matrix_reports_zero_mass(self):
        data = mp_comparison_data(40, 10, 2, seed=2)
        assert data["atom_mass"] == pytest.approx(0.75)
        assert data["empirical_zero_fraction"] == pytest.approx(0.75)

    def test_single_scalar_trial_degenerates_gracefully(self):
        data = mp_comparison_data(1, 1, 1, seed=1)
        assert 0.0 <= data["ks"][0] <= 1.0

    def test_deterministic(self):
        assert mp_comparison_data(30, 60, 2, seed=8) == mp_comparison_data(30, 60, 2, seed=8)


class TestToyExperiment:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            ToyExperimentConfig(input_dim=1)
        with pytest.raises(ValueError):
            ToyExperimentConfig(widths=())
        with pytest.raises(ValueError):
            ToyExperimentConfig(widths=(1, 8))
        with pytest.raises(ValueError):
            ToyExperimentConfig(activation="gelu")
        with pytest.raises(ValueError):
            ToyExperimentConfig(learning_rate=0.0)

    def test_spike_definition_of_alignment(self):
        # a rank-one matrix u w*^T has w* as its only right-singular direction
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(1)))
        w_star = rng.standard_normal(50)
        w_star /= np.linalg.norm(w_star)
        W = np.outer(rng.standard_normal(30), w_star)
        v1 = np.linalg.svd(W, compute_uv=True)[2][0]
        assert abs(v1 @ w_star) == pytest.approx(1.0)

    def test_zero_steps_alignment_near_random_overlap(self):
        cfg = ToyExperimentConfig(input_dim=500, widths=(50,), steps=0)
        series = teacher_student_run(cfg)
        # random unit vectors in R^500 overlap at O(1/sqrt(500)) ~ 0.045
        assert series.best_by_width[0].alignment < 0.25

    def test_training_reaches_high_alignment(self):
        cfg = ToyExperimentConfig(input_dim=50, widths=(64,), steps=200,
                                  batch_size=64, learning_rate=0.25,
                                  eval_stride=20, sampler_window=32,
                                  hill_k_fraction=0.1)
        series = teacher_student_run(cfg)
        assert series.best_by_width[0].alignment > 0.9

    def test_checkpoint_schedule_and_ranges(self):
        cfg = ToyExperimentConfig(input_dim=16, widths=(8, 12), steps=20,
                                  batch_size=8, learning_rate=0.05,
                                  eval_stride=7, sampler_window=8,
                                  hill_k_fraction=0.25)
        series = teacher_student_run(cfg)
        for width in (8, 12):
            steps = [p.step for p in series.checkpoints if p.width == width]
            assert steps == [0, 7, 14, 20]
        assert all(0.0 <= p.alignment <= 1.0 for p in series.checkpoints)
        assert series.metadata["widths"] == [8, 12]
        # best rows really are the per-width argmax
        for best in series.best_by_width:
            peers = [p.alignment for p in series.checkpoints if p.width == best.width]
            assert best.alignment == max(peers)

    def test_deterministic(self):
        cfg = ToyExperimentConfig(input_dim=16, widths=(8,), steps=10,
                                  batch_size=8, learning_rate=0.05,
                                  eval_stride=5, sampler_window=8,
                                  hill_k_fraction=0.25)
        assert teacher_student_run(cfg).to_dict() == teacher_student_run(cfg).to_dict()

    def test_divergence_reports_step(self):
        cfg = ToyExperimentConfig(input_dim=16, widths=(8,), steps=50,
                                  batch_size=8, learning_rate=1e9,
                                  eval_stride=50, sampler_window=8,
                                  hill_k_fraction=0.25)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDivergedError, match="step"):
                teacher_student_run(cfg)

    def test_tanh_activation_runs(self):
        cfg = ToyExperimentConfig(input_dim=16, widths=(8,), steps=5,
                                  batch_size=8, learning_rate=0.05,
                                  eval_stride=5, sampler_window=8,
                                  hill_k_fraction=0.25, activation="tanh")
        series = teacher_student_run(cfg)
        assert len(series.best_by_width) == 1

    def test_sampler_config_covers_matrix(self):
        cfg = toy_sampler_config(2000, 500, window=250, k_fraction=0.04)
        assert cfg.window == (250, 250)
        assert cfg.steps == (8, 2)


class TestAlignmentCorrelation:
    def test_small_sweep_pools_all_points(self):
        cfg = ToyExperimentConfig(input_dim=32, widths=(16, 24), steps=10,
                                  batch_size=16, learning_rate=0.1,
                                  eval_stride=5, sampler_window=16,
                                  hill_k_fraction=0.2)
        summary = alignment_correlation(cfg, seeds=(0, 1))
        assert summary.n_points == 4
        assert summary.method == "pearson"
        assert -1.0 <= summary.r_farms <= 1.0
        assert -1.0 <= summary.r_baseline <= 1.0
        assert len(summary.series) == 2

    def test_spearman_flag(self):
        cfg = ToyExperimentConfig(input_dim=32, widths=(16, 24), steps=10,
                                  batch_size=16, learning_rate=0.1,
                                  eval_stride=5, sampler_window=16,
                                  hill_k_fraction=0.2)
        summary = alignment_correlation(cfg, seeds=(0, 1), spearman=True)
        assert summary.method == "spearman"


class TestPearsonCorrelation:
    def test_perfect_positive(self):
        assert pearson_correlation([1, 2, 3], [2, 4, 6]) == 1.0

    def test_perfect_negative(self):
        assert pearson_correlation([1, 2, 3], [3, 2, 1]) == -1.0

    def test_hand_example(self):
        # sum of centered products 5.5, variances 5.0 and 8.75:
        # r = 5.5 / sqrt(43.75), about 0.8 at one decimal
        r = pearson_correlation([1, 2, 3, 4], [1, 3, 2, 5])
        assert r == pytest.approx(5.5 / math.sqrt(43.75), abs=1e-15)
        assert r == pytest.approx(np.corrcoef([1, 2, 3, 4], [1, 3, 2, 5])[0, 1])
        assert round(r, 1) == 0.8

    def test_degenerate_variance(self):
        with pytest.raises(ValueError, match="degenerate"):
            pearson_correlation([1.0, 1.0, 1.0], [1, 2, 3])

    def test_rejects_short_or_mismatched(self):
        with pytest.raises(ValueError):
            pearson_correlation([1, 2], [3, 4])
        with pytest.raises(ValueError):
            pearson_correlation([1, 2, 3], [1, 2])
        with pytest.raises(ValueError):
            pearson_correlation([1, 2, np.nan], [1, 2, 3])

    def test_spearman_monotone_is_one(self):
        assert pearson_correlation([1, 2, 3, 4], [1, 8, 27, 256],
                                   spearman=True) == 1.0

    def test_spearman_matches_scipy_with_ties(self):
        x = [1.0, 1.0, 2.0, 5.0, 3.0, 3.0, 7.0]
        y = [2.0, 1.0, 4.0, 9.0, 6.0, 6.5, 11.0]
        ours = pearson_correlation(x, y, spearman=True)
        assert ours == pytest.approx(stats.spearmanr(x, y).statistic, abs=1e-12)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=40),
           st.data())
    @settings(max_examples=100, deadline=None)
    def test_matches_numpy_and_stays_bounded(self, xs, data):
        ys = data.draw(st.lists(st.floats(-1e6, 1e6),
                                min_size=len(xs), max_size=len(xs)))
        x = np.asarray(xs)
        y = np.asarray(ys)
        if np.allclose(x, x[0]) or np.allclose(y, y[0]):
            return
        r = pearson_correlation(x, y)
        assert -1.0 <= r <= 1.0
        assert r == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-9)

    @given(st.lists(st.floats(-100, 100), min_size=3, max_size=20, unique=True))
    @settings(max_examples=50, deadline=None)
    def test_self_correlation_is_one(self, xs):
        assert pearson_correlation(xs, xs) == pytest.approx(1.0)
