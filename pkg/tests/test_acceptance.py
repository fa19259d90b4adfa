"""Acceptance gate: one test per shipping criterion.

Run with ``pytest tests/test_acceptance.py -v`` to get one pass/fail line
per criterion.  Each test also prints a ``criterion NN ... PASS`` line
(visible with ``-s``) carrying the measured numbers.
"""

import json
import math
import time

import numpy as np
import pytest

from farms.allocators import (
    LRScheduleConfig,
    SparsityConfig,
    assign_learning_rates,
    assign_sparsities,
)
from farms.bench import (
    GaussianSpec,
    alignment_correlation,
    bias_sweep,
    gen_gaussian,
    hill_validation,
    mp_comparison_data,
)
from farms.cli import main
from farms.sampler import (
    LayerReport,
    SubsampleConfig,
    farms_alpha_conv,
    farms_alpha_linear,
    plan_subsamples,
)
from farms.spectral import (
    HillConfig,
    esd_of_matrix,
    hill_alpha,
    mp_bulk_edges,
)
from farms.tensorio import write_checkpoint


def _rng(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _pass(num, label, detail=""):
    print(f"criterion {num:02d} [{label}]: PASS {detail}".rstrip())


def test_c01_hill_estimator_oracle():
    start = time.perf_counter()
    errors = {}
    for alpha in (1.5, 2.5, 4.0):
        mean, _ = hill_validation(alpha, 10000, 20, seed=11)
        errors[alpha] = abs(mean - alpha)
        assert errors[alpha] <= 0.1, f"alpha={alpha}: mean {mean} off by {errors[alpha]}"
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"oracle took {elapsed:.2f}s"
    _pass(1, "hill oracle",
          f"max error {max(errors.values()):.4f}, {elapsed:.2f}s")


def test_c02_mp_convergence_and_edges():
    start = time.perf_counter()
    data = mp_comparison_data(1000, 4000, 5, seed=5)
    assert all(ks < 0.03 for ks in data["ks"]), data["ks"]
    for y, expected in ((0.25, (0.25, 2.25)), (1.0, (0.0, 4.0)),
                        (4.0, (1.0, 9.0))):
        lo, hi = mp_bulk_edges(y)
        assert abs(lo - expected[0]) <= 1e-12
        assert abs(hi - expected[1]) <= 1e-12
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"took {elapsed:.2f}s"
    _pass(2, "MP convergence",
          f"max ks {max(data['ks']):.4f}, edges exact, {elapsed:.1f}s")


def test_c03_aspect_ratio_bias_removal():
    start = time.perf_counter()
    result = bias_sweep([(100, 100), (200, 100), (512, 100), (1024, 100)],
                        20, SubsampleConfig(), seed=101)
    means = [row["baseline"]["mean"] for row in result.rows]
    assert all(a < b for a, b in zip(means, means[1:])), means
    ratio = result.ranges["farms"] / result.ranges["baseline"]
    assert ratio < 0.5, f"farms/baseline range ratio {ratio}"
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0, f"took {elapsed:.2f}s"
    _pass(3, "aspect bias",
          f"baseline means {[round(v, 3) for v in means]}, "
          f"range ratio {ratio:.4f}, {elapsed:.1f}s")


def test_c04_identity_reduction_bit_for_bit():
    rng = _rng(2024)
    for _ in range(100):
        m = int(rng.integers(2, 200))
        n = int(rng.integers(2, 200))
        w = rng.standard_normal((m, n))
        hi, lo = max(m, n), min(m, n)
        cfg = SubsampleConfig(q_ratio=hi / lo, window=(hi, lo), steps=(1, 1))
        plan = plan_subsamples((m, n), cfg)
        assert plan.offsets == ((0, 0),)
        assert farms_alpha_linear(w, cfg) == hill_alpha(esd_of_matrix(w),
                                                        cfg.hill)
    _pass(4, "identity reduction", "100 shapes bit-for-bit")


def test_c05_concatenation_averaging_duality():
    from farms.sampler import farms_esd_linear

    rng = _rng(77)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(8, 64))
        m = n * int(rng.integers(2, 6))
        w = rng.standard_normal((m, n))
        cfg = SubsampleConfig()
        plan = plan_subsamples((m, n), cfg)
        wr, wc = plan.window
        window_esds = [esd_of_matrix(w[r:r + wr, c:c + wc])
                       for r, c in plan.offsets]
        pooled = farms_esd_linear(w, cfg)
        top = pooled.max_eigenvalue
        for bins in (8, 32, 128):
            pooled_hist = np.histogram(pooled.eigenvalues, bins=bins,
                                       range=(0.0, top))[0] / len(pooled)
            per_window = [
                np.histogram(e.eigenvalues, bins=bins, range=(0.0, top))[0]
                / len(e) for e in window_esds]
            diff = float(np.max(np.abs(pooled_hist - np.mean(per_window,
                                                             axis=0))))
            worst = max(worst, diff)
            assert diff <= 1e-12, diff
    _pass(5, "pooling duality", f"50 layers x 3 binnings, worst {worst:.2e}")


def _report(name, alpha, shape):
    return LayerReport(name=name, kind="linear", shape=shape,
                       baseline_alpha=alpha, farms_alpha=alpha,
                       esd_size_baseline=min(shape), esd_size_farms=min(shape),
                       submatrix_count=1)


def test_c06_allocator_contracts():
    rng = _rng(606)
    clamp_active = 0
    for instance in range(200):
        n_layers = int(rng.integers(2, 12))
        if instance % 10 == 0:
            alphas = [float(rng.uniform(1.2, 6.0))] * n_layers
        else:
            alphas = [float(a) for a in rng.uniform(1.05, 6.0, n_layers)]
        shapes = [(int(rng.integers(4, 64)), int(rng.integers(4, 64)))
                  for _ in range(n_layers)]
        reports = [_report(f"l{i}", alphas[i], shapes[i])
                   for i in range(n_layers)]

        eta = float(10.0 ** rng.uniform(-4, -1))
        s1 = float(rng.uniform(0.1, 0.9))
        s2 = float(rng.uniform(1.1, 2.0))
        lr = assign_learning_rates(
            reports, LRScheduleConfig(eta_t=eta, s1=s1, s2=s2,
                                      layer_selection=None))
        values = [e.value for e in lr.per_layer]
        if max(alphas) == min(alphas):
            midpoint = 0.5 * (s1 * eta + s2 * eta)
            assert all(v == midpoint for v in values)
        else:
            assert values[int(np.argmin(alphas))] == s1 * eta
            assert values[int(np.argmax(alphas))] == s2 * eta
        order = np.argsort(alphas, kind="stable")
        for a, b in zip(order, order[1:]):
            assert values[a] <= values[b] + 1e-12

        target = float(rng.uniform(0.05, 0.95))
        tau = float(rng.uniform(0.01, 0.5))
        weighted = bool(rng.integers(0, 2))
        sp = assign_sparsities(
            reports, SparsityConfig(target=target, tau=tau,
                                    weight_by_params=weighted))
        svals = [e.value for e in sp.per_layer]
        weights = [s[0] * s[1] if weighted else 1.0 for s in shapes]
        achieved = float(np.average(svals, weights=weights))
        assert abs(achieved - target) <= 1e-9, (instance, achieved, target)
        for a, b in zip(order, order[1:]):
            assert svals[a] <= svals[b] + 1e-12
        if any(v == 0.0 or v == 0.99 for v in svals):
            clamp_active += 1
    assert clamp_active >= 20, f"only {clamp_active} clamp-active instances"
    _pass(6, "allocator contracts",
          f"200 instances, {clamp_active} clamp-active")


def test_c07_conv_path_regression():
    rng = _rng(707)
    # reduction case: single block covering the whole channel slice
    for m, n in ((48, 48), (96, 48), (144, 48), (64, 32)):
        t = rng.standard_normal((m, n, 1, 1))
        hi, lo = max(m, n), min(m, n)
        cfg = SubsampleConfig() if m == n else SubsampleConfig(
            q_ratio=hi / lo, window=(hi, lo), steps=(1, 1))
        assert farms_alpha_conv(t, cfg) == \
            farms_alpha_linear(t[:, :, 0, 0], cfg)
    s = rng.standard_normal((64, 64))
    t = np.repeat(s[:, :, None, None], 2, axis=2).repeat(2, axis=3)
    cfg = SubsampleConfig()  # fraction-mode tail cut
    single = hill_alpha(esd_of_matrix(s), cfg.hill)
    replicated = farms_alpha_conv(t, cfg)
    assert replicated == pytest.approx(single, abs=1e-9)
    _pass(7, "conv path",
          f"1x1 exact on 4 shapes, replication diff "
          f"{abs(replicated - single):.2e}")


def test_c08_toy_training_quality_correlation():
    start = time.perf_counter()
    summary = alignment_correlation()  # widths (250,500,1000,2000), d=500, 3 seeds
    elapsed = time.perf_counter() - start
    assert summary.r_farms <= -0.6, summary.r_farms
    assert abs(summary.r_farms) > abs(summary.r_baseline), \
        (summary.r_farms, summary.r_baseline)
    assert elapsed < 600.0, f"took {elapsed:.1f}s"
    _pass(8, "toy correlation",
          f"r_farms {summary.r_farms:.3f} vs r_baseline "
          f"{summary.r_baseline:.3f}, {elapsed:.0f}s")


def test_c09_cli_determinism_across_threads(tmp_path):
    rng = _rng(909)
    write_checkpoint(tmp_path / "ckpt", "detmodel", [
        ("embed", rng.standard_normal((96, 48))),
        ("block.fc1", rng.standard_normal((192, 48))),
        ("block.conv", rng.standard_normal((16, 12, 3, 3))),
        ("head", rng.standard_normal((48, 96))),
    ])
    manifest = str(tmp_path / "ckpt" / "manifest.json")
    toy_cfg = tmp_path / "toy.json"
    toy_cfg.write_text(json.dumps({"toy": {
        "input_dim": 32, "widths": [16, 24], "steps": 10, "batch_size": 16,
        "learning_rate": 0.1, "eval_stride": 5, "sampler_window": 16,
        "hill_k_fraction": 0.2}}))
    report = str(tmp_path / "rep" / "report.json")
    assert main(["analyze", "--manifest", manifest,
                 "--out", str(tmp_path / "rep")]) == 0

    commands = {
        "analyze": ["analyze", "--manifest", manifest],
        "allocate-lr": ["allocate-lr", "--report", report, "--eta", "0.01",
                        "--no-ls"],
        "allocate-sparsity": ["allocate-sparsity", "--report", report,
                              "--target", "0.6"],
        "mp-check": ["mp-check", "--shape", "50", "200", "--trials", "2"],
        "bias-bench": ["bias-bench", "--shapes", "48x48,96x48",
                       "--trials", "2"],
        "toy-align": ["toy-align", "--config", str(toy_cfg),
                      "--seeds", "0,1"],
    }
    for name, argv in commands.items():
        contents = []
        for run, threads in enumerate(("1", "4")):
            out = tmp_path / f"{name}-{run}"
            rc = main([*argv, "--out", str(out), "--format", "both",
                       "--threads", threads])
            assert rc == 0, (name, rc)
            files = sorted(p.name for p in out.iterdir())
            assert files, name
            contents.append({p.name: p.read_bytes() for p in out.iterdir()})
        assert contents[0] == contents[1], f"{name} differs across threads"
    _pass(9, "CLI determinism", f"{len(commands)} commands x 2 thread counts")


def test_c10_plan_conformance():
    plan = plan_subsamples((512, 100), SubsampleConfig())
    assert len(plan.offsets) == 5, plan.offsets
    assert plan.offsets == ((0, 0), (103, 0), (206, 0), (309, 0), (412, 0))
    big = plan_subsamples((4096, 11008),
                          SubsampleConfig(window=(2000, 2000),
                                          steps=(10, 10)))
    assert len(set(big.offsets)) == 100
    assert (0, 0) in big.offsets
    assert (2096, 9008) in big.offsets
    _pass(10, "plan conformance", "5 offsets and 100 unique offsets match")
