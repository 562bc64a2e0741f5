import json

import numpy as np
import pandas as pd
import pytest

import src.analysis.bench as bench_module
from src.analysis.bench import (
    EDMD_RECOMPUTE,
    OPERATOR_EXTRACTION,
    RR_EDMD,
    BenchConfig,
    BenchReport,
    bench_scaling,
    bench_streaming_vs_batch,
    comparison_summary,
    fit_growth_exponent,
    scaling_summary,
    scaling_table,
    write_bench_csv,
    write_summary_json,
)
from src.model.edmd import accumulate_gram, relative_frobenius, solve_robust
from src.model.lifting import lift_batch
from src.simulation.dynamics import RingConfig, pairs_from_trajectory, simulate_linear
from src.utils.errors import ConfigurationError, InputError, NumericalCorruptionError


@pytest.fixture
def linear_pairs(random_stable_matrix):
    return pairs_from_trajectory(simulate_linear(random_stable_matrix, [1.0, -0.5, 0.2], 151, noise_sigma=0.1, seed=2))


def test_comparison_arms_agree(identity_dictionary, linear_pairs, tmp_path):
    d = identity_dictionary(3, constant=True)
    comparison = bench_streaming_vs_batch(linear_pairs, d, lam=0.1, M=120, cfg=BenchConfig(verify_every=40))
    assert comparison.max_discrepancy <= 1e-8
    rr, edmd = comparison
    assert (rr.method, edmd.method, comparison.extraction.method) == (RR_EDMD, EDMD_RECOMPUTE, OPERATOR_EXTRACTION)
    for report in (rr, edmd, comparison.extraction):
        assert report.M == 120 and report.K == 4
        assert len(report.step_nanos) == 120
        assert np.all(report.step_nanos >= 0)

    frame = pd.read_csv(write_bench_csv([rr, edmd], tmp_path / "bench.csv"))
    assert list(frame.columns) == ["step", "method", "K", "nanos"]
    assert len(frame) == 240
    assert frame["step"].iloc[0] == 1

    summary = comparison_summary(comparison)
    assert set(summary["methods"]) == {RR_EDMD, EDMD_RECOMPUTE, OPERATOR_EXTRACTION}
    assert summary["methods"][RR_EDMD]["fit_exponent"] is None  # M below the fit range
    assert summary["cumulative_ratio"] > 0
    written = json.loads(write_summary_json(summary, tmp_path / "summary.json").read_text(encoding="utf-8"))
    assert written["max_discrepancy"] == summary["max_discrepancy"]


def test_comparison_needs_enough_pairs(identity_dictionary, linear_pairs):
    d = identity_dictionary(3)
    with pytest.raises(ConfigurationError):
        bench_streaming_vs_batch(linear_pairs, d, lam=0.1, M=50)
    with pytest.raises(InputError):
        bench_streaming_vs_batch(linear_pairs, d, lam=0.1, M=200)


def test_disagreeing_arms_raise(identity_dictionary, linear_pairs, monkeypatch):
    def skewed(gp, lam):
        return solve_robust(gp, lam) * (1 + 1e-3)

    monkeypatch.setattr(bench_module, "solve_robust", skewed)
    with pytest.raises(NumericalCorruptionError):
        bench_streaming_vs_batch(linear_pairs, identity_dictionary(3), lam=0.1, M=100, cfg=BenchConfig(pin_threads=False))


def test_recompute_arm_matches_the_batch_oracle(identity_dictionary, linear_pairs):
    d = identity_dictionary(3, constant=True)
    psi_x = lift_batch(d, np.vstack([p.x for p in linear_pairs]))
    psi_y = lift_batch(d, np.vstack([p.y for p in linear_pairs]))
    oracle = solve_robust(accumulate_gram(d, linear_pairs[:80]), 0.1)
    assert relative_frobenius(bench_module._recompute_operator(psi_x, psi_y, 80, 0.1), oracle) <= 1e-10


def test_repetitions_take_the_median(identity_dictionary, linear_pairs):
    comparison = bench_streaming_vs_batch(
        linear_pairs, identity_dictionary(3), lam=0.1, M=100, cfg=BenchConfig(repetitions=3, pin_threads=False)
    )
    assert comparison.rr.repetitions == 3


def test_growth_exponent_of_synthetic_timings():
    flat = BenchReport(RR_EDMD, np.full(2000, 1000, dtype=np.int64), K=10, M=2000, repetitions=1)
    rising = BenchReport(EDMD_RECOMPUTE, np.arange(1, 2001, dtype=np.int64) * 100, K=10, M=2000, repetitions=1)
    assert fit_growth_exponent(flat) == pytest.approx(1.0, abs=0.05)
    assert fit_growth_exponent(rising) == pytest.approx(2.0, abs=0.05)
    with pytest.raises(InputError):
        fit_growth_exponent(BenchReport(RR_EDMD, np.ones(50), K=1, M=50, repetitions=1))


def test_report_validation():
    with pytest.raises(InputError):
        BenchReport(RR_EDMD, np.ones(3), K=1, M=4, repetitions=1)


@pytest.mark.parametrize(
    "kwargs",
    [{"repetitions": 0}, {"warmup_steps": -1}, {"fit_range": (10, 5)}, {"verify_every": -1}, {"agreement_tol": 0.0}, {"memory_cap_bytes": 0}],
)
def test_bench_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        BenchConfig(**kwargs)


def test_small_scaling_run():
    reports = bench_scaling([2, 3], rbf_per_osc=3, samples_per_size=60, base=RingConfig(n_osc=2))
    assert [r.K for r in reports] == [6, 9]
    assert all(r.M == 60 for r in reports)
    table = scaling_table(reports)
    assert list(table.columns) == ["K", "mean_step_nanos", "ratio"]
    assert np.isnan(table["ratio"].iloc[0])
    summary = scaling_summary(reports)
    assert summary["sizes"][0]["ratio"] is None
    json.dumps(summary)


def test_scaling_skips_sizes_over_the_memory_cap():
    with pytest.warns(RuntimeWarning):
        reports = bench_scaling([4], rbf_per_osc=3, samples_per_size=20, cfg=BenchConfig(memory_cap_bytes=1))
    assert reports == []
    assert scaling_summary(reports)["sizes"] == []


def test_scaling_sizes_must_ascend():
    with pytest.raises(ConfigurationError):
        bench_scaling([20, 10])


@pytest.mark.slow
def test_recursive_cost_grows_linearly_and_recompute_faster(vdp_dictionary, vdp_traj):
    pairs = pairs_from_trajectory(vdp_traj)
    comparison = bench_streaming_vs_batch(pairs, vdp_dictionary, lam=0.1, M=2000)
    rr = fit_growth_exponent(comparison.rr)
    edmd = fit_growth_exponent(comparison.edmd)
    assert rr <= 1.3
    assert edmd >= 1.7
    assert comparison.edmd.total_nanos / comparison.rr.total_nanos >= 5.0


@pytest.mark.slow
def test_per_step_cost_does_not_depend_on_m(vdp_dictionary, vdp_traj):
    rr = bench_streaming_vs_batch(pairs_from_trajectory(vdp_traj), vdp_dictionary, lam=0.1, M=2000).rr
    early = np.median(rr.step_nanos[100:500])
    late = np.median(rr.step_nanos[1500:1900])
    assert 0.5 <= late / early <= 2.0


@pytest.mark.slow
def test_update_cost_scales_quadratically_in_k():
    reports = bench_scaling([10, 20, 40], rbf_per_osc=15, samples_per_size=800)
    assert [r.K for r in reports] == [150, 300, 600]
    ratios = scaling_table(reports)["ratio"].iloc[1:]
    assert len(ratios) == 2
    assert ((ratios >= 2.5) & (ratios <= 6.0)).all(), list(ratios)
