"""Tests for the experiment runner: config parsing, sweeps, summaries."""

import json

import numpy as np
import pytest

from fabg.executor import read_trace_csv
from fabg.experiment import (
    SUMMARY_COLUMNS,
    ComparisonReport,
    ConfigError,
    ExperimentConfig,
    StrategySpec,
    compare_strategies,
    dtw_means,
    dtw_means_from_summary,
    format_reduction_percent,
    load_config,
    parse_config,
    run_experiment,
)


def _raw_config(**overrides):
    raw = {
        "scenarios": [{"kind": "rapid_cycle", "duration_ticks": 40,
                       "amplitude": 0.8, "period_ticks": 10}],
        "latencies": [{"perception": 1, "inference": 1, "communication": 1}],
        "strategies": [{"kind": "NoTE", "k": 10},
                       {"kind": "TE", "k": 10, "m": 0.1},
                       {"kind": "PDLC", "k": 10, "n": 3}],
        "trials": 2,
        "global_seed": 7,
        "policy": {"type": "oracle", "noise_sigma": 0.05},
    }
    raw.update(overrides)
    return raw


# ----------------------------------------------------------------- parsing


def test_parse_minimal_config_defaults():
    raw = {"scenarios": [{"kind": "step", "duration_ticks": 20}],
           "latencies": [{}],
           "strategies": [{"kind": "PDLC", "k": 5}]}
    config = parse_config(raw)
    assert config.trials == 5
    assert config.global_seed == 0
    assert config.policy_type == "oracle"
    assert config.noise_sigma == 0.0
    assert config.threshold_fraction == 0.1
    assert config.lo_fraction == 0.1 and config.hi_fraction == 0.9
    assert config.scenarios[0][0] == "step"
    assert config.latencies[0][0] == "p0i0c0"
    assert config.strategies[0].label == "PDLC"
    assert config.cell_count() == 5


def test_parse_errors_name_json_paths():
    with pytest.raises(ConfigError, match="config.scenarios"):
        parse_config({"latencies": [{}], "strategies": [{"kind": "TE", "k": 5}]})
    with pytest.raises(ConfigError, match=r"scenarios\[0\].kind"):
        parse_config(_raw_config(scenarios=[{"duration_ticks": 10}]))
    with pytest.raises(ConfigError, match=r"scenarios\[0\]"):
        parse_config(_raw_config(scenarios=[{"kind": "wiggle", "duration_ticks": 10}]))
    with pytest.raises(ConfigError, match=r"scenarios\[0\].amplitud"):
        parse_config(_raw_config(
            scenarios=[{"kind": "step", "duration_ticks": 10, "amplitud": 0.5}]))
    with pytest.raises(ConfigError, match=r"latencies\[0\]"):
        parse_config(_raw_config(latencies=[{"perception": -1}]))
    with pytest.raises(ConfigError, match=r"strategies\[1\]"):
        parse_config(_raw_config(strategies=[{"kind": "NoTE", "k": 5},
                                             {"kind": "PDLC", "k": 5, "n": 5}]))
    with pytest.raises(ConfigError, match="config.trials"):
        parse_config(_raw_config(trials=0))
    with pytest.raises(ConfigError, match="trials"):
        parse_config(_raw_config(trials=2.5))
    with pytest.raises(ConfigError, match="policy.type"):
        parse_config(_raw_config(policy={"type": "magic"}))
    with pytest.raises(ConfigError, match="policy.path"):
        parse_config(_raw_config(policy={"type": "learned"}))
    with pytest.raises(ConfigError, match="metrics.lo_fraction"):
        parse_config(_raw_config(metrics={"lo_fraction": 0.9, "hi_fraction": 0.1}))
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(_raw_config(extra=1))
    with pytest.raises(ConfigError, match="top level"):
        parse_config([1, 2])


def test_parse_deduplicates_labels():
    raw = _raw_config(scenarios=[
        {"kind": "step", "duration_ticks": 20},
        {"kind": "step", "duration_ticks": 40},
        {"kind": "step", "duration_ticks": 60, "name": "long_step"}])
    config = parse_config(raw)
    assert [label for label, _ in config.scenarios] == ["step", "step_2", "long_step"]

    raw = _raw_config(strategies=[{"kind": "PDLC", "k": 5},
                                  {"kind": "PDLC", "k": 10}])
    config = parse_config(raw)
    assert [s.label for s in config.strategies] == ["PDLC", "PDLC_2"]


def test_strategy_spec_validation():
    with pytest.raises(ValueError):
        StrategySpec(kind="other", k=5)
    with pytest.raises(ValueError):
        StrategySpec(kind="TE", k=0)
    with pytest.raises(ValueError):
        StrategySpec(kind="TE", k=5, m=-1.0)
    with pytest.raises(ValueError):
        StrategySpec(kind="PDLC", k=5, n=5)
    assert StrategySpec(kind="PDLC", k=5, n=4).n == 4


def test_load_config_round_trip(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(_raw_config()))
    config = load_config(path)
    assert isinstance(config, ExperimentConfig)
    assert config.global_seed == 7
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("not json {")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(bad)


# ------------------------------------------------------------------- sweep


def test_run_experiment_outputs(tmp_path):
    config = parse_config(_raw_config())
    out = tmp_path / "out"
    result = run_experiment(config, out, render_figures=False)

    # 1 scenario x 1 latency x 3 strategies x 2 trials.
    assert len(result.rows) == 6
    assert result.failures == []
    assert [r["cell"] for r in result.rows] == list(range(6))
    assert [r["seed"] for r in result.rows] == [7 + i for i in range(6)]

    lines = result.summary_path.read_text().strip().split("\n")
    assert lines[0] == ",".join(SUMMARY_COLUMNS)
    assert len(lines) == 7

    # Traces exist, parse, and are referenced from the rows.
    assert len(result.trace_paths) == 6
    for row, path in zip(result.rows, result.trace_paths):
        assert (out / row["trace_file"]) == path
        commanded, _, _ = read_trace_csv(path)
        assert commanded.shape == (40, 61)

    # Curves: one file per scenario x latency, trial-0 traces by strategy.
    assert len(result.curve_paths) == 1
    curve = result.curve_paths[0]
    assert curve.name == "curves_rapid_cycle_p1i1c1_dim24.csv"
    curve_lines = curve.read_text().strip().split("\n")
    assert curve_lines[0] == "tick,demonstration,NoTE,TE,PDLC"
    assert len(curve_lines) == 41

    report = json.loads(result.report_path.read_text())
    assert report["global_seed"] == 7
    assert len(report["cells"]) == 6
    assert report["failures"] == []
    # rapid_cycle has no onset, so the nullable metrics are null.
    assert report["cells"][0]["response_latency_s"] is None
    assert report["cells"][0]["completion_time_s"] is None

    mean_lines = result.mean_path.read_text().strip().split("\n")
    assert mean_lines[0].startswith("scenario,strategy,latency,trials,dtw_mean")
    assert len(mean_lines) == 4  # one per strategy combination
    for line in mean_lines[1:]:
        assert line.split(",")[3] == "2"


def test_run_experiment_is_rerun_identical(tmp_path):
    config = parse_config(_raw_config())
    r1 = run_experiment(config, tmp_path / "a", render_figures=False)
    r2 = run_experiment(config, tmp_path / "b", render_figures=False)
    assert r1.summary_path.read_bytes() == r2.summary_path.read_bytes()
    assert r1.mean_path.read_bytes() == r2.mean_path.read_bytes()
    assert r1.report_path.read_bytes() == r2.report_path.read_bytes()
    for p1, p2 in zip(r1.trace_paths, r2.trace_paths):
        assert p1.read_bytes() == p2.read_bytes()
    for p1, p2 in zip(r1.curve_paths, r2.curve_paths):
        assert p1.read_bytes() == p2.read_bytes()


def test_run_experiment_jobs_do_not_change_outputs(tmp_path):
    config = parse_config(_raw_config(trials=1))
    serial = run_experiment(config, tmp_path / "serial", render_figures=False)
    parallel = run_experiment(config, tmp_path / "parallel", jobs=2,
                              render_figures=False)
    assert serial.summary_path.read_bytes() == parallel.summary_path.read_bytes()
    assert serial.report_path.read_bytes() == parallel.report_path.read_bytes()


def test_run_experiment_renders_figures(tmp_path):
    config = parse_config(_raw_config(trials=1))
    result = run_experiment(config, tmp_path / "fig", render_figures=True)
    names = sorted(p.name for p in result.figure_paths)
    assert names == ["dtw_means.png", "overlay_rapid_cycle_p1i1c1.png"]
    for path in result.figure_paths:
        assert path.exists()
        assert path.stat().st_size > 1000


def test_run_experiment_collects_cell_failures(tmp_path):
    config = parse_config(_raw_config(
        trials=1, policy={"type": "learned", "path": str(tmp_path / "missing.fabp")}))
    result = run_experiment(config, tmp_path / "out", render_figures=False)
    assert result.rows == []
    assert len(result.failures) == 3
    for failure in result.failures:
        assert "missing.fabp" in failure["error"] or "Error" in failure["error"]
    lines = result.summary_path.read_text().strip().split("\n")
    assert lines == [",".join(SUMMARY_COLUMNS)]
    report = json.loads(result.report_path.read_text())
    assert len(report["failures"]) == 3


def test_run_experiment_seed_changes_noise(tmp_path):
    base = parse_config(_raw_config(trials=1))
    shifted = parse_config(_raw_config(trials=1, global_seed=99))
    r1 = run_experiment(base, tmp_path / "a", render_figures=False)
    r2 = run_experiment(shifted, tmp_path / "b", render_figures=False)
    assert [r["dtw"] for r in r1.rows] != [r["dtw"] for r in r2.rows]


# ----------------------------------------------------------------- summary


def test_dtw_means_orders_by_first_appearance():
    rows = [{"strategy": "NoTE", "dtw": 2.0},
            {"strategy": "PDLC", "dtw": 1.0},
            {"strategy": "NoTE", "dtw": 4.0}]
    means = dtw_means(rows)
    assert list(means) == ["NoTE", "PDLC"]
    assert means["NoTE"] == 3.0
    assert means["PDLC"] == 1.0


def test_dtw_means_from_summary_file(tmp_path):
    config = parse_config(_raw_config())
    result = run_experiment(config, tmp_path / "out", render_figures=False)
    from_file = dtw_means_from_summary(result.summary_path)
    direct = dtw_means(result.rows)
    assert list(from_file) == list(direct)
    for label in direct:
        # %.9g formatting bounds the file round-trip error.
        assert from_file[label] == pytest.approx(direct[label], rel=1e-8)

    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="summary"):
        dtw_means_from_summary(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text(",".join(SUMMARY_COLUMNS) + "\n")
    with pytest.raises(ValueError, match="no data"):
        dtw_means_from_summary(empty)


def test_format_reduction_percent():
    assert format_reduction_percent(61.5686) == "61.6%"
    assert format_reduction_percent(79.9591) == "79.9%"
    assert format_reduction_percent(50.0) == "50.0%"
    assert format_reduction_percent(0.0) == "0.0%"
    # The hundredths digit rounds half down.
    assert format_reduction_percent(0.05) == "0.0%"
    assert format_reduction_percent(0.06) == "0.1%"
    assert format_reduction_percent(0.15) == "0.1%"
    assert format_reduction_percent(0.16) == "0.2%"
    assert format_reduction_percent(99.99) == "100.0%"
    assert format_reduction_percent(-5.04) == "-5.0%"


# ------------------------------------------------------------- comparisons


def test_compare_strategies_reference_means():
    report = compare_strategies({"PDLC": 8.82, "NoTE": 22.95, "TE": 44.01})
    assert [label for label, _ in report.dtw_ordering] == ["PDLC", "NoTE", "TE"]
    assert report.reductions == [("PDLC", "NoTE", "61.6%"), ("PDLC", "TE", "79.9%")]
    assert report.flags == []
    text = "\n".join(report.lines())
    assert "dtw ordering: PDLC < NoTE < TE" in text
    assert "PDLC reduces mean dtw vs NoTE by 61.6%" in text
    assert "PDLC reduces mean dtw vs TE by 79.9%" in text


def test_compare_strategies_flags_contradictions():
    report = compare_strategies({"PDLC": 5.0, "NoTE": 3.0})
    assert "PDLC is not the lowest-dtw strategy" in report.flags

    report = compare_strategies({"TE": 2.0, "NoTE": 3.0})
    assert any("TE mean dtw is below NoTE" in f for f in report.flags)

    report = compare_strategies({"A": 2.0, "B": 2.0})
    assert any(f.startswith("tie:") for f in report.flags)
    assert report.reductions[0][2] == "0.0%"


def test_compare_strategies_from_rows_with_response():
    rows = [
        {"strategy": "PDLC", "dtw": 1.0, "response_latency_s": 0.2},
        {"strategy": "NoTE", "dtw": 2.0, "response_latency_s": 0.1},
        {"strategy": "PDLC", "dtw": 1.2, "response_latency_s": 0.2},
        {"strategy": "NoTE", "dtw": 2.2, "response_latency_s": None},
    ]
    report = compare_strategies(rows)
    assert [label for label, _ in report.dtw_ordering] == ["PDLC", "NoTE"]
    # Response means skip nulls; NoTE responds faster here, so flag it.
    assert report.response_ordering[0] == ("NoTE", 0.1)
    assert "PDLC is not the fastest-responding strategy" in report.flags
    assert any("response latency ordering" in line for line in report.lines())


def test_compare_strategies_input_validation():
    with pytest.raises(ValueError):
        compare_strategies([])
    with pytest.raises(ValueError):
        compare_strategies({"PDLC": 1.0})
    assert isinstance(compare_strategies({"A": 1.0, "B": 2.0}), ComparisonReport)
