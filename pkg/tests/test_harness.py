import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import linregress

from distnesterov.cli import EXIT_CONFIG, EXIT_OK, EXIT_VIOLATION, main
from distnesterov.graph import supergraph_from_edges
from distnesterov.harness import (
    RECORD_COLUMNS,
    SUMMARY_COLUMNS,
    ExperimentConfig,
    aggregate,
    emit_csv,
    emit_summary_csv,
    fit_slope,
    read_series,
    run_experiment,
    with_param,
)
from distnesterov.metrics import RunRecord, compute_metrics, count_transmissions
from distnesterov.objective import ObjectiveSet
from distnesterov.solvers import ConfigError

CONFIGS = Path(__file__).parent.parent / "configs"


def small_config(**over):
    data = json.loads((CONFIGS / "mdng_random.json").read_text())
    data.update(n_runs=3, n_iters=30, output_path=None)
    data["network"]["mu_samples"] = 2000
    for key, value in over.items():
        if key in ("network", "solver", "objective"):
            data[key].update(value)
        else:
            data[key] = value
    return ExperimentConfig.from_dict(data)


def record(run_id, k, err, z=0.0, gap=None):
    return RunRecord(run_id, k, k, 2 * k, err, z, z * z, None if gap is None else np.asarray(gap))


# -- counters and metrics ----------------------------------------------------


def test_count_transmissions_examples(experiment_graph):
    assert count_transmissions(experiment_graph, 2, 1) == 104
    assert count_transmissions(supergraph_from_edges(3, []), 2, 5) == 0
    assert count_transmissions(experiment_graph, 1, 1) == 52


def test_consensus_state_has_no_disagreement():
    objs = ObjectiveSet("huber", [1.0, 2.0, 3.0])
    x = np.full((3, 1), 1.5)
    assert compute_metrics(x, x, objs)["z_norm"] == 0.0


def test_optimal_state_has_zero_gap():
    objs = ObjectiveSet("huber", [1.0, 2.0, 3.0])
    x = np.tile(objs.x_star, (3, 1))
    assert compute_metrics(x, x, objs)["err_f"] == pytest.approx(0.0, abs=1e-12)


def test_two_node_disagreement_example():
    objs = ObjectiveSet("huber", [1.0, -1.0])
    m = compute_metrics(np.array([[1.0], [-1.0]]), np.zeros((2, 1)), objs)
    assert m["z_norm"] == pytest.approx(math.sqrt(2))
    assert m["z_norm_sq"] == pytest.approx(2.0)


def test_initial_point_has_unit_error(huber_objs):
    x = np.zeros((10, 1))
    assert compute_metrics(x, x, huber_objs)["err_f"] == pytest.approx(1.0)


def test_metrics_keep_batch_axes(huber_objs):
    m = compute_metrics(np.zeros((4, 10, 1)), np.zeros((4, 10, 1)), huber_objs)
    assert m["err_f"].shape == (4,) and m["per_node_gap"].shape == (4, 10)


# -- aggregation and slopes --------------------------------------------------


def test_aggregate_single_run():
    (row,) = aggregate([record(0, 3, 0.25, z=2.0)])
    assert row.mean_err == 0.25 and row.std_err == 0.0
    assert row.mean_z == 2.0 and row.mean_z_sq == 4.0
    assert math.isnan(row.second_moment_gap)


def test_aggregate_two_runs():
    (row,) = aggregate([record(0, 5, 0.2, gap=[0.1, 0.3]), record(1, 5, 0.4, gap=[0.0, 0.2])])
    assert row.mean_err == pytest.approx(0.3)
    assert row.std_err == pytest.approx(0.1)
    assert row.second_moment_gap == pytest.approx((0.01 + 0.09 + 0.0 + 0.04) / 4)


def test_aggregate_sorts_by_k():
    rows = aggregate([record(0, 9, 0.1), record(0, 1, 0.5), record(1, 1, 0.7)])
    assert [r.k for r in rows] == [1, 9]


def test_fit_slope_exact_power_laws():
    ks = range(10, 101)
    assert fit_slope([(k, 1 / k) for k in ks], 10, 100) == pytest.approx(-1.0, abs=1e-9)
    assert fit_slope([(k, 1 / k**2) for k in ks], 10, 100) == pytest.approx(-2.0, abs=1e-9)


def test_fit_slope_log_over_k():
    ks = np.arange(10, 1001)
    slope = fit_slope([(k, math.log(k) / k) for k in ks], 10, 1000)
    ref = linregress(np.log10(ks), np.log10(np.log(ks) / ks)).slope
    assert slope == pytest.approx(ref, abs=1e-12)
    # the local log-log slope is -1 + 1/ln k, so any window fit sits between its end values
    assert -1 + 1 / math.log(1000) < slope < -1 + 1 / math.log(10)


def test_fit_slope_ignores_nonpositive_and_window():
    series = [(k, 1 / k) for k in range(1, 200)] + [(50, 0.0), (60, -1.0), (70, math.inf)]
    assert fit_slope(series, 20, 100) == pytest.approx(-1.0, abs=1e-9)
    with pytest.raises(ValueError):
        fit_slope([(5, 1.0)], 1, 10)


# -- config ------------------------------------------------------------------


def test_config_rejects_bad_counts():
    with pytest.raises(ConfigError):
        small_config(n_runs=0)
    with pytest.raises(ConfigError):
        small_config(n_iters=0)


def test_config_requires_sections():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"network": {}, "solver": {}})


def test_disconnected_network_rejected_for_nesterov():
    cfg = small_config(network={"radius": 0.05})
    with pytest.raises(ConfigError):
        run_experiment(cfg)


def test_disconnected_network_allowed_for_subgradient():
    cfg = small_config(network={"radius": 0.05}, solver={"variant": "SUBGRAD"}, n_runs=1, n_iters=5)
    assert len(run_experiment(cfg)) == 6


def test_config_roundtrip():
    cfg = small_config()
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_with_param_targets_sections():
    cfg = small_config()
    assert with_param(cfg, "edge_online_prob", 0.5).network["edge_online_prob"] == 0.5
    assert with_param(cfg, "c", 0.25).solver["c"] == 0.25
    assert with_param(cfg, "n_runs", 7).n_runs == 7
    with pytest.raises(ConfigError):
        with_param(cfg, "nonsense", 1)


# -- running and output ------------------------------------------------------


def test_run_records_sorted_and_counted(experiment_graph):
    recs = run_experiment(small_config())
    assert [(r.run_id, r.k) for r in recs] == sorted((r.run_id, r.k) for r in recs)
    assert {r.run_id for r in recs} == {0, 1, 2}
    for r in recs:
        assert r.scalar_tx == r.k * 2 * experiment_graph.n_edges * 2
        assert r.scalar_tx >= r.comm_rounds
        assert r.err_f >= -1e-12
    assert all(r.err_f == pytest.approx(1.0) for r in recs if r.k == 0)


def test_record_every_thins_records():
    recs = run_experiment(small_config(record_every=7, n_runs=1))
    assert [r.k for r in recs] == [0, 7, 14, 21, 28, 30]


def test_csv_format(tmp_path):
    recs = run_experiment(small_config(n_runs=2, n_iters=5))
    path = tmp_path / "r.csv"
    emit_csv(recs, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(RECORD_COLUMNS)
    assert len(lines) == len(recs) + 1
    first = next(csv.DictReader(lines))
    assert first["run_id"] == "0" and first["k"] == "0" and first["err_f"] == "1"
    emit_summary_csv(aggregate(recs), tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == ",".join(SUMMARY_COLUMNS)


def test_csv_keeps_full_precision(tmp_path):
    emit_csv([record(0, 1, 1 / 3)], tmp_path / "r.csv")
    row = next(csv.DictReader((tmp_path / "r.csv").open()))
    assert float(row["err_f"]) == 1 / 3


def test_read_series_from_both_formats(tmp_path):
    recs = [record(0, 1, 0.2), record(1, 1, 0.4), record(0, 2, 0.1), record(1, 2, 0.1)]
    emit_csv(recs, tmp_path / "r.csv")
    emit_summary_csv(aggregate(recs), tmp_path / "s.csv")
    expected = [(1, pytest.approx(0.3)), (2, pytest.approx(0.1))]
    assert read_series(tmp_path / "r.csv") == expected
    assert read_series(tmp_path / "s.csv") == expected


def test_run_is_reproducible(tmp_path):
    emit_csv(run_experiment(small_config()), tmp_path / "a.csv")
    emit_csv(run_experiment(small_config()), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_runs_are_independent_of_batch_count():
    three = run_experiment(small_config(n_runs=3))
    one = run_experiment(small_config(n_runs=1))
    assert [r.err_f for r in three if r.run_id == 0] == [r.err_f for r in one]


# -- CLI ---------------------------------------------------------------------


def write_config(tmp_path, **over):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(small_config(**over).to_dict()))
    return path


def test_cli_run_writes_records_and_summary(tmp_path):
    out = tmp_path / "out" / "rec.csv"
    assert main(["run", "--config", str(write_config(tmp_path)), "--out", str(out)]) == EXIT_OK
    assert out.exists() and (tmp_path / "out" / "rec_summary.csv").exists()


def test_cli_config_errors(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    bad = write_config(tmp_path, network={"radius": 0.05})
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG


def test_cli_sweep_and_slope(tmp_path, capsys):
    cfg = write_config(tmp_path)
    base = tmp_path / "sw.csv"
    assert main(["sweep", "--config", str(cfg), "--param", "edge_online_prob", "--values", "0.5,0.9", "--out", str(base)]) == EXIT_OK
    made = tmp_path / "sw_edge_online_prob=0.5_summary.csv"
    assert made.exists() and (tmp_path / "sw_edge_online_prob=0.9.csv").exists()
    capsys.readouterr()
    assert main(["slope", "--csv", str(made), "--kmin", "5", "--kmax", "30"]) == EXIT_OK
    assert float(capsys.readouterr().out) < 0


def test_cli_verify_lemmas_ok(tmp_path):
    out = tmp_path / "report.json"
    assert main(["verify-lemmas", "--kmax", "20", "--samples", "1", "--out", str(out), "--compact"]) == EXIT_OK
    report = json.loads(out.read_text())
    assert report["verdict"] is True
    assert set(report["summary"]) == {"closed_form", "sigma_bounds", "b_norm", "scalar_sums"}


def test_cli_verify_lemmas_with_monte_carlo(tmp_path):
    out = tmp_path / "report.json"
    code = main(["verify-lemmas", "--kmax", "10", "--samples", "2000", "--mc-k", "5", "--psi-k", "2", "--out", str(out)])
    report = json.loads(out.read_text())
    assert {"phi_moments", "psi_moments"} <= set(report["summary"])
    assert code == (EXIT_OK if report["verdict"] else EXIT_VIOLATION)


def test_cli_verify_lemmas_reports_violation(tmp_path, monkeypatch):
    from distnesterov import theory

    monkeypatch.setattr(theory, "b_norm_rhs", lambda k, t: 0.0)
    assert main(["verify-lemmas", "--kmax", "5", "--samples", "1", "--out", str(tmp_path / "r.json")]) == EXIT_VIOLATION
