"""
Tests for experiment configuration, result storage, runners and acceptance checks
"""

import json
import math
import threading
import time

import numpy as np
import pytest

from causaltransfer.datagen import gen_heat
from causaltransfer.errors import AcceptanceError, ConfigError, DatasetError, StageError
from causaltransfer.pipeline import (
    COLUMNS,
    Experiment,
    ResultTable,
    Workspace,
    config_from_dict,
    efficiency_summary,
    evaluate,
    load_config,
    load_curves,
    load_table,
    run_bundling,
    run_correlation,
    run_efficiency,
    run_experiment,
    run_jobs,
    run_symmetry,
    run_transfer,
    run_verify_bounds,
    save_curves,
    save_table,
    stage,
)
from causaltransfer.tarnet import build_model


def tiny(experiment, **overrides):
    data = {
        "experiment": experiment,
        "family": "heat",
        "n": 40,
        "target": {"k": 1.0},
        "max_sources": 2,
        "seeds": [0],
        "train": {"epochs": 2, "batch_size": 16, "lr": 0.01, "phi_hidden": [4], "head_hidden": [2],
                  "ipm": {"eps": 0.1, "iters": 10}},
    }
    data.update(overrides)
    return config_from_dict(data)


def increment(x):
    return x + 1


# =============================================================================
# 1. CONFIGURATION
# =============================================================================

def test_minimal_config_defaults():
    config = config_from_dict({"experiment": "transfer", "family": "heat"})
    assert config.experiment is Experiment.TRANSFER
    assert config.train.epochs == 300
    assert config.fine_tune_epochs == 60
    assert config.alpha == 1.0


@pytest.mark.parametrize("data, where", [
    ({"experiment": "transfer"}, "<root>"),
    ({"experiment": "nope", "family": "heat"}, "experiment"),
    ({"experiment": "transfer", "family": "heat", "train": {"epochs": 0}}, "train/epochs"),
    ({"experiment": "transfer", "family": "heat", "surprise": 1}, "<root>"),
    ({"experiment": "transfer", "family": "heat", "p_grid": [1.5]}, "p_grid/0"),
])
def test_invalid_configs_name_the_field(data, where):
    with pytest.raises(ConfigError) as info:
        config_from_dict(data)
    assert where in str(info.value)


def test_unsorted_sizes_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"experiment": "efficiency", "family": "heat", "sizes": [40, 20]})


def test_config_roundtrip_and_digest(tmp_path):
    config = tiny("symmetry", p_grid=[0.0, 0.5, 1.0])
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config.to_dict()))
    back = load_config(path)
    assert back == config
    assert back.digest == config.digest


def test_unreadable_config(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


def test_overrides():
    config = tiny("transfer", seeds=[0, 1, 2]).with_overrides(seed=7, out="elsewhere", workers=3)
    assert config.seeds == (7,) and config.out == "elsewhere" and config.workers == 3


def test_task_grid_target_and_sources():
    config = tiny("transfer", sources=[{"k": 0.7}, {"k": 1.9}], max_sources=1)
    grid = config.task_grid(seed=4)
    assert [g.params["k"] for g in grid] == [1.0, 0.7]
    assert all(g.seed == 4 and g.n == 40 for g in grid)


# =============================================================================
# 2. RESULT TABLES AND WORKSPACE
# =============================================================================

def test_table_fills_missing_columns():
    table = ResultTable()
    table.add(experiment="transfer", seed=0, arm="scratch", pehe=0.5)
    row = table.rows[0]
    assert row["source_id"] == "" and row["n_train"] == -1 and math.isnan(row["d_sym"])
    with pytest.raises(DatasetError):
        table.add(bogus=1)


def test_table_csv_roundtrip_is_exact(tmp_path):
    table = ResultTable(metadata={"seed": 3})
    table.add(experiment="symmetry", seed=3, alpha=0.1, arm="symmetry", source_id="heat-a", target_id="heat-b",
              param=1 / 3, d_sym=0.1 + 0.2, d_identity=np.nextafter(0.5, 1.0), n_train=40)
    table.add(experiment="symmetry", seed=3, arm="symmetry", param=0.0)
    back = load_table(save_table(table, tmp_path / "t.csv"))
    assert back.metadata == {"seed": 3}
    for col in ("seed", "alpha", "arm", "source_id", "target_id", "param", "d_sym", "d_identity", "n_train"):
        assert back.rows[0][col] == table.rows[0][col]
    assert math.isnan(back.rows[0]["pehe"])
    assert math.isnan(back.rows[1]["pehe"]) and back.rows[1]["source_id"] == ""
    assert list(back.to_frame().columns) == list(COLUMNS)


def test_curves_roundtrip(tmp_path):
    curves = [{"curve": "d_sym", "seed": 0, "alpha": 1.0, "x": 0.1, "y": 1 / 7}]
    frame = load_curves(save_curves(curves, tmp_path / "c.csv"))
    assert frame["y"].iloc[0] == 1 / 7


def test_workspace_layout(tmp_path):
    ws = Workspace.create(tmp_path / "work")
    ds = gen_heat(1.0, n=10)
    path = ws.put_dataset(ds)
    assert path.parent.name == "datasets" and path.stem == ds.dataset_id
    assert ws.get_dataset(ds.dataset_id).equals(ds)
    model = build_model(1)
    before = ws.fingerprint([ws.put_model(model)])
    ws.put_model(model)
    assert ws.fingerprint([ws.model_path(model)]) == before
    assert ws.get_model(model.model_id).model_id == model.model_id


# =============================================================================
# 3. WORKERS AND STAGES
# =============================================================================

def test_run_jobs_inline_preserves_order():
    assert run_jobs(lambda x: x * x, [3, 1, 2]) == [9, 1, 4]


def test_run_jobs_parallel():
    pytest.importorskip("makeparallel")
    assert run_jobs(increment, list(range(6)), workers=3) == [1, 2, 3, 4, 5, 6]


class ActiveCounter:
    def __init__(self):
        self.lock = threading.Lock()
        self.active = 0
        self.peak = 0

    def __call__(self, x):
        with self.lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(0.05)
        with self.lock:
            self.active -= 1
        return x


def test_run_jobs_bound_set_per_call():
    pytest.importorskip("makeparallel")
    narrow, wide = ActiveCounter(), ActiveCounter()
    assert run_jobs(narrow, list(range(8)), workers=2) == list(range(8))
    assert run_jobs(wide, list(range(8)), workers=4) == list(range(8))
    assert narrow.peak <= 2
    assert wide.peak <= 4


def test_run_jobs_reraises_failure():
    def job(x):
        if x == 2:
            raise ValueError("boom")
        return x

    with pytest.raises(ValueError):
        run_jobs(job, [1, 2, 3])


def test_stage_wraps_failures():
    with pytest.raises(StageError) as info:
        with stage("fine-tune", "heat-k=1-s0"):
            raise ValueError("bad batch")
    assert info.value.stage == "fine-tune"
    assert "heat-k=1-s0" in str(info.value)
    assert isinstance(info.value.__cause__, ValueError)


def test_stage_keeps_inner_stage():
    with pytest.raises(StageError) as info:
        with stage("outer"):
            with stage("inner"):
                raise ValueError("x")
    assert info.value.stage == "inner"


# =============================================================================
# 4. RUNNERS
# =============================================================================

def test_transfer_runner(tmp_path):
    ws = Workspace.create(tmp_path / "work")
    table = run_transfer(tiny("transfer"), ws)
    arms = [r["arm"] for r in table.rows]
    assert arms.count("source") == 2 and arms.count("transfer") == 1 and arms.count("scratch") == 1
    transfer = table.where(arm="transfer")[0]
    assert transfer["d_sym"] >= 0 and transfer["pehe"] >= 0
    assert table.metadata["per_seed"][0]["selected"] in (0, 1)
    assert sorted(table.metadata["per_seed"][0]["selected_perm"]) == [0, 1]
    assert table.metadata["fine_tune_epochs"] == 1
    assert list(ws.dir("reports").glob("cita-*.json"))


def test_transfer_runner_is_deterministic():
    a = run_transfer(tiny("transfer"))
    b = run_transfer(tiny("transfer"))
    assert a.to_frame().equals(b.to_frame())


def test_transfer_runner_needs_sources():
    with pytest.raises(ConfigError):
        run_transfer(tiny("transfer", sources=[]))


def test_symmetry_runner():
    table = run_symmetry(tiny("symmetry", p_grid=[0.0, 0.5, 1.0]))
    rows = table.where(arm="symmetry")
    assert [r["param"] for r in rows] == [0.0, 0.5, 1.0]
    assert rows[0]["d_sym"] == 0.0
    assert {c["curve"] for c in table.curves} == {"d_sym", "d_identity"}


def test_correlation_runner():
    table = run_correlation(tiny("correlation", alpha_grid=[0.5, 1.0]))
    assert len(table.where(arm="correlation")) == 6
    assert len(table.where(arm="correlation-cf")) == 3
    meta = table.metadata["per_seed"][0]
    assert set(meta["spearman"]) == {"0.5", "1.0"}
    assert table.where(arm="correlation", param=0.0)[0]["d_sym"] == 0.0


def test_efficiency_runner():
    table = run_efficiency(tiny("efficiency", sizes=[16, 24, 40]))
    for arm in ("scratch-practice", "scratch-ideal", "transfer"):
        assert [r["n_train"] for r in table.where(arm=arm)] == [16, 24, 40]
    summary = table.metadata["summary"]
    assert summary["ori_size"] == 40.0
    assert 0.0 <= summary["data_gain"] < 1.0


def test_efficiency_runner_oversized():
    with pytest.raises(ConfigError):
        run_efficiency(tiny("efficiency", sizes=[16, 80]))


def test_bundling_runner():
    table = run_bundling(tiny("bundling"))
    bundles = table.where(arm="bundle")
    assert [r["param"] for r in bundles] == [0.0, 1.0, 2.0]
    assert [r["n_train"] for r in bundles] == [40, 80, 120]
    assert table.where(arm="scratch")[0]["pehe"] == bundles[0]["pehe"]


def test_verify_bounds_runner(tmp_path):
    ws = Workspace.create(tmp_path / "work")
    table = run_verify_bounds(tiny("verify-bounds", max_sources=1, bound_models=1), ws)
    bounds = table.metadata["per_seed"][0]["bounds"]
    names = {b["name"] for b in bounds}
    assert {"thm1_lower", "shalit_sandwich", "thm2_l1_heat", "thm3_ipm_cf", "lemma2_cf"} <= names
    assert all(b["holds"] for b in bounds if b["name"] in ("shalit_sandwich", "thm3_ipm_cf", "thm5_pehe"))
    assert (ws.dir("reports") / "bounds-heat-s0.json").exists()


def test_run_experiment_dispatch():
    table = run_experiment(tiny("symmetry", p_grid=[0.0, 1.0]))
    assert table.metadata["experiment"] == "symmetry"


def test_runner_failure_names_stage():
    config = tiny("transfer", sizes=[41])
    with pytest.raises(StageError) as info:
        run_transfer(config)
    assert info.value.stage == "generate"
    assert isinstance(info.value.__cause__, ConfigError)


# =============================================================================
# 5. ACCEPTANCE CHECKS
# =============================================================================

def symmetry_table(d_sym, d_identity):
    table = ResultTable()
    for p, d, di in zip((0.0, 0.25, 0.5, 0.75, 1.0), d_sym, d_identity):
        table.add(experiment="symmetry", seed=0, arm="symmetry", param=p, d_sym=d, d_identity=di)
    return table


def test_symmetry_acceptance_passes():
    table = symmetry_table([0.0, 0.3, 0.5, 0.3, 0.0], [0.0, 0.2, 0.4, 0.6, 0.8])
    checks = evaluate(Experiment.SYMMETRY, table)
    assert all(c.passed for c in checks)
    assert {c.name for c in checks} == {"endpoints-smallest", "peak-at-half", "mirror", "identity-rank"}


def test_symmetry_acceptance_fails_off_center_peak():
    table = symmetry_table([0.0, 0.6, 0.5, 0.3, 0.0], [0.0, 0.2, 0.4, 0.6, 0.8])
    with pytest.raises(AcceptanceError) as info:
        evaluate(Experiment.SYMMETRY, table)
    assert "peak-at-half" in {c.name for c in info.value.failed}
    checks = evaluate(Experiment.SYMMETRY, table, strict=False)
    assert not all(c.passed for c in checks)


def test_symmetry_acceptance_fails_identity_distance_that_turns_back():
    table = symmetry_table([0.0, 0.3, 0.5, 0.3, 0.0], [0.0, 0.25, 0.5, 0.25, 0.0])
    checks = evaluate(Experiment.SYMMETRY, table, strict=False)
    failed = {c.name for c in checks if not c.passed}
    assert failed == {"identity-rank"}


def test_transfer_acceptance():
    table = ResultTable()
    table.add(experiment="transfer", seed=0, arm="transfer", pehe=0.1)
    table.add(experiment="transfer", seed=0, arm="scratch", pehe=0.2)
    assert evaluate("transfer", table)[0].passed


def efficiency_table():
    table = ResultTable()
    for n, practice, transfer in ((10, 0.5, 0.1), (40, 0.2, 0.05)):
        table.add(experiment="efficiency", seed=0, arm="scratch-practice", n_train=n, pehe=practice)
        table.add(experiment="efficiency", seed=0, arm="transfer", n_train=n, pehe=transfer)
    return table


def test_efficiency_summary():
    summary = efficiency_summary(efficiency_table())
    assert summary["ori_size"] == 40.0 and summary["tl_size"] == 10.0
    assert summary["data_gain"] == pytest.approx(0.75)
    assert summary["perf_gain"] == pytest.approx(0.5)
    assert math.isnan(summary["wo_tl_ideal"])


def test_efficiency_acceptance():
    table = efficiency_table()
    table.metadata["summary"] = efficiency_summary(table)
    assert all(c.passed for c in evaluate("efficiency", table))


def test_bound_acceptance_counts_violations():
    table = ResultTable(metadata={"per_seed": [{"seed": 0, "bounds": [
        {"name": "thm1_lower", "holds": True}, {"name": "thm1_lower", "holds": False},
        {"name": "shalit_sandwich", "holds": True},
    ]}]})
    checks = evaluate("verify-bounds", table, strict=False)
    by_name = {c.name: c for c in checks}
    assert by_name["thm1_lower[seed=0]"].value == 1.0 and not by_name["thm1_lower[seed=0]"].passed
    assert by_name["shalit_sandwich[seed=0]"].passed


# =============================================================================
# 6. DESK-SCALE ACCEPTANCE
# =============================================================================

@pytest.mark.slow
def test_heat_symmetry_acceptance():
    config = config_from_dict({"experiment": "symmetry", "family": "heat", "n": 1000, "target": {"k": 1.0},
                               "seeds": [0, 1, 2], "train": {"epochs": 100}})
    evaluate(Experiment.SYMMETRY, run_symmetry(config))


@pytest.mark.slow
def test_heat_efficiency_acceptance():
    config = config_from_dict({"experiment": "efficiency", "family": "heat", "target": {"k": 1.0},
                               "max_sources": 5, "seeds": [0, 1, 2, 3, 4], "sizes": [500, 1000, 2000, 4000],
                               "alpha_grid": [0.0, 1.0], "train": {"epochs": 100}})
    evaluate(Experiment.EFFICIENCY, run_efficiency(config))


@pytest.mark.slow
def test_heat_bounds_hold():
    config = config_from_dict({"experiment": "verify-bounds", "family": "heat", "n": 400, "max_sources": 4,
                               "train": {"epochs": 50}})
    table = run_verify_bounds(config)
    bounds = table.metadata["per_seed"][0]["bounds"]
    assert all(b["holds"] for b in bounds if b["name"] != "thm1_lower")
