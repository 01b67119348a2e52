import hashlib
import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpinn_lab.errors import InvalidConfigError
from dpinn_lab.harness import cli, config as C, io, runner

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")

STEADY = {
    "problem": {"type": "steady", "eps": 0.3},
    "model": {"nbx": 2, "neurons": 3},
    "loss": {"nbx_pts": 6},
    "train": {"max_iters": 200, "log_stride": 20, "seed": 3},
}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


# ---------------------------------------------------------------------------
# config


def test_unknown_key_rejected_with_name(tmp_path, capsys):
    cfg = dict(STEADY, model={"nbx": 2, "neuronz": 3})
    assert run_cli("solve", "--config", write(tmp_path, cfg), "--out", tmp_path) == 1
    assert "neuronz" in capsys.readouterr().err


def test_problem_field_of_other_type_rejected():
    with pytest.raises(InvalidConfigError, match="speed"):
        C.resolve({"problem": {"type": "steady", "speed": 1.0}, "train": {}})


def test_malformed_json_reports_position(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"problem": {"type": "steady",}}')
    assert run_cli("solve", "--config", path) == 1
    assert "line 1 column" in capsys.readouterr().err


def test_train_and_elm_together_rejected():
    with pytest.raises(InvalidConfigError):
        C.resolve({"problem": {"type": "steady"}, "train": {}, "elm": {}})


def test_missing_config_file(tmp_path):
    assert run_cli("solve", "--config", tmp_path / "nope.json") == 1


def test_resolve_fills_defaults_and_hash_is_stable():
    r = C.resolve(STEADY)
    assert r["train"]["optimizer"] == "adam"
    assert r["loss"]["w_sdm"] == 0.0
    shuffled = json.loads(json.dumps(STEADY, sort_keys=True))
    assert C.config_hash(C.resolve(shuffled)) == C.config_hash(r)
    assert C.config_hash(r) == C.config_hash(json.loads(C.canonical_json(r)))
    assert len(C.config_hash(r)) == 64


def test_config_hash_is_sha256_of_canonical_text():
    expected = hashlib.sha256(b'{"a":1,"b":[1.5,"x"]}').hexdigest()
    assert C.config_hash({"b": [1.5, "x"], "a": 1}) == expected


def test_docs_schema_matches_package():
    for name in ("config_schema.json", "sweep_schema.json"):
        with open(os.path.join(ROOT, "docs", name)) as fh:
            docs = json.load(fh)
        pkg = C.CONFIG_SCHEMA if name.startswith("config") else C.SWEEP_SCHEMA
        assert docs == pkg


@pytest.mark.parametrize("name", sorted(os.listdir(CONFIGS)))
def test_shipped_configs_validate(name):
    cfg = C.load(os.path.join(CONFIGS, name))
    if "axes" in cfg:
        runner.expand_sweep(cfg)
    elif "baseline" in cfg:
        C.resolve(cfg, "baseline")
    elif "diagnose" in cfg:
        C.resolve(cfg, "diagnose")
    else:
        C.resolve(cfg, C.run_kind(cfg))


# ---------------------------------------------------------------------------
# CSV emission


def test_solution_csv_101_samples(tmp_path):
    x = np.linspace(0, 1, 101)
    u = np.sin(x)
    path = tmp_path / "s.csv"
    io.emit_solution_csv(path, x[::-1], u[::-1], np.cos(x)[::-1])
    rows = io.read_csv(path)
    assert len(rows) == 101
    xs = [float(r["x"]) for r in rows]
    assert xs == sorted(xs)
    for r in rows:
        assert abs(float(r["abs_err"]) - abs(float(r["u_pred"]) - float(r["u_exact"]))) <= 1e-12


def test_solution_csv_sorted_by_x_then_t(tmp_path):
    x = np.array([0.5, 0.0, 0.5, 0.0])
    t = np.array([1.0, 1.0, 0.0, 0.0])
    path = tmp_path / "s.csv"
    io.emit_solution_csv(path, x, np.arange(4.0), None, t)
    rows = io.read_csv(path)
    assert list(rows[0]) == ["x", "t", "u_pred", "u_exact", "abs_err"]
    assert [(r["x"], r["t"]) for r in rows] == [("0", "0"), ("0", "1"), ("0.5", "0"),
                                                 ("0.5", "1")]
    assert all(r["u_exact"] == "" and r["abs_err"] == "" for r in rows)


@settings(max_examples=100, deadline=None)
@given(values=st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1,
                       max_size=20))
def test_csv_round_trip_is_lossless(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "v.csv"
    io.write_csv(path, ["v"], [[v] for v in values])
    back = [float(r["v"]) for r in io.read_csv(path)]
    assert back == values


def test_trace_header_exact(tmp_path):
    path = tmp_path / "t.csv"
    row = {"iter": 0, "total": 1.0, "g_total": 0.5}
    row.update({f"l_{k}": 0.1 for k in ("f", "b", "i", "vm", "sm", "sdm", "fm", "reg")})
    row.update({f"g_{k}": 0.2 for k in ("f", "b", "i", "vm", "sm")})
    io.emit_trace_csv(path, [row])
    with open(path) as fh:
        assert fh.readline().strip() == ("iter,L_total,L_f,L_b,L_i,L_vm,L_sm,L_sdm,L_fm,L_reg,"
                                         "g_total,g_f,g_b,g_i,g_vm,g_sm")


# ---------------------------------------------------------------------------
# CLI runs


def test_solve_writes_three_artifacts(tmp_path):
    cfg = dict(STEADY, train={"max_iters": 1000, "log_stride": 100})
    assert run_cli("solve", "--config", write(tmp_path, cfg), "--out", tmp_path) == 0
    for name in ("solution.csv", "trace.csv", "report.json"):
        assert (tmp_path / name).exists()
    trace = io.read_csv(tmp_path / "trace.csv")
    assert len(trace) == 11
    for r in trace:
        assert all(float(r[k]) >= 0 for k in r if k.startswith("L_"))
    sol = io.read_csv(tmp_path / "solution.csv")
    assert len(sol) == runner.N_ERROR_X
    for r in sol:
        assert abs(float(r["abs_err"]) - abs(float(r["u_pred"]) - float(r["u_exact"]))) <= 1e-12
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["status"] == "ok" and rep["iterations"] == 1000
    assert rep["max_error"] == pytest.approx(max(float(r["abs_err"]) for r in sol), rel=1e-15)


def test_lagaris_config_via_cli(tmp_path):
    assert run_cli("solve", "--config", os.path.join(CONFIGS, "lagaris_eps0.7.json"),
                   "--out", tmp_path, "--log-stride", 5000) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["max_error"] < 1e-2
    assert len(io.read_csv(tmp_path / "trace.csv")) == 5


def test_resolve_reproduces_report(tmp_path):
    assert run_cli("solve", "--config", write(tmp_path, STEADY), "--out", tmp_path,
                   "--seed", 11) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["seed"] == 11
    again = runner.run_solve(json.loads(rep["config"]))
    assert again["L_total"] == rep["L_total"]
    assert again["config_hash"] == rep["config_hash"]


def test_burgers_has_empty_exact_column(tmp_path):
    cfg = {"problem": {"type": "burgers", "eps": 0.05}, "model": {"nbx": 2, "nbt": 1},
           "loss": {"nbx_pts": 4, "nbt_pts": 4}, "train": {"max_iters": 20, "log_stride": 10}}
    assert run_cli("solve", "--config", write(tmp_path, cfg), "--out", tmp_path) == 0
    rows = io.read_csv(tmp_path / "solution.csv")
    assert len(rows) == runner.N_ERROR_X * runner.N_ERROR_T
    assert all(r["u_exact"] == "" for r in rows)
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["max_error"] is None


def test_divergence_exit_two_with_report(tmp_path):
    cfg = dict(STEADY, train={"optimizer": "gd", "lr": 1e6, "max_iters": 200, "log_stride": 1})
    assert run_cli("solve", "--config", write(tmp_path, cfg), "--out", tmp_path) == 2
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["status"] == "diverged"
    assert (tmp_path / "trace.csv").exists()


def test_elm_baseline_diagnose(tmp_path):
    for sub, name in (("elm", "elm_dpinn_eps0.025.json"), ("baseline", "baseline_pe10.json"),
                      ("diagnose", "piecewise_flux.json"), ("diagnose", "expfit_eps0.5.json")):
        out = tmp_path / name
        assert run_cli(sub, "--config", os.path.join(CONFIGS, name), "--out", out) == 0
    assert (tmp_path / "elm_dpinn_eps0.025.json" / "solution.csv").exists()
    rows = io.read_csv(tmp_path / "baseline_pe10.json" / "baseline.csv")
    assert list(rows[0]) == ["x", "exact", "cds", "uds", "cds_artificial"]
    rep = json.loads((tmp_path / "expfit_eps0.5.json" / "report.json").read_text())
    assert rep["status"] == "converged" and rep["param_error"] < 1e-6


def test_elm_on_unsteady_is_validation_error(tmp_path):
    cfg = {"problem": {"type": "advection"}, "elm": {}}
    assert run_cli("elm", "--config", write(tmp_path, cfg), "--out", tmp_path) == 1


# ---------------------------------------------------------------------------
# sweeps


def small_sweep(axes, iters=30):
    base = json.loads(json.dumps(STEADY))
    base["train"] = {"max_iters": iters, "log_stride": 10, "seed": 5}
    return {"base": base, "axes": axes}


def test_one_cell_sweep_equals_solve(tmp_path):
    sweep = small_sweep({"model.neurons": [3]})
    header, rows = runner.run_sweep(sweep)
    row = rows[0]
    cfg = C.with_seed(sweep["base"], row["seed"])
    rep = runner.run_solve(C.resolve(cfg))
    for k in runner.LOSS_KEYS + ("max_error", "l2_error", "config_hash", "iterations"):
        assert row[k] == rep[k]


def test_sweep_bytes_identical(tmp_path):
    sweep = small_sweep({"model.nbx": [1, 2], "train.lr": [1e-3, 1e-2]})
    runner.run_sweep(sweep, tmp_path / "a")
    runner.run_sweep(sweep, tmp_path / "b", jobs=2)
    a = (tmp_path / "a" / "summary.csv").read_bytes()
    assert a == (tmp_path / "b" / "summary.csv").read_bytes()


def test_axis_order_changes_only_row_order():
    s1 = small_sweep({"model.nbx": [1, 2], "problem.eps": [0.2, 0.5]})
    s2 = small_sweep({"problem.eps": [0.2, 0.5], "model.nbx": [1, 2]})
    _, r1 = runner.run_sweep(s1)
    _, r2 = runner.run_sweep(s2)
    key = lambda r: (r["model.nbx"], r["problem.eps"])
    assert sorted(map(lambda r: sorted(r.items()), r1)) == \
        sorted(map(lambda r: sorted(r.items()), r2))
    assert [key(r) for r in r1] != [key(r) for r in r2]


def test_sweep_records_failures_and_continues():
    sweep = small_sweep({"train.lr": [1e-3, 1e6], "train.optimizer": ["gd"]}, iters=50)
    _, rows = runner.run_sweep(sweep)
    assert [r["status"] for r in rows] == ["ok", "diverged"]
    assert all(r["max_iters"] == 50 for r in rows)


def test_sweep_bad_axis_rejected(tmp_path):
    sweep = small_sweep({"model.width": [1]})
    assert run_cli("sweep", "--config", write(tmp_path, sweep), "--out", tmp_path) == 1


def test_sweep_twenty_rows_table_shape(tmp_path):
    with open(os.path.join(CONFIGS, "sweep_nbx_speed.json")) as fh:
        sweep = json.load(fh)
    sweep["base"]["train"]["max_iters"] = 20
    sweep["base"]["loss"].update(nbx_pts=4, nbt_pts=4)
    assert run_cli("sweep", "--config", write(tmp_path, sweep), "--out", tmp_path,
                   "--jobs", 2) == 0
    rows = io.read_csv(tmp_path / "summary.csv")
    assert len(rows) == 20
    assert list(rows[0])[:2] == ["model.nbx", "problem.speed"]
    assert {r["max_iters"] for r in rows} == {"20"}


def test_jobs_env_fallback(monkeypatch):
    monkeypatch.setenv("DPINN_LAB_JOBS", "3")
    assert runner.resolve_jobs() == 3
    assert runner.resolve_jobs(2) == 2
    monkeypatch.setenv("DPINN_LAB_JOBS", "x")
    with pytest.raises(InvalidConfigError):
        runner.resolve_jobs()


def test_cell_seed_independent_of_axis_order():
    assert runner.cell_seed(0, {"a": 1, "b": 2}) == runner.cell_seed(0, {"b": 2, "a": 1})
    assert runner.cell_seed(0, {"a": 1}) != runner.cell_seed(1, {"a": 1})
