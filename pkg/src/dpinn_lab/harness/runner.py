"""Run one experiment, a baseline, a diagnostic probe or a sweep, and write its artifacts."""
from __future__ import annotations

import hashlib
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .. import diagnostics, elm, problems
from ..dpinn.model import build_model, predict
from ..dpinn.train import recurrent_split_init, train
from ..errors import DivergedTrainingError, DpinnLabError, InvalidConfigError
from . import config as C
from . import io

N_ERROR_X = 1001
N_ERROR_T = 11
LOSS_KEYS = ("L_total", "L_f", "L_b", "L_i", "L_vm", "L_sm", "L_sdm", "L_fm", "L_reg")
_LOSS_SOURCE = {"L_total": "total", "L_reg": "l_reg"}


def error_grid(problem):
    """Fixed evaluation grid: 1001 x-points, times 11 t-levels for unsteady problems."""
    x = np.linspace(problem.x_left, problem.x_right, N_ERROR_X)
    if problem.dim == 1:
        return x, None
    t = np.linspace(problem.t_start, problem.t_end, N_ERROR_T)
    X, T = np.meshgrid(x, t, indexing="ij")
    return X.ravel(), T.ravel()


def error_metrics(u_pred, u_exact):
    if u_exact is None:
        return None, None
    e = np.abs(np.asarray(u_pred) - np.asarray(u_exact))
    return float(np.max(e)), float(np.sqrt(np.mean(e * e)))


def _losses_from_row(row):
    if row is None:
        return {k: None for k in LOSS_KEYS}
    return {k: float(row[_LOSS_SOURCE.get(k, "l_" + k[2:])]) for k in LOSS_KEYS}


def _base_report(cfg, kind):
    return {
        "kind": kind,
        "config": C.canonical_json(cfg),
        "config_hash": C.config_hash(cfg),
        "seed": C.seed_of(cfg),
    }


def run_solve(cfg: dict, out_dir=None) -> dict:
    """Train a block model from a resolved config; returns the flat report."""
    start = time.perf_counter()
    problem = C.build_problem(cfg["problem"])
    m, t = cfg["model"], cfg["train"]
    arch = C.architecture(problem, m)
    grid = C.build_grid(problem, m)
    weights = C.build_weights(cfg["loss"])
    tcfg = C.build_train_config(cfg)
    report = _base_report(cfg, "solve")
    report["max_iters"] = t["max_iters"]
    try:
        if t["recurrent_split"]:
            if m["collocation_target"] != "residual" or m["t_interfaces"]:
                raise InvalidConfigError(
                    "model: recurrent splitting uses the default residual target")
            model, stages = recurrent_split_init(
                problem, grid, arch, tcfg, m["trial"], weights, t["seed"], m["activation"],
                m["normalization"])
            trace, offset = [], 0
            for st in stages:
                for row in st.trace:
                    trace.append(dict(row, iter=row["iter"] + offset))
                offset += st.trace[-1]["iter"]
        else:
            model = build_model(problem, grid, arch, m["trial"], weights, t["seed"],
                                m["activation"], m["normalization"], m["collocation_target"],
                                m["t_interfaces"])
            model, trace = train(model, tcfg)
    except DivergedTrainingError as exc:
        report.update(status="diverged", message=str(exc),
                      iterations=exc.iteration if exc.iteration is not None else 0,
                      max_error=None, l2_error=None,
                      wall_time=time.perf_counter() - start)
        report.update(_losses_from_row(exc.trace[-1] if exc.trace else None))
        if out_dir is not None:
            io.ensure_dir(out_dir)
            io.emit_trace_csv(os.path.join(out_dir, "trace.csv"), exc.trace)
            io.write_json(os.path.join(out_dir, "report.json"), report)
        raise DivergedTrainingError(str(exc), trace=exc.trace, iteration=exc.iteration,
                                    term=exc.term) from exc
    x, tt = error_grid(problem)
    u_pred = predict(model, x, tt)
    u_exact = problems.exact(problem, x, tt)
    max_err, l2_err = error_metrics(u_pred, u_exact)
    report.update(status="ok", message="", iterations=int(trace[-1]["iter"]),
                  max_error=max_err, l2_error=l2_err)
    report.update(_losses_from_row(trace[-1]))
    report["wall_time"] = time.perf_counter() - start
    if out_dir is not None:
        io.ensure_dir(out_dir)
        io.emit_solution_csv(os.path.join(out_dir, "solution.csv"), x, u_pred, u_exact, tt)
        io.emit_trace_csv(os.path.join(out_dir, "trace.csv"), trace)
        io.write_json(os.path.join(out_dir, "report.json"), report)
    report["_model"] = model
    report["_trace"] = trace
    return report


def run_elm(cfg: dict, out_dir=None) -> dict:
    start = time.perf_counter()
    problem = C.build_problem(cfg["problem"])
    if not isinstance(problem, problems.SteadyAdvDiff):
        raise InvalidConfigError("problem.type: ELM runs need the steady problem")
    e = cfg["elm"]
    net, system = elm.assemble_elm_dpinn(
        problem, e["nb"], e["pts_per_block"], e["neurons"], e["seed"], e["gain"],
        e["include_edges"], e["normalized"])
    c = elm.solve(system, e["solver"], e["tau"])
    net = net.with_weights(c)
    x, _ = error_grid(problem)
    u_pred = elm.elm_predict(net, x)
    u_exact = problems.exact(problem, x)
    max_err, l2_err = error_metrics(u_pred, u_exact)
    report = _base_report(cfg, "elm")
    report.update(status="ok", message="", iterations=1, max_iters=1,
                  max_error=max_err, l2_error=l2_err,
                  system_rows=system.shape[0], system_cols=system.shape[1],
                  residual_norm=float(np.linalg.norm(system.matrix @ c - system.rhs)))
    report.update({k: None for k in LOSS_KEYS})
    report["wall_time"] = time.perf_counter() - start
    if out_dir is not None:
        io.ensure_dir(out_dir)
        io.emit_solution_csv(os.path.join(out_dir, "solution.csv"), x, u_pred, u_exact)
        io.write_json(os.path.join(out_dir, "report.json"), report)
    report["_net"] = net
    return report


def run_baseline(cfg: dict, out_dir=None) -> dict:
    """Exact solution, CDS, UDS and CDS with artificial diffusion on one grid."""
    problem = C.build_problem(cfg["problem"])
    if not isinstance(problem, problems.SteadyAdvDiff):
        raise InvalidConfigError("problem.type: baselines need the steady problem")
    n = cfg["baseline"]["n_cells"]
    cds = problems.cds_solve(problem, n)
    uds = problems.uds_solve(problem, n)
    art = problems.cds_artificial_solve(problem, n)
    x = cds.grid
    ex = problems.exact_steady(problem, x)
    if out_dir is not None:
        io.ensure_dir(out_dir)
        io.write_csv(os.path.join(out_dir, "baseline.csv"),
                     ("x", "exact", "cds", "uds", "cds_artificial"),
                     zip(x, ex, cds.values, uds.values, art.values))
    dx = (problem.x_right - problem.x_left) / n
    return {"kind": "baseline", "peclet": problems.peclet(problem.c, dx, problem.eps),
            "x": x, "exact": ex, "cds": cds.values, "uds": uds.values,
            "cds_artificial": art.values}


def run_diagnose(cfg: dict, out_dir=None) -> dict:
    problem = C.build_problem(cfg["problem"])
    if not isinstance(problem, problems.SteadyAdvDiff):
        raise InvalidConfigError("problem.type: diagnostics need the steady problem")
    d = cfg["diagnose"]
    report = _base_report(cfg, "diagnose")
    if d["kind"] == "piecewise":
        col = d["collocation"]
        if col == "square":
            col = diagnostics.square_collocation_counts(d["panels"], d["degree"])
        system = diagnostics.piecewise_system(problem, d["panels"], d["degree"], col,
                                              d["governing"])
        fit = diagnostics.piecewise_solve(system, d["solver"])
        x, _ = error_grid(problem)
        u_pred = diagnostics.piecewise_eval(fit, x)
        u_exact = problems.exact_steady(problem, x)
        max_err, l2_err = error_metrics(u_pred, u_exact)
        report.update(status="ok", max_error=max_err, l2_error=l2_err,
                      system_rows=system.matrix.shape[0], system_cols=system.matrix.shape[1])
        if out_dir is not None:
            io.ensure_dir(out_dir)
            io.emit_solution_csv(os.path.join(out_dir, "solution.csv"), x, u_pred, u_exact)
    else:
        truth = np.array(diagnostics.exact_exp_params(problem))
        if not np.all(np.isfinite(truth)):
            raise InvalidConfigError("problem: exponential form is not representable")
        x = np.linspace(problem.x_left, problem.x_right, d["n_points"])
        y = problems.exact_steady(problem, x)
        init = d.get("init")
        if init is None:
            init = (1.1 * truth[0], 0.95 * truth[1], truth[2] + 0.05)
        res = diagnostics.exp_fit(x, y, d["method"], init, d["lam"], d["max_iters"], d["tol"])
        report.update(status=res.status, iterations=res.iterations, a=res.a, b=res.b, c=res.c,
                      a_exact=float(truth[0]), b_exact=float(truth[1]),
                      c_exact=float(truth[2]),
                      param_error=float(np.max(np.abs(res.params - truth))))
    if out_dir is not None:
        io.ensure_dir(out_dir)
        io.write_json(os.path.join(out_dir, "report.json"), report)
    return report


def public(report: dict) -> dict:
    return {k: v for k, v in report.items() if not k.startswith("_")}


# ---------------------------------------------------------------------------
# sweeps


def cell_key(cell: dict) -> str:
    return json.dumps(cell, sort_keys=True, separators=(",", ":"))


def cell_seed(base_seed: int, cell: dict) -> int:
    """Seed from the base seed and the cell's axis values; independent of axis order."""
    h = hashlib.sha256(f"{int(base_seed)}|{cell_key(cell)}".encode()).digest()
    return int.from_bytes(h[:4], "big") & 0x7FFFFFFF


def expand_sweep(sweep: dict):
    """Validated list of ``(cell, resolved config)`` in Cartesian-product order."""
    C.validate(sweep, C.SWEEP_SCHEMA)
    base = sweep["base"]
    kind = C.run_kind(base)
    C.resolve(base, kind)
    axes = sweep["axes"]
    for path in axes:
        C.check_axis_path(path)
    base_seed = C.seed_of(C.resolve(base, kind))
    out = []
    for values in itertools.product(*axes.values()):
        cell = dict(zip(axes, values))
        cfg = base
        for path, v in cell.items():
            cfg = C.set_path(cfg, path, v)
        cfg = C.set_path(cfg, f"{'elm' if kind == 'elm' else 'train'}.seed",
                         cell_seed(base_seed, cell))
        out.append((cell, cfg))
    return kind, out


def run_cell(kind: str, cfg: dict) -> dict:
    """Run one sweep cell; failures become a status instead of an exception."""
    try:
        resolved = C.resolve(cfg, kind)
    except DpinnLabError as exc:
        return {"status": "invalid", "message": str(exc)}
    try:
        rep = run_solve(resolved) if kind == "solve" else run_elm(resolved)
        return public(rep)
    except DivergedTrainingError as exc:
        rep = _base_report(resolved, kind)
        rep.update(status="diverged", message=str(exc),
                   iterations=exc.iteration if exc.iteration is not None else 0)
        rep.update(_losses_from_row(exc.trace[-1] if exc.trace else None))
        return rep
    except DpinnLabError as exc:
        rep = _base_report(resolved, kind)
        rep.update(status="failed", message=str(exc))
        return rep


def _run_cell_args(args):
    return run_cell(*args)


SUMMARY_FIELDS = ("status", "seed", "max_iters", "iterations") + LOSS_KEYS + (
    "max_error", "l2_error", "config_hash", "message")


def summary_rows(sweep: dict, results):
    axes = list(sweep["axes"])
    rows = []
    for (cell, cfg), rep in results:
        budget = cfg.get("train", {}).get("max_iters", C.TRAIN_DEFAULTS["max_iters"]) \
            if "elm" not in cfg else 1
        row = {p: cell[p] for p in axes}
        for f in SUMMARY_FIELDS:
            row[f] = rep.get(f)
        if row["max_iters"] is None:
            row["max_iters"] = budget
        if row["seed"] is None:
            row["seed"] = C.seed_of(cfg) if ("train" in cfg or "elm" in cfg) else None
        rows.append(row)
    return axes + list(SUMMARY_FIELDS), rows


def resolve_jobs(jobs=None) -> int:
    if jobs is None:
        env = os.environ.get("DPINN_LAB_JOBS")
        if env:
            try:
                jobs = int(env)
            except ValueError as exc:
                raise InvalidConfigError(f"DPINN_LAB_JOBS must be an integer, got {env!r}") \
                    from exc
    jobs = 1 if jobs is None else int(jobs)
    if jobs < 1:
        raise InvalidConfigError("--jobs must be at least 1")
    return jobs


def run_sweep(sweep: dict, out_dir=None, jobs=None, log_stride=None):
    """Run every cell; returns (header, rows) and writes summary.csv when ``out_dir`` is set.

    Wall time is left out of the summary so that reruns give identical bytes.
    """
    kind, cells = expand_sweep(sweep)
    if log_stride is not None and kind == "solve":
        cells = [(cell, C.set_path(cfg, "train.log_stride", int(log_stride)))
                 for cell, cfg in cells]
    jobs = resolve_jobs(jobs)
    args = [(kind, cfg) for _, cfg in cells]
    if jobs == 1 or len(args) == 1:
        results = [run_cell(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_args, args))
    header, rows = summary_rows(sweep, list(zip(cells, results)))
    if out_dir is not None:
        io.ensure_dir(out_dir)
        io.write_csv(os.path.join(out_dir, "summary.csv"), header,
                     ([_cell_text(r[h]) for h in header] for r in rows))
    return header, rows


def _cell_text(v):
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True, separators=(",", ":"))
    return v
