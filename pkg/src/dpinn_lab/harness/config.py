"""Experiment configuration: JSON loading, schema validation, defaults and object builders.

A config is a plain dict. ``resolve`` fills every default so the stored
config (and therefore its hash) fully describes a run.
"""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources

import jsonschema

from ..dpinn.model import BlockGrid, LossWeights
from ..dpinn.train import TrainConfig
from ..errors import InvalidConfigError
from ..problems import Burgers, Heaviside, SquarePulse, SteadyAdvDiff, UnsteadyAdvection

PROBLEM_DEFAULTS = {
    "steady": {"c": 1.0, "eps": 0.1, "x_left": 0.0, "x_right": 1.0, "u_left": 0.0, "u_right": 1.0},
    "advection": {"speed": 0.1, "x_left": 0.0, "x_right": 1.0, "t_start": 0.0, "t_end": 1.0,
                  "initial_profile": {"type": "square-pulse"}},
    "burgers": {"eps": 0.01, "x_left": 0.0, "x_right": 1.0, "t_start": 0.0, "t_end": 1.0,
                "u_left": 0.0, "u_right": 0.0, "initial_profile": {"type": "square-pulse"}},
}
PROFILE_DEFAULTS = {
    "square-pulse": {"center": 0.3, "width": 0.2, "height": 1.0},
    "heaviside": {"jump": 0.5, "height": 1.0},
}
MODEL_DEFAULTS = {
    "nbx": 1, "nbt": 1, "layers": 1, "neurons": 2, "activation": "tanh", "trial": "plain",
    "normalization": False, "collocation_target": "residual", "t_interfaces": False,
}
LOSS_DEFAULTS = {
    "w_f": 1.0, "w_b": 1.0, "w_i": 1.0, "w_vm": 1.0, "w_sm": 1.0, "w_sdm": 0.0, "w_fm": 0.0,
    "lambda_reg": 0.0, "nbx_pts": 10, "nbt_pts": 10, "include_edges": True, "resample": False,
    "sampling": "uniform",
}
TRAIN_DEFAULTS = {
    "optimizer": "adam", "lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "delta": 1e-8,
    "lma_mu": 1e-3, "lma_nu": 10.0, "max_iters": 50_000, "tol": 0.0, "continuation": False,
    "recurrent_split": False, "seed": 0, "log_stride": 100,
}
ELM_DEFAULTS = {
    "nb": 1, "pts_per_block": 10, "neurons": None, "solver": "pinv", "gain": 1.0, "tau": 1e-12,
    "include_edges": True, "normalized": False, "seed": 0,
}
BASELINE_DEFAULTS = {"n_cells": 20}
DIAGNOSE_DEFAULTS = {
    "kind": "piecewise", "panels": 10, "degree": 2, "collocation": 5, "governing": "flux",
    "solver": "pinv", "method": "gna", "n_points": 20, "lam": 1e-3,
    "max_iters": 200, "tol": 1e-12,
}


def _load_schema(name):
    return json.loads(resources.files(__package__).joinpath(name).read_text())


CONFIG_SCHEMA = _load_schema("config_schema.json")
SWEEP_SCHEMA = _load_schema("sweep_schema.json")


def _path(err) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate(cfg: dict, schema=None) -> None:
    """Raise InvalidConfigError naming the offending field."""
    schema = CONFIG_SCHEMA if schema is None else schema
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(cfg),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        if err.validator == "not" and not err.absolute_path:
            raise InvalidConfigError("<root>: give exactly one of 'train' or 'elm'")
        raise InvalidConfigError(f"{_path(err)}: {err.message}")
    if schema is CONFIG_SCHEMA:
        prob = cfg["problem"]
        allowed = set(PROBLEM_DEFAULTS[prob["type"]]) | {"type"}
        extra = sorted(set(prob) - allowed)
        if extra:
            raise InvalidConfigError(
                f"problem.{extra[0]}: not a field of the {prob['type']!r} problem")
        prof = prob.get("initial_profile")
        if prof is not None:
            extra = sorted(set(prof) - set(PROFILE_DEFAULTS[prof["type"]]) - {"type"})
            if extra:
                raise InvalidConfigError(
                    f"problem.initial_profile.{extra[0]}: not a field of {prof['type']!r}")


def loads(text: str, source: str = "<config>") -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(
            f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def load(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return loads(text, str(path))


def _merge(defaults, given):
    out = dict(defaults)
    out.update(given or {})
    return out


def resolve(cfg: dict, kind: str = "solve") -> dict:
    """Validate and fill defaults for the blocks the given run kind uses.

    ``kind`` is one of solve, elm, baseline, diagnose.
    """
    validate(cfg)
    cfg = copy.deepcopy(cfg)
    prob = _merge(PROBLEM_DEFAULTS[cfg["problem"]["type"]], cfg["problem"])
    if "initial_profile" in prob:
        prof = prob["initial_profile"]
        prob["initial_profile"] = _merge(PROFILE_DEFAULTS[prof["type"]], prof)
    out = {"problem": prob}
    if kind == "solve":
        if "elm" in cfg:
            raise InvalidConfigError("elm: a solve config takes a 'train' block, not 'elm'")
        out["model"] = _merge(MODEL_DEFAULTS, cfg.get("model"))
        out["loss"] = _merge(LOSS_DEFAULTS, cfg.get("loss"))
        out["train"] = _merge(TRAIN_DEFAULTS, cfg.get("train"))
    elif kind == "elm":
        if "train" in cfg:
            raise InvalidConfigError("train: an elm config takes an 'elm' block, not 'train'")
        out["elm"] = _merge(ELM_DEFAULTS, cfg.get("elm"))
        if out["elm"]["neurons"] is None:
            out["elm"]["neurons"] = out["elm"]["pts_per_block"] + 2
    elif kind == "baseline":
        out["baseline"] = _merge(BASELINE_DEFAULTS, cfg.get("baseline"))
    elif kind == "diagnose":
        out["diagnose"] = _merge(DIAGNOSE_DEFAULTS, cfg.get("diagnose"))
    else:
        raise InvalidConfigError(f"unknown run kind {kind!r}")
    validate(out)
    return out


def run_kind(cfg: dict) -> str:
    return "elm" if "elm" in cfg else "solve"


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"), ensure_ascii=True,
                      allow_nan=False)


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical JSON text; identical on every platform."""
    return hashlib.sha256(canonical_json(cfg).encode("ascii")).hexdigest()


def with_seed(cfg: dict, seed) -> dict:
    if seed is None:
        return cfg
    cfg = copy.deepcopy(cfg)
    for block in ("train", "elm"):
        if block in cfg:
            cfg[block]["seed"] = int(seed)
    return cfg


def seed_of(cfg: dict) -> int:
    for block in ("train", "elm"):
        if block in cfg:
            return int(cfg[block]["seed"])
    return 0


# ---------------------------------------------------------------------------
# builders


def build_problem(block: dict):
    b = dict(block)
    kind = b.pop("type")
    prof = b.pop("initial_profile", None)
    if prof is not None:
        prof = dict(prof)
        ptype = prof.pop("type")
        b["initial_profile"] = SquarePulse(**prof) if ptype == "square-pulse" else Heaviside(**prof)
    cls = {"steady": SteadyAdvDiff, "advection": UnsteadyAdvection, "burgers": Burgers}[kind]
    return cls(**b)


def architecture(problem, model_block: dict):
    return [problem.dim] + [model_block["neurons"]] * model_block["layers"] + [1]


def build_weights(loss_block: dict) -> LossWeights:
    keys = ("w_f", "w_b", "w_i", "w_vm", "w_sm", "w_sdm", "w_fm", "lambda_reg")
    return LossWeights(**{k: loss_block[k] for k in keys})


def build_grid(problem, model_block: dict) -> BlockGrid:
    nbt = model_block["nbt"] if problem.dim == 2 else 1
    return BlockGrid.for_problem(problem, model_block["nbx"], nbt)


def build_train_config(cfg: dict) -> TrainConfig:
    t, lo = cfg["train"], cfg["loss"]
    return TrainConfig(
        optimizer=t["optimizer"], lr=t["lr"], beta1=t["beta1"], beta2=t["beta2"],
        delta=t["delta"], lma_mu=t["lma_mu"], lma_nu=t["lma_nu"], max_iters=t["max_iters"],
        tol=t["tol"], resample=lo["resample"], continuation=t["continuation"],
        nbx_pts=lo["nbx_pts"], nbt_pts=lo["nbt_pts"], include_edges=lo["include_edges"],
        sampling=lo["sampling"], seed=t["seed"], log_stride=t["log_stride"],
    )


def set_path(cfg: dict, path: str, value) -> dict:
    """Copy of ``cfg`` with the dotted ``path`` set to ``value``."""
    cfg = copy.deepcopy(cfg)
    keys = path.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise InvalidConfigError(f"{path}: does not name a config field")
    node[keys[-1]] = value
    return cfg


def check_axis_path(path: str) -> None:
    """An axis must name a leaf field of the schema."""
    node = CONFIG_SCHEMA
    for k in path.split("."):
        props = node.get("properties") if isinstance(node, dict) else None
        if not props or k not in props:
            raise InvalidConfigError(f"axes.{path}: does not name a config field")
        node = props[k]
