"""Training loop, eps-continuation and recurrent domain splitting."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import (
    DivergedEvaluationError,
    DivergedTrainingError,
    InvalidConfigError,
    SingularSystemError,
)
from ..optim import OPTIMIZERS, init_state, step_first_order, step_lma
from .losses import LossEngine
from .model import BlockGrid, BlockModel, build_model, predict, sample_collocation


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8
    lma_mu: float = 1e-3
    lma_nu: float = 10.0
    max_iters: int = 1000
    tol: float = 0.0
    resample: bool = False
    continuation: bool = False
    nbx_pts: int = 10
    nbt_pts: int = 10
    include_edges: bool = True
    sampling: str = "uniform"
    seed: int = 0
    log_stride: int = 100

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise InvalidConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.max_iters < 1:
            raise InvalidConfigError("max_iters must be at least 1")
        if self.log_stride < 1:
            raise InvalidConfigError("log_stride must be at least 1")
        if not self.lr > 0:
            raise InvalidConfigError("learning rate must be positive")
        if self.tol < 0:
            raise InvalidConfigError("stop tolerance must be nonnegative")
        if self.nbx_pts < 1 or self.nbt_pts < 1:
            raise InvalidConfigError("points per block must be at least 1")
        if self.include_edges and self.nbx_pts < 2:
            raise InvalidConfigError("include_edges needs at least 2 points per block")
        if self.sampling not in ("uniform", "random"):
            raise InvalidConfigError(f"unknown sampling mode {self.sampling!r}")


def continuation_epsilon(it: int, max_iters: int, eps_target: float) -> float:
    """Linear schedule from 1 at the first iteration to the target at the last."""
    return 1.0 + (eps_target - 1.0) * it / max_iters


def _sample(model: BlockModel, cfg: TrainConfig, call_index: int):
    mode = "random" if cfg.resample else cfg.sampling
    return sample_collocation(model.grid, cfg.nbx_pts, cfg.nbt_pts, mode,
                              cfg.include_edges, cfg.seed, call_index)


def _row(it, bd, eps):
    row = {"iter": it, "eps": eps}
    row.update(bd.as_dict())
    return row


def train(model: BlockModel, config: TrainConfig):
    """Minimise the total loss. Returns ``(trained model, trace)``.

    The trace holds one row per logging stride (plus the final iterate) with
    every loss term and the per-term gradient norms.
    """
    cfg = config
    theta = model.params.copy()
    if cfg.optimizer == "lma":
        state = init_state("lma", theta.size, cfg.lr, mu=cfg.lma_mu, nu=cfg.lma_nu)
    else:
        kw = {"delta": cfg.delta}
        if cfg.optimizer == "adam":
            kw.update(beta1=cfg.beta1, beta2=cfg.beta2)
        state = init_state(cfg.optimizer, theta.size, cfg.lr, **kw)
    eps_target = getattr(model.problem, "eps", None)
    if cfg.continuation and eps_target is None:
        raise InvalidConfigError("continuation needs a problem with a diffusivity")

    engine = LossEngine(model, _sample(model, cfg, 0))
    trace = []
    logged_last = -1
    it = 0
    stopped = False

    def eps_at(i):
        return continuation_epsilon(i, cfg.max_iters, eps_target) if cfg.continuation else None

    def run_eval(i, log, grad):
        try:
            return engine.evaluate(theta, eps_at(i), grad=grad, term_grads=log)
        except DivergedEvaluationError as exc:
            raise DivergedTrainingError(
                f"loss term {exc.term} became non-finite at iteration {i}",
                trace=trace, iteration=i, term=exc.term,
            ) from exc

    for it in range(cfg.max_iters):
        if cfg.resample and it > 0:
            engine = LossEngine(model, _sample(model, cfg, it))
        log = it % cfg.log_stride == 0
        bd, grad = run_eval(it, log, cfg.optimizer != "lma")
        if log:
            trace.append(_row(it, bd, eps_at(it)))
            logged_last = it
        if bd.total < cfg.tol:
            stopped = True
            break
        try:
            if cfg.optimizer == "lma":
                eps = eps_at(it)
                e, J = engine.residual_system(theta, eps)
                theta, state = step_lma(
                    state, theta, e, J,
                    residual_fn=lambda th: engine.residual_system(th, eps, jacobian=False)[0],
                )
            else:
                theta, state = step_first_order(state, theta, grad)
        except DivergedTrainingError as exc:
            raise DivergedTrainingError(str(exc), trace=trace, iteration=it) from exc
        except SingularSystemError as exc:
            raise DivergedTrainingError(f"damped system singular at iteration {it}",
                                        trace=trace, iteration=it) from exc
    final_it = it if stopped else cfg.max_iters
    if final_it != logged_last:
        bd, _ = run_eval(final_it, True, False)
        trace.append(_row(final_it, bd, eps_at(final_it)))
    return model.with_params(theta), trace


@dataclass(frozen=True, eq=False)
class SplitStage:
    nbx: int
    initial: BlockModel
    trained: BlockModel
    trace: list


def split_model(model: BlockModel) -> BlockModel:
    """Double the x-blocks; both children start from their parent's parameters."""
    g = model.grid
    p = model.problem
    new_grid = BlockGrid.for_problem(p, 2 * g.nbx, g.nbt)
    Pn = model.n_net_params
    old = model.net_block
    new = np.empty((new_grid.n_blocks, Pn))
    for k in range(g.n_blocks):
        i, j = g.ij(k)
        new[new_grid.index(2 * i, j)] = old[k]
        new[new_grid.index(2 * i + 1, j)] = old[k]
    aux = model.aux
    if model.trial == "linear-augmented":
        new_aux = np.empty(new_grid.n_blocks)
        for k in range(g.n_blocks):
            i, j = g.ij(k)
            new_aux[new_grid.index(2 * i, j)] = aux[k]
            new_aux[new_grid.index(2 * i + 1, j)] = aux[k]
    elif model.trial == "boundary-interface-forced":
        mids = 0.5 * (g.x_edges[:-1] + g.x_edges[1:])
        mid_vals = np.asarray(predict(model, mids), dtype=np.float64)
        new_aux = np.empty(2 * g.nbx - 1)
        new_aux[0::2] = mid_vals
        new_aux[1::2] = aux
    else:
        new_aux = np.zeros(0)
    return replace(model, grid=new_grid, params=np.concatenate([new.ravel(), new_aux]))


def recurrent_split_init(
    problem,
    target_grid: BlockGrid,
    architecture,
    config: TrainConfig,
    trial: str = "plain",
    weights=None,
    seed: int = 0,
    activation: str = "tanh",
    normalization: bool = False,
    start_nbx: int = 1,
):
    """Train on ``start_nbx`` blocks, then repeatedly double and retrain up to the target.

    Returns ``(model, stages)``; each stage keeps the model at the split instant
    and after training.
    """
    target = target_grid.nbx
    n = start_nbx
    while n < target:
        n *= 2
    if n != target or start_nbx < 1:
        raise InvalidConfigError("target block count must be a power-of-two multiple of the start")
    grid = BlockGrid.for_problem(problem, start_nbx, target_grid.nbt)
    model = build_model(problem, grid, architecture, trial, weights, seed, activation,
                        normalization)
    stages = []
    while True:
        trained, trace = train(model, config)
        stages.append(SplitStage(model.grid.nbx, model, trained, trace))
        if trained.grid.nbx == target:
            return trained, stages
        model = split_model(trained)
