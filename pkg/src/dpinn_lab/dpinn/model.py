"""Block grid, per-block networks, trial functions and prediction."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .. import netcore
from ..errors import (
    DomainError,
    InvalidArchitectureError,
    InvalidConfigError,
    InvalidInputError,
    UnsupportedTrialError,
)
from ..netcore import DenseNet, Jets, NetJet, StackForward
from ..problems import Problem, SteadyAdvDiff

TRIAL_MODES = ("plain", "linear-augmented", "boundary-forced", "boundary-interface-forced")
COLLOCATION_TARGETS = ("residual", "flux")


@dataclass(frozen=True, eq=False)
class BlockGrid:
    nbx: int
    nbt: int
    x_edges: np.ndarray
    t_edges: Optional[np.ndarray] = None

    @classmethod
    def for_problem(cls, problem: Problem, nbx: int, nbt: int = 1) -> "BlockGrid":
        if nbx < 1 or nbt < 1:
            raise InvalidConfigError("block counts must be at least 1")
        x_edges = np.linspace(problem.x_left, problem.x_right, nbx + 1)
        if problem.dim == 1:
            if nbt != 1:
                raise InvalidConfigError("steady problems have a single time block")
            return cls(nbx, 1, x_edges, None)
        t_edges = np.linspace(problem.t_start, problem.t_end, nbt + 1)
        return cls(nbx, nbt, x_edges, t_edges)

    @property
    def n_blocks(self) -> int:
        return self.nbx * self.nbt

    @property
    def dim(self) -> int:
        return 1 if self.t_edges is None else 2

    def index(self, i: int, j: int = 0) -> int:
        return j * self.nbx + i

    def ij(self, k: int):
        return k % self.nbx, k // self.nbx

    def x_extent(self, k: int):
        i = k % self.nbx
        return float(self.x_edges[i]), float(self.x_edges[i + 1])

    def t_extent(self, k: int):
        if self.t_edges is None:
            return None
        j = k // self.nbx
        return float(self.t_edges[j]), float(self.t_edges[j + 1])

    def locate(self, x, t=None) -> np.ndarray:
        """Owning block of each point; shared edges belong to the later block."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        lo, hi = self.x_edges[0], self.x_edges[-1]
        if np.any(x < lo) or np.any(x > hi):
            raise DomainError("x outside the domain")
        i = np.clip(np.searchsorted(self.x_edges, x, side="right") - 1, 0, self.nbx - 1)
        if self.t_edges is None:
            return i
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), x.shape)
        if np.any(t < self.t_edges[0]) or np.any(t > self.t_edges[-1]):
            raise DomainError("t outside the domain")
        j = np.clip(np.searchsorted(self.t_edges, t, side="right") - 1, 0, self.nbt - 1)
        return j * self.nbx + i


@dataclass(frozen=True)
class LossWeights:
    w_f: float = 1.0
    w_b: float = 1.0
    w_i: float = 1.0
    w_vm: float = 1.0
    w_sm: float = 1.0
    w_sdm: float = 0.0
    w_fm: float = 0.0
    lambda_reg: float = 0.0

    def __post_init__(self):
        for name in ("w_f", "w_b", "w_i", "w_vm", "w_sm", "w_sdm", "w_fm", "lambda_reg"):
            if not getattr(self, name) >= 0:
                raise InvalidConfigError(f"{name} must be nonnegative")


def block_seed(seed: int, k: int) -> int:
    ss = np.random.SeedSequence([int(seed) % 2**64, int(k)])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True, eq=False)
class BlockModel:
    problem: Problem
    grid: BlockGrid
    layer_widths: tuple
    activation: str
    params: np.ndarray
    trial: str = "plain"
    weights: LossWeights = field(default_factory=LossWeights)
    normalization: bool = False
    collocation_target: str = "residual"
    t_interfaces: bool = False

    @property
    def n_blocks(self) -> int:
        return self.grid.n_blocks

    @property
    def n_net_params(self) -> int:
        return netcore.param_count(self.layer_widths)

    @property
    def n_aux(self) -> int:
        return aux_count(self.trial, self.grid)

    @property
    def net_block(self) -> np.ndarray:
        B = self.n_blocks
        return self.params[: B * self.n_net_params].reshape(B, self.n_net_params)

    @property
    def aux(self) -> np.ndarray:
        return self.params[self.n_blocks * self.n_net_params:]

    @property
    def nets(self) -> list:
        return [netcore.unflatten(row, self.layer_widths, self.activation)
                for row in self.net_block]

    def with_params(self, params) -> "BlockModel":
        params = np.array(params, dtype=np.float64)
        if params.shape != self.params.shape:
            raise InvalidInputError("parameter vector has the wrong length")
        return replace(self, params=params)


def aux_count(trial: str, grid: BlockGrid) -> int:
    if trial == "linear-augmented":
        return grid.n_blocks
    if trial == "boundary-interface-forced":
        return grid.nbx - 1
    return 0


def build_model(
    problem: Problem,
    grid: BlockGrid,
    architecture: Sequence[int],
    trial: str = "plain",
    weights: Optional[LossWeights] = None,
    seed: int = 0,
    activation: str = "tanh",
    normalization: bool = False,
    collocation_target: str = "residual",
    t_interfaces: bool = False,
) -> BlockModel:
    """One independently seeded network per block.

    A 1x1 grid with the plain trial is an ordinary PINN; with the
    boundary-forced trial it is the classical trial-function method.
    """
    widths = netcore.check_widths(architecture)
    if widths[0] != problem.dim:
        raise InvalidArchitectureError(
            f"input width {widths[0]} does not match problem dimension {problem.dim}"
        )
    if trial not in TRIAL_MODES:
        raise InvalidConfigError(f"unknown trial mode {trial!r}")
    if collocation_target not in COLLOCATION_TARGETS:
        raise InvalidConfigError(f"unknown collocation target {collocation_target!r}")
    if trial in ("boundary-forced", "boundary-interface-forced") and not isinstance(
        problem, SteadyAdvDiff
    ):
        raise UnsupportedTrialError(f"{trial} trial is only available for the steady problem")
    if collocation_target == "flux" and not isinstance(problem, SteadyAdvDiff):
        raise InvalidConfigError("flux collocation is only defined for the steady problem")
    nets = [
        netcore.flatten(netcore.init_random(widths, activation, block_seed(seed, k)))
        for k in range(grid.n_blocks)
    ]
    aux = _initial_aux(trial, problem, grid)
    params = np.concatenate(nets + [aux])
    return BlockModel(
        problem, grid, widths, activation, params, trial,
        weights or LossWeights(), normalization, collocation_target, t_interfaces,
    )


def _initial_aux(trial, problem, grid) -> np.ndarray:
    if trial == "linear-augmented":
        return np.zeros(grid.n_blocks)
    if trial == "boundary-interface-forced":
        frac = np.arange(1, grid.nbx) / grid.nbx
        return problem.u_left + frac * (problem.u_right - problem.u_left)
    return np.zeros(0)


def normalize_coefficient(problem: SteadyAdvDiff, grid: BlockGrid) -> float:
    """Effective diffusivity once every block is mapped onto [0, 1]."""
    return grid.nbx * problem.eps / (problem.x_right - problem.x_left)


# ---------------------------------------------------------------------------
# collocation


@dataclass(frozen=True, eq=False)
class CollocationSet:
    """Per-column x samples and per-row t samples; block (i, j) uses xs[i] x ts[j]."""

    grid: BlockGrid
    xs: np.ndarray
    ts: Optional[np.ndarray] = None

    @property
    def points_per_block(self) -> int:
        return self.xs.shape[1] * (1 if self.ts is None else self.ts.shape[1])

    def block_points(self, k: int) -> np.ndarray:
        i, j = self.grid.ij(k)
        if self.ts is None:
            return self.xs[i][:, None]
        X, T = np.meshgrid(self.xs[i], self.ts[j], indexing="xy")
        return np.stack([X.ravel(), T.ravel()], axis=-1)

    def points(self) -> np.ndarray:
        """All collocation points, shape (blocks, points per block, dim)."""
        g = self.grid
        if self.ts is None:
            return np.tile(self.xs[:, None, :], (1, 1, 1)).reshape(g.nbx, -1, 1)
        nx, nt = self.xs.shape[1], self.ts.shape[1]
        xs = np.broadcast_to(self.xs[None, :, None, :], (g.nbt, g.nbx, nt, nx))
        ts = np.broadcast_to(self.ts[:, None, :, None], (g.nbt, g.nbx, nt, nx))
        return np.stack([xs, ts], axis=-1).reshape(g.n_blocks, nt * nx, 2)


def _axis_samples(edges, n, mode, include_edges, rng):
    nb = len(edges) - 1
    out = np.empty((nb, n))
    for b in range(nb):
        lo, hi = edges[b], edges[b + 1]
        if mode == "uniform":
            if n == 1:
                pts = np.array([0.5 * (lo + hi)])
            elif include_edges:
                pts = np.linspace(lo, hi, n)
            else:
                pts = lo + (np.arange(n) + 0.5) * (hi - lo) / n
        elif mode == "random":
            pts = np.sort(rng.uniform(lo, hi, n))
            if include_edges and n >= 2:
                pts[0], pts[-1] = lo, hi
        else:
            raise InvalidConfigError(f"unknown sampling mode {mode!r}")
        out[b] = pts
    return out


def sample_collocation(
    grid: BlockGrid,
    nbx_pts: int,
    nbt_pts: int = 1,
    mode: str = "uniform",
    include_edges: bool = True,
    seed: int = 0,
    call_index: int = 0,
) -> CollocationSet:
    """Collocation points for every block.

    Random draws come from a generator keyed on ``(seed, call_index)`` so a run
    that redraws points every iteration is reproducible.
    """
    if nbx_pts < 1 or nbt_pts < 1:
        raise InvalidConfigError("point counts must be at least 1")
    rng = np.random.default_rng([int(seed) % 2**64, int(call_index)])
    xs = _axis_samples(grid.x_edges, nbx_pts, mode, include_edges, rng)
    ts = None
    if grid.t_edges is not None:
        ts = _axis_samples(grid.t_edges, nbt_pts, mode, include_edges, rng)
    return CollocationSet(grid, xs, ts)


# ---------------------------------------------------------------------------
# evaluation of trial functions on groups of points


class PointGroup:
    """Points attached to a subset of blocks, with the trial-function geometry."""

    def __init__(self, model: BlockModel, idx: np.ndarray, X: np.ndarray):
        self.idx = np.asarray(idx, dtype=np.intp)
        self.all_blocks = len(self.idx) == model.n_blocks and np.array_equal(
            self.idx, np.arange(model.n_blocks))
        self.X = X
        g = model.grid
        ii = self.idx % g.nbx
        a = g.x_edges[ii][:, None]
        b = g.x_edges[ii + 1][:, None]
        self.dx = b - a
        self.eta = (X[..., 0] - a) / self.dx
        self.dt = None
        if g.t_edges is not None:
            jj = self.idx // g.nbx
            c = g.t_edges[jj][:, None]
            d = g.t_edges[jj + 1][:, None]
            self.dt = d - c
            tau = (X[..., 1] - c) / self.dt
        if model.normalization:
            cols = [self.eta] if self.dt is None else [self.eta, tau]
            self.X_in = np.stack(cols, axis=-1)
            self.sx = 1.0 / self.dx
            self.st = None if self.dt is None else 1.0 / self.dt
        else:
            self.X_in = X
            self.sx = None
            self.st = None
        self._forced_geometry(model, ii)

    def _forced_geometry(self, model, ii):
        """Multiplier B(x) of the network and its x-derivatives for forced trials."""
        trial = model.trial
        eta, h = self.eta, self.dx
        self.A = self.A1 = self.A2 = None
        if trial in ("plain", "linear-augmented"):
            self.Bf = None
            return
        nbx = model.grid.nbx
        p = model.problem
        ones = np.ones_like(eta)
        if trial == "boundary-interface-forced" or nbx == 1:
            self.Bf = eta * (1.0 - eta)
            self.Bf1 = (1.0 - 2.0 * eta) / h
            self.Bf2 = -2.0 / h**2 * ones
            if trial == "boundary-forced":
                self.A = (1.0 - eta) * p.u_left + eta * p.u_right
                self.A1 = (p.u_right - p.u_left) / h * ones
                self.A2 = 0.0 * ones
            return
        first = (ii == 0)[:, None]
        last = (ii == nbx - 1)[:, None]
        self.Bf = np.where(first, eta, np.where(last, 1.0 - eta, 1.0))
        self.Bf1 = np.where(first, 1.0 / h, np.where(last, -1.0 / h, 0.0)) * ones
        self.Bf2 = 0.0 * ones
        self.A = np.where(first, p.u_left, np.where(last, p.u_right, 0.0)) * ones
        self.A1 = 0.0 * ones
        self.A2 = 0.0 * ones

    def layers(self, model: BlockModel, theta_block=None):
        theta = model.net_block if theta_block is None else theta_block
        if not self.all_blocks:
            theta = theta[self.idx]
        return netcore.stack_layers(theta, model.layer_widths)

    def raw_jets(self, fw: StackForward) -> Jets:
        """Network jets converted to physical derivatives."""
        o = fw.out
        if self.sx is None:
            return o
        return Jets(
            o.v,
            None if o.x is None else o.x * self.sx,
            None if o.xx is None else o.xx * self.sx**2,
            None if o.t is None else o.t * self.st,
        )

    def raw_adjoint_to_local(self, adj: dict) -> dict:
        if self.sx is None:
            return adj
        out = dict(adj)
        if adj.get("x") is not None:
            out["x"] = adj["x"] * self.sx
        if adj.get("xx") is not None:
            out["xx"] = adj["xx"] * self.sx**2
        if adj.get("t") is not None:
            out["t"] = adj["t"] * self.st
        return out

    # trial transform -----------------------------------------------------

    def affine_part(self, model: BlockModel, aux: np.ndarray):
        """(A, A', A'') added to the network contribution, or Nones."""
        trial = model.trial
        if trial == "linear-augmented":
            alpha = aux[self.idx][:, None]
            return alpha * self.X[..., 0], alpha * np.ones_like(self.eta), None
        if trial == "boundary-interface-forced":
            p = model.problem
            U = np.concatenate([[p.u_left], aux, [p.u_right]])
            ii = self.idx % model.grid.nbx
            uk = U[ii][:, None]
            uk1 = U[ii + 1][:, None]
            return (1.0 - self.eta) * uk + self.eta * uk1, (uk1 - uk) / self.dx, None
        return self.A, self.A1, self.A2

    def trial_forward(self, model: BlockModel, N: Jets, aux: np.ndarray) -> Jets:
        A, A1, A2 = self.affine_part(model, aux)
        if self.Bf is None:
            v, x, xx, t = N.v, N.x, N.xx, N.t
        else:
            v = self.Bf * N.v
            x = None if N.x is None else self.Bf1 * N.v + self.Bf * N.x
            xx = None
            if N.xx is not None:
                xx = self.Bf2 * N.v + 2.0 * self.Bf1 * N.x + self.Bf * N.xx
            t = None if N.t is None else self.Bf * N.t
        if A is not None:
            v = v + A
            if x is not None:
                x = x + A1
            if xx is not None and A2 is not None:
                xx = xx + A2
        return Jets(v, x, xx, t)

    def trial_backward(self, model: BlockModel, adj: dict, aux_grad: np.ndarray) -> dict:
        """Map trial-jet adjoints onto raw network jets; accumulate auxiliary gradients."""
        gv, gx, gxx, gt = adj.get("v"), adj.get("x"), adj.get("xx"), adj.get("t")
        trial = model.trial
        if trial == "linear-augmented":
            s = 0.0
            if gv is not None:
                s = s + (gv * self.X[..., 0]).sum(axis=1)
            if gx is not None:
                s = s + gx.sum(axis=1)
            np.add.at(aux_grad, self.idx, s)
        elif trial == "boundary-interface-forced":
            nbx = model.grid.nbx
            ii = self.idx % nbx
            lo = 0.0
            hi = 0.0
            if gv is not None:
                lo = lo + (gv * (1.0 - self.eta)).sum(axis=1)
                hi = hi + (gv * self.eta).sum(axis=1)
            if gx is not None:
                lo = lo - (gx / self.dx).sum(axis=1)
                hi = hi + (gx / self.dx).sum(axis=1)
            full = np.zeros(nbx + 1)
            np.add.at(full, ii, lo)
            np.add.at(full, ii + 1, hi)
            aux_grad += full[1:-1]
        if self.Bf is None:
            return adj
        out = {}
        nv = 0.0
        if gv is not None:
            nv = nv + self.Bf * gv
        if gx is not None:
            nv = nv + self.Bf1 * gx
            out["x"] = self.Bf * gx
        if gxx is not None:
            nv = nv + self.Bf2 * gxx
            out["x"] = out.get("x", 0.0) + 2.0 * self.Bf1 * gxx
            out["xx"] = self.Bf * gxx
        if gt is not None:
            out["t"] = self.Bf * gt
        out["v"] = nv
        return out

    def trial_jacobian_coeffs(self, model: BlockModel):
        """Linear map from raw network jets to trial jets: {trial_key: {raw_key: coeff}}."""
        if self.Bf is None:
            return {k: {k: 1.0} for k in netcore.JET_KEYS}
        return {
            "v": {"v": self.Bf},
            "x": {"v": self.Bf1, "x": self.Bf},
            "xx": {"v": self.Bf2, "x": 2.0 * self.Bf1, "xx": self.Bf},
            "t": {"t": self.Bf},
        }

    def aux_jacobian(self, model: BlockModel, key: str):
        """Per-point derivative of trial jet ``key`` w.r.t. the auxiliary parameters.

        Returns ``(Bg, P, n_aux)`` or ``None``.
        """
        n_aux = model.n_aux
        if n_aux == 0 or key in ("xx", "t"):
            return None
        Bg, P = self.eta.shape
        out = np.zeros((Bg, P, n_aux))
        if model.trial == "linear-augmented":
            col = self.X[..., 0] if key == "v" else np.ones_like(self.eta)
            out[np.arange(Bg), :, self.idx] = col
            return out
        nbx = model.grid.nbx
        ii = self.idx % nbx
        lo = (1.0 - self.eta) if key == "v" else -1.0 / self.dx * np.ones_like(self.eta)
        hi = self.eta if key == "v" else 1.0 / self.dx * np.ones_like(self.eta)
        for b in range(Bg):
            if ii[b] >= 1:
                out[b, :, ii[b] - 1] += lo[b]
            if ii[b] + 1 <= nbx - 1:
                out[b, :, ii[b]] += hi[b]
        return out


def eval_group(model: BlockModel, group: PointGroup, order: int = 2, theta=None):
    """Forward pass for a group; returns (forward object, trial jets)."""
    params = model.params if theta is None else theta
    B = model.n_blocks
    theta_block = params[: B * model.n_net_params].reshape(B, model.n_net_params)
    aux = params[B * model.n_net_params:]
    fw = StackForward(group.layers(model, theta_block), model.activation, group.X_in, order)
    psi = group.trial_forward(model, group.raw_jets(fw), aux)
    return fw, psi


def trial_value(model: BlockModel, block: int, x: float, t: Optional[float] = None) -> NetJet:
    """Trial-function jet of one block at one point (physical derivatives)."""
    g = model.grid
    a, b = g.x_extent(block)
    if not (a <= x <= b):
        raise DomainError("x outside the block")
    if g.t_edges is not None:
        c, d = g.t_extent(block)
        if t is None or not (c <= t <= d):
            raise DomainError("t outside the block")
        X = np.array([[[x, t]]], dtype=np.float64)
    else:
        X = np.array([[[x]]], dtype=np.float64)
    group = PointGroup(model, np.array([block]), X)
    _, psi = eval_group(model, group, order=2)
    return NetJet(
        float(psi.v[0, 0]),
        float(psi.x[0, 0]),
        float(psi.xx[0, 0]),
        0.0 if psi.t is None else float(psi.t[0, 0]),
    )


def predict(model: BlockModel, x, t=None):
    """Model prediction; each point is evaluated by the block that owns it."""
    scalar = np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, dtype=np.float64))
    ta = None
    if model.grid.t_edges is not None:
        if t is None:
            raise InvalidInputError("unsteady model needs t")
        ta = np.broadcast_to(np.asarray(t, dtype=np.float64), xa.shape).ravel()
    xa_flat = xa.ravel()
    owner = model.grid.locate(xa_flat, ta)
    out = np.empty_like(xa_flat)
    for k in np.unique(owner):
        sel = owner == k
        cols = [xa_flat[sel]] if ta is None else [xa_flat[sel], ta[sel]]
        X = np.stack(cols, axis=-1)[None]
        _, psi = eval_group(model, PointGroup(model, np.array([k]), X), order=0)
        out[sel] = psi.v[0]
    out = out.reshape(xa.shape)
    return float(out[0]) if scalar else out
