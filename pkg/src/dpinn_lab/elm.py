"""Extreme learning machines: frozen random tanh features, output weights from one linear solve.

Each block carries ``n`` features ``tanh(m_i s + b_i)`` where ``s`` is the
physical ``x`` or, in the normalized variant, the block-local coordinate
``xi = (x - a) / dx``. Only the output weights ``c`` are unknown, so every
collocation, boundary and interface condition is one linear row.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, InvalidConfigError, SingularSystemError
from .problems import SteadyAdvDiff

ROW_TAGS = ("collocation", "boundary", "value-interface", "slope-interface")


@dataclass(frozen=True, eq=False)
class ElmNetwork:
    slopes: np.ndarray
    biases: np.ndarray
    x_edges: np.ndarray
    normalized: bool = False
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("slopes", "biases"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.slopes.shape != self.biases.shape or self.slopes.ndim != 2:
            raise InvalidConfigError("slopes and biases must share a (blocks, neurons) shape")
        if len(self.x_edges) != self.slopes.shape[0] + 1:
            raise InvalidConfigError("edge count must be blocks + 1")

    @property
    def n_blocks(self) -> int:
        return self.slopes.shape[0]

    @property
    def n_neurons(self) -> int:
        return self.slopes.shape[1]

    def with_weights(self, c) -> "ElmNetwork":
        c = np.asarray(c, dtype=np.float64).reshape(self.slopes.shape)
        return replace(self, weights=c)


@dataclass(frozen=True, eq=False)
class ElmSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    tags: tuple

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.rhs) or len(self.rhs) != len(self.tags):
            raise InvalidConfigError("rows, right-hand side and tags must agree in length")

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def is_square(self) -> bool:
        return self.matrix.shape[0] == self.matrix.shape[1]


def _features(net: ElmNetwork, k: int, s):
    """tanh features of block ``k`` and their first two derivatives in ``s``."""
    m = net.slopes[k]
    z = np.tanh(np.multiply.outer(np.asarray(s, dtype=np.float64), m) + net.biases[k])
    sech2 = 1.0 - z * z
    return z, m * sech2, -2.0 * m * m * z * sech2


def _local(net: ElmNetwork, k: int, x):
    if not net.normalized:
        return np.asarray(x, dtype=np.float64), 1.0
    a, b = net.x_edges[k], net.x_edges[k + 1]
    return (np.asarray(x, dtype=np.float64) - a) / (b - a), b - a


def draw_network(n_blocks: int, n_neurons: int, x_edges, seed: int = 0, gain: float = 1.0,
                 normalized: bool = False) -> ElmNetwork:
    """Random frozen hidden layer: slopes then biases, uniform on [-gain, gain]."""
    if n_neurons < 1 or n_blocks < 1:
        raise InvalidConfigError("need at least one block and one neuron")
    rng = np.random.default_rng(int(seed) % 2**64)
    m = rng.uniform(-1.0, 1.0, (n_blocks, n_neurons)) * gain
    b = rng.uniform(-1.0, 1.0, (n_blocks, n_neurons)) * gain
    return ElmNetwork(m, b, np.asarray(x_edges, dtype=np.float64), normalized)


def _assemble(problem: SteadyAdvDiff, net: ElmNetwork, block_points: Sequence[np.ndarray]):
    nb, n = net.n_blocks, net.n_neurons
    cols = nb * n
    rows, rhs, tags = [], [], []
    for k in range(nb):
        pts = np.asarray(block_points[k], dtype=np.float64)
        if pts.size == 0:
            continue
        s, h = _local(net, k, pts)
        _, d1, d2 = _features(net, k, s)
        # normalized rows are the physical residual scaled by the block width
        block = (problem.eps / h) * d2 - problem.c * d1
        A = np.zeros((pts.size, cols))
        A[:, k * n:(k + 1) * n] = block
        rows.append(A)
        rhs += [0.0] * pts.size
        tags += ["collocation"] * pts.size
    for k, xb, ub in ((0, problem.x_left, problem.u_left),
                      (nb - 1, problem.x_right, problem.u_right)):
        s, _ = _local(net, k, xb)
        z, _, _ = _features(net, k, s)
        A = np.zeros((1, cols))
        A[0, k * n:(k + 1) * n] = z
        rows.append(A)
        rhs.append(float(ub))
        tags.append("boundary")
    for deriv, tag in ((0, "value-interface"), (1, "slope-interface")):
        for k in range(nb - 1):
            xe = net.x_edges[k + 1]
            sl, hl = _local(net, k, xe)
            sr, hr = _local(net, k + 1, xe)
            fl = _features(net, k, sl)[deriv]
            fr = _features(net, k + 1, sr)[deriv]
            if deriv == 1:
                # physical slopes, scaled by the left block width when normalized
                fr = fr * (hl / hr)
            A = np.zeros((1, cols))
            A[0, k * n:(k + 1) * n] = fl
            A[0, (k + 1) * n:(k + 2) * n] = -fr
            rows.append(A)
            rhs.append(0.0)
            tags.append(tag)
    matrix = np.vstack(rows) if rows else np.zeros((0, cols))
    return ElmSystem(matrix, np.asarray(rhs, dtype=np.float64), tuple(tags))


def assemble_elm_pinn(problem: SteadyAdvDiff, points, n_neurons: int, seed: int = 0,
                      gain: float = 1.0):
    """Single-network system: one residual row per collocation point plus two boundary rows."""
    if not isinstance(problem, SteadyAdvDiff):
        raise InvalidConfigError("ELM solvers handle the steady advection-diffusion problem")
    edges = np.array([problem.x_left, problem.x_right], dtype=np.float64)
    net = draw_network(1, n_neurons, edges, seed, gain)
    pts = np.atleast_1d(np.asarray(points, dtype=np.float64))
    return net, _assemble(problem, net, [pts])


def block_points(x_edges, pts_per_block: int, include_edges: bool = True):
    out = []
    for a, b in zip(x_edges[:-1], x_edges[1:]):
        if include_edges:
            out.append(np.linspace(a, b, pts_per_block))
        else:
            out.append(a + (np.arange(pts_per_block) + 1.0) * (b - a) / (pts_per_block + 1))
    return out


def assemble_elm_dpinn(problem: SteadyAdvDiff, n_blocks: int, pts_per_block: int,
                       n_neurons: int, seed: int = 0, gain: float = 1.0,
                       include_edges: bool = True, normalized: bool = False):
    """Block system with value and slope continuity rows at every interface.

    With ``n_neurons = pts_per_block + 2`` the system is square with
    ``n_blocks * (pts_per_block + 2)`` rows.
    """
    if not isinstance(problem, SteadyAdvDiff):
        raise InvalidConfigError("ELM solvers handle the steady advection-diffusion problem")
    if n_blocks < 1 or pts_per_block < 0:
        raise InvalidConfigError("need at least one block and nonnegative point counts")
    edges = np.linspace(problem.x_left, problem.x_right, n_blocks + 1)
    net = draw_network(n_blocks, n_neurons, edges, seed, gain, normalized)
    pts = block_points(edges, pts_per_block, include_edges) if pts_per_block else [
        np.zeros(0)] * n_blocks
    return net, _assemble(problem, net, pts)


def solve_exact(system: ElmSystem, cond_limit: float = 1e12) -> np.ndarray:
    """Direct solve of a square, well-conditioned system."""
    A, R = system.matrix, system.rhs
    if not system.is_square:
        raise SingularSystemError("system is not square; use solve_pinv")
    if A.size == 0:
        return np.zeros(0)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularSystemError(
            f"matrix is ill-conditioned (cond={cond:.3e}); use solve_pinv"
        )
    c = np.linalg.solve(A, R)
    if np.max(np.abs(A @ c - R)) > 1e-8 * (1.0 + np.max(np.abs(R))):
        raise SingularSystemError("direct solve failed its residual check; use solve_pinv")
    return c


def solve_pinv(system: ElmSystem, tau: float = 1e-12) -> np.ndarray:
    """Least-norm least-squares solution through a truncated SVD.

    Singular values below ``tau * sigma_max`` are dropped.
    """
    A, R = system.matrix, system.rhs
    if A.size == 0:
        return np.zeros(A.shape[1])
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > tau * s[0] if s.size else s.astype(bool)
    coef = (U[:, keep].T @ R) / s[keep]
    return Vt[keep].T @ coef


def elm_predict(net: ElmNetwork, x):
    """Block-local prediction sum_i c_i tanh(m_i s + b_i)."""
    if net.weights is None:
        raise InvalidConfigError("network has no output weights yet")
    scalar = np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, dtype=np.float64))
    e = net.x_edges
    if np.any(xa < e[0]) or np.any(xa > e[-1]):
        raise DomainError("x outside the domain")
    owner = np.clip(np.searchsorted(e, xa, side="right") - 1, 0, net.n_blocks - 1)
    out = np.empty_like(xa)
    for k in np.unique(owner):
        sel = owner == k
        s, _ = _local(net, k, xa[sel])
        z, _, _ = _features(net, k, s)
        out[sel] = z @ net.weights[k]
    return float(out[0]) if scalar else out


def solve(system: ElmSystem, method: str = "pinv", tau: float = 1e-12) -> np.ndarray:
    if method == "exact":
        return solve_exact(system)
    if method == "pinv":
        return solve_pinv(system, tau)
    raise InvalidConfigError(f"unknown solver {method!r}")
