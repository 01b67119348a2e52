"""Optimization diagnostics: piecewise polynomial least-norm probes and exponential-form regression.

Both are independent of the networks. The piecewise systems show what a
collocation method can achieve when the approximation space is fixed and the
solve is exact; the exponential fits show how the closed-form solution's own
parameters behave under Gauss-Newton style iterations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .elm import ElmSystem, solve_exact, solve_pinv
from .errors import DomainError, InvalidConfigError
from .problems import SteadyAdvDiff

EXP_METHODS = ("gna", "marquardt", "lma", "tikhonov")
EXP_STATUSES = ("converged", "unstable", "singular", "stalled")


# ---------------------------------------------------------------------------
# piecewise polynomials


@dataclass(frozen=True, eq=False)
class PiecewiseSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    tags: tuple
    degree: int
    edges: np.ndarray

    def __iter__(self):
        yield self.matrix
        yield self.rhs


@dataclass(frozen=True, eq=False)
class PiecewiseFit:
    """Coefficients of panel ``i`` act on the local offset ``x - edges[i]``."""

    degree: int
    coeffs: np.ndarray
    edges: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != (len(self.edges) - 1, self.degree + 1):
            raise InvalidConfigError("coefficient table does not match panels and degree")


def _powers(x, degree):
    """Row of [s^d, ..., s, 1], highest power first (A_i s^2 + B_i s + C_i)."""
    return np.array([x**k for k in range(degree, -1, -1)], dtype=np.float64)


def _dpowers(x, degree):
    return np.array([k * x ** (k - 1) if k else 0.0 for k in range(degree, -1, -1)])


def _ddpowers(x, degree):
    return np.array([k * (k - 1) * x ** (k - 2) if k > 1 else 0.0
                     for k in range(degree, -1, -1)])


def piecewise_system(
    problem: SteadyAdvDiff,
    panels: int,
    degree: int,
    collocation: Union[int, Sequence[int]],
    governing: str = "flux",
) -> PiecewiseSystem:
    """Rows: governing equation at collocation points, two boundary rows, value continuity.

    Panel ``i`` is written in its local offset ``s = x - x_i`` so that steep
    panels do not lose accuracy to cancellation between large monomial terms.

    ``collocation`` is a count per panel or a list of per-panel counts; the
    points sit at ``(j + 1/2) / k`` of each panel. Degree 1 has no second
    derivative, so the residual form collapses to ``-c A_i = 0`` and is
    rejected.
    """
    if degree not in (1, 2):
        raise InvalidConfigError("degree must be 1 or 2")
    if governing not in ("residual", "flux"):
        raise InvalidConfigError(f"unknown governing equation {governing!r}")
    if degree == 1 and governing == "residual":
        raise InvalidConfigError("degree-1 residual rows are degenerate; use the flux form")
    if panels < 1:
        raise InvalidConfigError("need at least one panel")
    counts = [collocation] * panels if np.ndim(collocation) == 0 else list(collocation)
    if len(counts) != panels or any(k < 0 for k in counts):
        raise InvalidConfigError("collocation counts must be nonnegative, one per panel")
    p = problem
    edges = np.linspace(p.x_left, p.x_right, panels + 1)
    nc = degree + 1
    cols = panels * nc
    rows, rhs, tags = [], [], []

    def row(i, vec):
        r = np.zeros(cols)
        r[i * nc:(i + 1) * nc] = vec
        return r

    for i in range(panels):
        a, b = edges[i], edges[i + 1]
        k = counts[i]
        for j in range(k):
            x = (j + 0.5) * (b - a) / k
            if governing == "flux":
                vec = p.eps * _dpowers(x, degree) - p.c * _powers(x, degree)
            else:
                vec = p.eps * _ddpowers(x, degree) - p.c * _dpowers(x, degree)
            rows.append(row(i, vec))
            rhs.append(0.0)
            tags.append("collocation")
    rows.append(row(0, _powers(0.0, degree)))
    rhs.append(p.u_left)
    tags.append("boundary")
    rows.append(row(panels - 1, _powers(p.x_right - edges[-2], degree)))
    rhs.append(p.u_right)
    tags.append("boundary")
    for i in range(panels - 1):
        h = edges[i + 1] - edges[i]
        rows.append(row(i, _powers(h, degree)) - row(i + 1, _powers(0.0, degree)))
        rhs.append(0.0)
        tags.append("value-interface")
    return PiecewiseSystem(np.vstack(rows), np.asarray(rhs, dtype=np.float64), tuple(tags),
                           degree, edges)


def square_collocation_counts(panels: int, degree: int) -> list:
    """Per-panel counts that make the system square: ``(degree + 1) N - N - 1`` in total."""
    total = degree * panels - 1
    base, extra = divmod(total, panels)
    return [base + (1 if i < extra else 0) for i in range(panels)]


def piecewise_solve(system: PiecewiseSystem, method: str = "exact", tau: float = 1e-12) -> PiecewiseFit:
    es = ElmSystem(system.matrix, system.rhs, system.tags)
    if method == "exact":
        x = solve_exact(es)
    elif method == "pinv":
        x = solve_pinv(es, tau)
    else:
        raise InvalidConfigError(f"unknown method {method!r}")
    return PiecewiseFit(system.degree, x.reshape(-1, system.degree + 1), system.edges)


def piecewise_eval(fit: PiecewiseFit, x):
    scalar = np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, dtype=np.float64))
    e = fit.edges
    if np.any(xa < e[0]) or np.any(xa > e[-1]):
        raise DomainError("x outside the domain")
    i = np.clip(np.searchsorted(e, xa, side="right") - 1, 0, len(e) - 2)
    s = xa - e[i]
    basis = np.stack([s**k for k in range(fit.degree, -1, -1)], axis=1)
    out = np.einsum("nk,nk->n", fit.coeffs[i], basis)
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# exponential-form regression


@dataclass(frozen=True)
class ExpFitResult:
    a: float
    b: float
    c: float
    status: str
    iterations: int

    @property
    def params(self):
        return np.array([self.a, self.b, self.c])


def exp_model(beta, x):
    a, b, c = beta
    return a * np.exp(b * x) + c


def exp_jacobian(beta, x):
    a, b, _ = beta
    e = np.exp(b * x)
    return np.stack([e, a * x * e, np.ones_like(x)], axis=1)


def exp_step(method: str, J: np.ndarray, r: np.ndarray, beta: np.ndarray, lam: float):
    """Normal matrix and right-hand side of one update ``beta <- beta + delta``.

    The Tikhonov variant adds ``lam * beta`` to the right-hand side as
    written in its source formula; that is not the textbook penalty, and
    it moves the fixed point away from the least-squares optimum by
    ``O(lam)``.
    """
    JtJ = J.T @ J
    g = J.T @ r
    if method == "gna":
        return JtJ, g
    if method == "marquardt":
        return JtJ + lam * np.eye(3), g
    if method == "lma":
        return JtJ + lam * np.diag(np.diag(JtJ)), g
    if method == "tikhonov":
        return JtJ + lam * np.eye(3), g + lam * beta
    raise InvalidConfigError(f"unknown method {method!r}")


def exp_fit(
    x,
    y,
    method: str = "gna",
    init=(1.0, 1.0, 0.0),
    lam: float = 1e-3,
    max_iters: int = 200,
    tol: float = 1e-12,
    cond_limit: float = 1e12,
) -> ExpFitResult:
    """Fit ``a exp(b x) + c`` to data. Failures are reported through ``status``.

    ``unstable`` means five consecutive loss increases or a parameter above
    1e10 in magnitude; ``singular`` means the normal matrix could not be
    solved reliably; ``stalled`` means the iteration budget ran out.
    """
    if method not in EXP_METHODS:
        raise InvalidConfigError(f"unknown method {method!r}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 3 or x.shape != y.shape:
        raise InvalidConfigError("need at least three (x, y) pairs")
    beta = np.asarray(init, dtype=np.float64).copy()
    prev = np.inf
    rises = 0

    def result(status, it):
        return ExpFitResult(float(beta[0]), float(beta[1]), float(beta[2]), status, it)

    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, max_iters + 1):
            r = y - exp_model(beta, x)
            J = exp_jacobian(beta, x)
            if not (np.all(np.isfinite(r)) and np.all(np.isfinite(J))):
                return result("unstable", it)
            loss = float(r @ r)
            rises = rises + 1 if loss > prev else 0
            prev = loss
            if rises >= 5:
                return result("unstable", it)
            M, g = exp_step(method, J, r, beta, lam)
            cond = np.linalg.cond(M) if np.all(np.isfinite(M)) else np.inf
            if not np.isfinite(cond) or cond > cond_limit:
                return result("singular", it)
            delta = np.linalg.solve(M, g)
            beta = beta + delta
            if not np.all(np.isfinite(beta)) or np.max(np.abs(beta)) > 1e10:
                return result("unstable", it)
            if np.linalg.norm(delta) < tol:
                return result("converged", it)
    return result("stalled", max_iters)


def exact_exp_params(problem: SteadyAdvDiff):
    """(a, b, c) with ``a exp(b x) + c`` equal to the exact steady solution.

    Only finite when ``exp(c L / eps)`` is representable.
    """
    p = problem
    r = p.c / p.eps
    L = p.x_right - p.x_left
    den = np.expm1(r * L)
    a = (p.u_right - p.u_left) / den * np.exp(-r * p.x_left)
    return float(a), float(r), float(p.u_left - (p.u_right - p.u_left) / den)
