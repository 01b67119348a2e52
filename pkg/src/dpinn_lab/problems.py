"""Benchmark PDEs, exact solutions and classical finite-difference baselines.

Three problems are covered: steady advection-diffusion ``c u' = eps u''`` with
Dirichlet data, unsteady linear advection ``u_t + C u_x = 0`` and the viscous
Burgers equation ``u_t + u u_x = eps u_xx``. Residuals are written so that a
perfect solution gives zero; for the steady problem that is
``eps u'' - c u'``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import DegenerateProblemError, DomainError, InvalidInputError, SolverError


@dataclass(frozen=True)
class SquarePulse:
    center: float = 0.3
    width: float = 0.2
    height: float = 1.0
    kind: str = field(default="square-pulse", init=False)

    def __post_init__(self):
        if not self.width > 0:
            raise InvalidInputError("pulse width must be positive")

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        lo = self.center - 0.5 * self.width
        hi = self.center + 0.5 * self.width
        # half-open edges so the profile is a well-defined function
        return np.where((x >= lo) & (x < hi), self.height, 0.0)


@dataclass(frozen=True)
class Heaviside:
    jump: float = 0.5
    height: float = 1.0
    kind: str = field(default="heaviside", init=False)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(x >= self.jump, self.height, 0.0)


Profile = Union[SquarePulse, Heaviside]


@dataclass(frozen=True)
class SteadyAdvDiff:
    c: float = 1.0
    eps: float = 0.1
    x_left: float = 0.0
    x_right: float = 1.0
    u_left: float = 0.0
    u_right: float = 1.0

    dim = 1
    kind = "steady"

    def __post_init__(self):
        vals = (self.c, self.eps, self.x_left, self.x_right, self.u_left, self.u_right)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError("problem coefficients must be finite")
        if not self.x_left < self.x_right:
            raise InvalidInputError("x_left must be below x_right")

    @property
    def x_domain(self):
        return (self.x_left, self.x_right)

    @property
    def t_domain(self):
        return None


@dataclass(frozen=True)
class UnsteadyAdvection:
    speed: float = 0.1
    x_left: float = 0.0
    x_right: float = 1.0
    t_start: float = 0.0
    t_end: float = 1.0
    initial_profile: Profile = field(default_factory=SquarePulse)

    dim = 2
    kind = "advection"

    def __post_init__(self):
        if not (self.x_left < self.x_right and self.t_start < self.t_end):
            raise InvalidInputError("space-time domain must be non-degenerate")

    @property
    def x_domain(self):
        return (self.x_left, self.x_right)

    @property
    def t_domain(self):
        return (self.t_start, self.t_end)


@dataclass(frozen=True)
class Burgers:
    eps: float = 0.01
    x_left: float = 0.0
    x_right: float = 1.0
    t_start: float = 0.0
    t_end: float = 1.0
    initial_profile: Profile = field(default_factory=SquarePulse)
    u_left: float = 0.0
    u_right: float = 0.0

    dim = 2
    kind = "burgers"

    def __post_init__(self):
        if not (self.x_left < self.x_right and self.t_start < self.t_end):
            raise InvalidInputError("space-time domain must be non-degenerate")

    @property
    def x_domain(self):
        return (self.x_left, self.x_right)

    @property
    def t_domain(self):
        return (self.t_start, self.t_end)


Problem = Union[SteadyAdvDiff, UnsteadyAdvection, Burgers]


# ---------------------------------------------------------------------------
# exact solutions


def _steady_shape(r, s, length):
    """(exp(r s) - 1) / (exp(r L) - 1) without overflow; r = c/eps."""
    if r == 0.0:
        return s / length
    if r > 0.0:
        return np.exp(r * (s - length)) * np.expm1(-r * s) / np.expm1(-r * length)
    return np.expm1(r * s) / np.expm1(r * length)


def exact_steady(p: SteadyAdvDiff, x):
    """Exact solution of the steady problem; accepts scalars or arrays."""
    if p.eps == 0.0:
        raise DegenerateProblemError("eps = 0 has no diffusive solution")
    xa = np.asarray(x, dtype=np.float64)
    if np.any(xa < p.x_left) or np.any(xa > p.x_right):
        raise DomainError("x outside the problem domain")
    f = _steady_shape(p.c / p.eps, xa - p.x_left, p.x_right - p.x_left)
    u = p.u_left * (1.0 - f) + p.u_right * f
    return float(u) if np.ndim(u) == 0 else u


def exact_unsteady(p: UnsteadyAdvection, x, t):
    """Solution by characteristics: the initial profile shifted by speed * elapsed time."""
    xa = np.asarray(x, dtype=np.float64)
    ta = np.asarray(t, dtype=np.float64)
    if (np.any(xa < p.x_left) or np.any(xa > p.x_right)
            or np.any(ta < p.t_start) or np.any(ta > p.t_end)):
        raise DomainError("point outside the space-time domain")
    u = p.initial_profile(xa - p.speed * (ta - p.t_start))
    return float(u) if np.ndim(u) == 0 else u


def exact(p: Problem, x, t=None):
    """Exact solution where one exists, otherwise ``None``."""
    if isinstance(p, SteadyAdvDiff):
        return exact_steady(p, x)
    if isinstance(p, UnsteadyAdvection):
        return exact_unsteady(p, x, t)
    return None


def has_exact(p: Problem) -> bool:
    return not isinstance(p, Burgers)


def boundary_value(p: Problem, side: str, t=None):
    """Dirichlet data at the left or right boundary (time-dependent for unsteady problems)."""
    xb = p.x_left if side == "left" else p.x_right
    if isinstance(p, SteadyAdvDiff):
        return p.u_left if side == "left" else p.u_right
    if isinstance(p, UnsteadyAdvection):
        return exact_unsteady(p, np.full_like(np.asarray(t, dtype=float), xb), t)
    val = p.u_left if side == "left" else p.u_right
    return np.full_like(np.asarray(t, dtype=float), val)


def initial_value(p: Problem, x):
    return p.initial_profile(x)


# ---------------------------------------------------------------------------
# residual and flux


def residual(p: Problem, jet, eps: Optional[float] = None):
    """PDE residual from a jet (``NetJet`` or batched ``Jets``).

    ``eps`` overrides the problem diffusivity (used by eps-continuation).
    """
    v, dx, dxx, dt = _jet_parts(jet)
    if isinstance(p, SteadyAdvDiff):
        e = p.eps if eps is None else eps
        return e * dxx - p.c * dx
    if isinstance(p, UnsteadyAdvection):
        return dt + p.speed * dx
    e = p.eps if eps is None else eps
    return dt + v * dx - e * dxx


def residual_coeffs(p: Problem, jet, eps: Optional[float] = None) -> dict:
    """Partial derivatives of :func:`residual` with respect to each jet entry."""
    v, dx, _, _ = _jet_parts(jet)
    if isinstance(p, SteadyAdvDiff):
        e = p.eps if eps is None else eps
        return {"xx": e, "x": -p.c}
    if isinstance(p, UnsteadyAdvection):
        return {"t": 1.0, "x": p.speed}
    e = p.eps if eps is None else eps
    return {"t": 1.0, "v": dx, "x": v, "xx": -e}


def flux(p: Problem, jet, eps: Optional[float] = None):
    """Flux whose x-derivative is the residual.

    Steady: ``eps u' - c u``; advection: ``C u``; Burgers: ``u^2/2 - eps u_x``
    (the time-derivative part has no local flux and is left out).
    """
    v, dx, _, _ = _jet_parts(jet)
    if isinstance(p, SteadyAdvDiff):
        e = p.eps if eps is None else eps
        return e * dx - p.c * v
    if isinstance(p, UnsteadyAdvection):
        return p.speed * v
    e = p.eps if eps is None else eps
    return 0.5 * v * v - e * dx


def flux_coeffs(p: Problem, jet, eps: Optional[float] = None) -> dict:
    v, _, _, _ = _jet_parts(jet)
    if isinstance(p, SteadyAdvDiff):
        e = p.eps if eps is None else eps
        return {"x": e, "v": -p.c}
    if isinstance(p, UnsteadyAdvection):
        return {"v": p.speed}
    e = p.eps if eps is None else eps
    return {"x": -e, "v": v}


def _jet_parts(jet):
    if hasattr(jet, "value"):
        return jet.value, jet.d_dx, jet.d2_dx2, jet.d_dt
    zero = 0.0
    return (
        jet.v,
        zero if jet.x is None else jet.x,
        zero if jet.xx is None else jet.xx,
        zero if jet.t is None else jet.t,
    )


def needs_second_derivative(p: Problem) -> bool:
    return not isinstance(p, UnsteadyAdvection)


def peclet(c: float, dx: float, eps: float) -> float:
    """Cell Peclet number c*dx/eps."""
    if c == 0:
        return 0.0
    if eps == 0:
        raise DegenerateProblemError("Peclet number undefined for eps = 0")
    return c * dx / eps


# ---------------------------------------------------------------------------
# finite-difference baselines


@dataclass(frozen=True)
class FDSolution:
    grid: np.ndarray
    values: np.ndarray
    scheme: str

    def __post_init__(self):
        if self.grid.shape != self.values.shape:
            raise InvalidInputError("grid and values differ in length")


def thomas(lower, diag, upper, rhs):
    """Solve a tridiagonal system by forward elimination and back substitution.

    ``lower[i]`` multiplies ``u[i-1]`` and ``upper[i]`` multiplies ``u[i+1]`` in row i.
    """
    n = len(diag)
    cp = np.zeros(n)
    dp = np.zeros(n)
    den = diag[0]
    if den == 0.0:
        raise SolverError("zero pivot in tridiagonal solve")
    cp[0] = upper[0] / den
    dp[0] = rhs[0] / den
    for i in range(1, n):
        den = diag[i] - lower[i] * cp[i - 1]
        if den == 0.0 or not math.isfinite(den):
            raise SolverError("singular tridiagonal system")
        cp[i] = upper[i] / den if i < n - 1 else 0.0
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / den
    u = np.zeros(n)
    u[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        u[i] = dp[i] - cp[i] * u[i + 1]
    return u


def _fd_solve(p: SteadyAdvDiff, n_cells: int, eps: float, upwind: bool, scheme: str):
    if n_cells < 2:
        raise InvalidInputError("need at least 2 cells")
    if eps == 0.0:
        raise DegenerateProblemError("eps = 0")
    grid = np.linspace(p.x_left, p.x_right, n_cells + 1)
    h = (p.x_right - p.x_left) / n_cells
    m = n_cells - 1
    d = eps / h**2
    if upwind:
        a = p.c / h
        if p.c >= 0:
            # c (u_i - u_{i-1})/h = eps (u_{i+1} - 2u_i + u_{i-1})/h^2
            lo, di, up = -d - a, 2 * d + a, -d
        else:
            lo, di, up = -d, 2 * d - a, -d + a
    else:
        a = p.c / (2 * h)
        lo, di, up = -d - a, 2 * d, -d + a
    lower = np.full(m, lo)
    diag = np.full(m, di)
    upper = np.full(m, up)
    rhs = np.zeros(m)
    rhs[0] -= lo * p.u_left
    rhs[-1] -= up * p.u_right
    inner = thomas(lower, diag, upper, rhs)
    values = np.concatenate([[p.u_left], inner, [p.u_right]])
    return FDSolution(grid, values, scheme)


def cds_solve(p: SteadyAdvDiff, n_cells: int) -> FDSolution:
    """Central differences for both terms; oscillates once the cell Peclet number exceeds 2."""
    return _fd_solve(p, n_cells, p.eps, upwind=False, scheme="CDS")


def uds_solve(p: SteadyAdvDiff, n_cells: int) -> FDSolution:
    """First-order upwind advection, central diffusion. Monotone for every Peclet number."""
    return _fd_solve(p, n_cells, p.eps, upwind=True, scheme="UDS")


def artificial_diffusion(a: float, b: float, dx: float) -> float:
    """Extra diffusivity that makes central differencing nodally exact for ``a u'' = b u'``."""
    if a == 0:
        raise DegenerateProblemError("diffusivity must be nonzero")
    pe = b * dx / a
    if abs(pe) < 1e-4:
        return a * pe * pe / 12.0
    half = 0.5 * pe
    return a * (half / math.tanh(half) - 1.0)


def artificial_diffusion_expanded(a: float, b: float, dx: float) -> float:
    """The same quantity written with raw exponentials (overflows for large Peclet numbers)."""
    pe = b * dx / a
    ep, em = math.exp(pe), math.exp(-pe)
    return a / (ep + em - 2.0) * (0.5 * pe * (ep - em) - (ep + em - 2.0))


def cds_artificial_solve(p: SteadyAdvDiff, n_cells: int) -> FDSolution:
    h = (p.x_right - p.x_left) / n_cells
    eps_star = p.eps + artificial_diffusion(p.eps, p.c, h)
    return _fd_solve(p, n_cells, eps_star, upwind=False, scheme="CDS+artificial-diffusion")
