"""Gradient-descent style optimizers and the damped least-squares (Levenberg-Marquardt) update.

Steppers are pure: they take a state and parameters and return new ones.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import DivergedTrainingError, InvalidConfigError, SingularSystemError

FIRST_ORDER = ("gd", "adagrad", "adam")
OPTIMIZERS = FIRST_ORDER + ("lma",)


@dataclass(frozen=True)
class OptimizerState:
    tag: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    accum: Optional[np.ndarray] = None
    step: int = 0
    mu: float = 1e-3
    nu: float = 10.0
    max_escalations: int = 30

    def __post_init__(self):
        if self.tag not in OPTIMIZERS:
            raise InvalidConfigError(f"unknown optimizer {self.tag!r}")
        if self.tag == "lma" and self.mu < 0:
            raise InvalidConfigError("damping must be nonnegative")


def init_state(tag: str, n_params: int, lr: float = 1e-3, **kw) -> OptimizerState:
    state = OptimizerState(tag=tag, lr=lr, **kw)
    if tag == "adam":
        return replace(state, m=np.zeros(n_params), v=np.zeros(n_params))
    if tag == "adagrad":
        return replace(state, accum=np.zeros(n_params))
    return state


def step_first_order(state: OptimizerState, params: np.ndarray, grad: np.ndarray):
    """One GD, Adagrad or Adam step. Returns ``(new_params, new_state)``."""
    if params.shape != grad.shape:
        raise ValueError("parameter and gradient shapes differ")
    if not np.all(np.isfinite(grad)):
        raise DivergedTrainingError("non-finite gradient")
    if state.tag == "gd":
        return params - state.lr * grad, replace(state, step=state.step + 1)
    if state.tag == "adagrad":
        accum = state.accum + grad * grad
        new = params - state.lr * grad / np.sqrt(accum + state.delta)
        return new, replace(state, accum=accum, step=state.step + 1)
    if state.tag == "adam":
        k = state.step + 1
        m = state.beta1 * state.m + (1.0 - state.beta1) * grad
        v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
        m_hat = m / (1.0 - state.beta1**k)
        v_hat = v / (1.0 - state.beta2**k)
        new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.delta)
        return new, replace(state, m=m, v=v, step=k)
    raise InvalidConfigError(f"{state.tag!r} is not a first-order optimizer")


def damped_step(J: np.ndarray, e: np.ndarray, mu: float, cond_limit: float = 1e14):
    """Solve ``(J^T J + mu I) d = J^T e``; raises SingularSystemError when it cannot."""
    A = J.T @ J + mu * np.eye(J.shape[1])
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > cond_limit:
        raise SingularSystemError("damped normal matrix is singular")
    return np.linalg.solve(A, J.T @ e)


def step_lma(
    state: OptimizerState,
    params: np.ndarray,
    residual: np.ndarray,
    jacobian: np.ndarray,
    residual_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
):
    """Levenberg-Marquardt update ``w - (J^T J + mu I)^-1 J^T e``.

    With ``residual_fn`` the damping adapts: a step that lowers the residual
    norm is accepted and mu is divided by nu; otherwise mu is multiplied by nu
    and the step retried. A normal matrix that stays singular through all
    escalations raises :class:`SingularSystemError`.

    Returns ``(new_params, new_state)``.
    """
    if jacobian.shape != (residual.size, params.size):
        raise ValueError("Jacobian shape does not match residual and parameters")
    if not (np.all(np.isfinite(residual)) and np.all(np.isfinite(jacobian))):
        raise DivergedTrainingError("non-finite residual or Jacobian")
    mu = state.mu
    if residual_fn is None:
        step = damped_step(jacobian, residual, mu)
        return params - step, replace(state, step=state.step + 1)
    base = float(residual @ residual)
    singular = True
    for _ in range(state.max_escalations):
        try:
            step = damped_step(jacobian, residual, mu)
            singular = False
        except SingularSystemError:
            mu = mu * state.nu if mu > 0 else 1e-8
            continue
        trial = params - step
        e_new = residual_fn(trial)
        if np.all(np.isfinite(e_new)) and float(e_new @ e_new) < base:
            return trial, replace(state, mu=mu / state.nu, step=state.step + 1)
        mu = mu * state.nu if mu > 0 else 1e-8
    if singular:
        raise SingularSystemError("J^T J + mu I stayed singular under damping escalation")
    # no decrease found: keep parameters, carry the escalated damping forward
    return params.copy(), replace(state, mu=mu, step=state.step + 1)
