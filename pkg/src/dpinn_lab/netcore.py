"""Small feed-forward networks with exact input derivatives and parameter gradients.

Networks are evaluated on batches of points together with their derivatives
with respect to the inputs (d/dx, d2/dx2 and d/dt). Parameter gradients of any
loss built from those quantities come from a hand-written reverse pass through
the derivative propagation, so no autodiff framework is involved.

Several networks of identical architecture can be evaluated at once ("stacked"
evaluation): weights are arrays of shape ``(B, out, in)`` and points
``(B, P, d)``, one leading slot per network. The single-network API below is a
thin layer on top of it.

Flattening order of a network's parameters: for each layer in order, the weight
matrix in row-major order followed by the bias vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DivergedEvaluationError,
    InvalidArchitectureError,
    InvalidInputError,
    UnsupportedArchitectureError,
)

ACTIVATIONS = ("tanh", "sigmoid", "softplus", "log-sigmoid", "arctan", "exponent")
# exponent is usable but left out of default sweeps
DEFAULT_SWEEP_ACTIVATIONS = ("tanh", "sigmoid", "softplus", "log-sigmoid", "arctan")

JET_KEYS = ("v", "x", "xx", "t")


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def activation_derivatives(tag: str, a: np.ndarray):
    """Return the activation and its first three derivatives at ``a``."""
    if tag == "tanh":
        f = np.tanh(a)
        d1 = 1.0 - f * f
        d2 = -2.0 * f * d1
        d3 = -2.0 * d1 * d1 - 2.0 * f * d2
    elif tag == "sigmoid":
        f = _sigmoid(a)
        d1 = f * (1.0 - f)
        d2 = d1 * (1.0 - 2.0 * f)
        d3 = d2 * (1.0 - 2.0 * f) - 2.0 * d1 * d1
    elif tag == "softplus":
        f = np.logaddexp(0.0, a)
        s = _sigmoid(a)
        d1 = s
        d2 = s * (1.0 - s)
        d3 = d2 * (1.0 - 2.0 * s)
    elif tag == "log-sigmoid":
        f = -np.logaddexp(0.0, -a)
        s = _sigmoid(a)
        d1 = 1.0 - s
        d2 = -s * (1.0 - s)
        d3 = d2 * (1.0 - 2.0 * s)
    elif tag == "arctan":
        f = np.arctan(a)
        q = 1.0 / (1.0 + a * a)
        d1 = q
        d2 = -2.0 * a * q * q
        d3 = (6.0 * a * a - 2.0) * q * q * q
    elif tag == "exponent":
        f = np.exp(a)
        d1 = d2 = d3 = f
    else:
        raise InvalidArchitectureError(f"unknown activation {tag!r}")
    return f, d1, d2, d3


def check_widths(layer_widths: Sequence[int]) -> tuple:
    widths = tuple(int(w) for w in layer_widths)
    if len(widths) < 2 or any(w <= 0 for w in widths):
        raise InvalidArchitectureError(f"invalid layer widths {layer_widths!r}")
    if widths[0] not in (1, 2):
        raise InvalidArchitectureError("input width must be 1 (x) or 2 (x, t)")
    if widths[-1] != 1:
        raise InvalidArchitectureError("output width must be 1")
    return widths


def param_count(layer_widths: Sequence[int]) -> int:
    w = tuple(layer_widths)
    return sum(w[i + 1] * w[i] + w[i + 1] for i in range(len(w) - 1))


@dataclass(frozen=True)
class NetJet:
    value: float
    d_dx: float
    d2_dx2: float
    d_dt: float = 0.0


@dataclass
class Jets:
    """Batched jets: value and input derivatives at a set of points.

    Entries that were not requested are ``None``.
    """

    v: np.ndarray
    x: Optional[np.ndarray] = None
    xx: Optional[np.ndarray] = None
    t: Optional[np.ndarray] = None

    def get(self, key):
        return getattr(self, key)


@dataclass(frozen=True, eq=False)
class DenseNet:
    layer_widths: tuple
    weights: tuple
    biases: tuple
    activation: str = "tanh"

    def __post_init__(self):
        widths = check_widths(self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if self.activation not in ACTIVATIONS:
            raise InvalidArchitectureError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise InvalidArchitectureError("layer count does not match widths")
        ws, bs = [], []
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            W = np.array(W, dtype=np.float64)
            b = np.array(b, dtype=np.float64).reshape(-1)
            if W.shape != (widths[i + 1], widths[i]) or b.shape != (widths[i + 1],):
                raise InvalidArchitectureError(f"layer {i} has inconsistent shapes")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise InvalidArchitectureError("non-finite parameter")
            W.setflags(write=False)
            b.setflags(write=False)
            ws.append(W)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def n_params(self) -> int:
        return param_count(self.layer_widths)

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    def __eq__(self, other):
        if not isinstance(other, DenseNet):
            return NotImplemented
        return (
            self.layer_widths == other.layer_widths
            and self.activation == other.activation
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )

    __hash__ = None


def flatten(net: DenseNet) -> np.ndarray:
    parts = []
    for W, b in zip(net.weights, net.biases):
        parts.append(W.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten(flat, layer_widths, activation="tanh") -> DenseNet:
    widths = check_widths(layer_widths)
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (param_count(widths),):
        raise InvalidArchitectureError(
            f"expected {param_count(widths)} parameters, got {flat.shape}"
        )
    layers = stack_layers(flat[None, :], widths)
    return DenseNet(
        widths,
        tuple(W[0].copy() for W, _ in layers),
        tuple(b[0].copy() for _, b in layers),
        activation,
    )


def init_random(layer_widths, activation="tanh", seed=0) -> DenseNet:
    """Uniform initialization on [-1, 1] scaled by 1/sqrt(fan_in), biases included."""
    widths = check_widths(layer_widths)
    rng = np.random.default_rng(int(seed) % 2**64)
    ws, bs = [], []
    for i in range(len(widths) - 1):
        scale = 1.0 / np.sqrt(widths[i])
        ws.append(rng.uniform(-1.0, 1.0, (widths[i + 1], widths[i])) * scale)
        bs.append(rng.uniform(-1.0, 1.0, widths[i + 1]) * scale)
    return DenseNet(widths, tuple(ws), tuple(bs), activation)


# ---------------------------------------------------------------------------
# stacked evaluation


def stack_layers(theta: np.ndarray, layer_widths) -> list:
    """Views ``[(W, b), ...]`` into a ``(B, n_params)`` parameter block."""
    B = theta.shape[0]
    layers = []
    off = 0
    for i in range(len(layer_widths) - 1):
        n_in, n_out = layer_widths[i], layer_widths[i + 1]
        W = theta[:, off : off + n_out * n_in].reshape(B, n_out, n_in)
        off += n_out * n_in
        b = theta[:, off : off + n_out]
        off += n_out
        layers.append((W, b))
    return layers


def flatten_grads(grads, per_point=False) -> np.ndarray:
    parts = []
    for dW, db in grads:
        lead = dW.shape[:2] if per_point else dW.shape[:1]
        parts.append(dW.reshape(*lead, -1))
        parts.append(db)
    return np.concatenate(parts, axis=-1)


class StackForward:
    """Forward jet propagation through B networks, keeping what the reverse pass needs.

    ``order`` is 0 (values only), 1 (first derivatives) or 2 (plus d2/dx2).
    """

    def __init__(self, layers, activation, X, order=2):
        self.layers = layers
        self.activation = activation
        self.X = X
        self.order = order
        d = X.shape[-1]
        self.has_t = d == 2 and order >= 1
        self.has_x = order >= 1
        self.has_xx = order >= 2
        self.caches = []
        n = len(layers)
        h = hx = ht = hxx = None
        for l, (W, b) in enumerate(layers):
            if l == 0:
                a = np.matmul(X, W.transpose(0, 2, 1)) + b[:, None, :]
                ax = W[:, None, :, 0] if self.has_x else None
                at = W[:, None, :, 1] if self.has_t else None
                axx = None
            else:
                Wt = W.transpose(0, 2, 1)
                a = np.matmul(h, Wt) + b[:, None, :]
                ax = np.matmul(hx, Wt) if self.has_x else None
                at = np.matmul(ht, Wt) if self.has_t else None
                axx = np.matmul(hxx, Wt) if self.has_xx else None
            if l == n - 1:
                self.caches.append(dict(h=h, hx=hx, ht=ht, hxx=hxx))
                self.out = Jets(
                    a[..., 0],
                    None if ax is None else np.broadcast_to(ax, a.shape)[..., 0],
                    None if not self.has_xx else (
                        np.zeros(a.shape[:2]) if axx is None else axx[..., 0]
                    ),
                    None if at is None else np.broadcast_to(at, a.shape)[..., 0],
                )
                break
            f0, f1, f2, f3 = activation_derivatives(activation, a)
            cache = dict(h=h, hx=hx, ht=ht, hxx=hxx, a=a, ax=ax, at=at, axx=axx,
                         f1=f1, f2=f2, f3=f3)
            self.caches.append(cache)
            h = f0
            if self.has_x:
                hx = f1 * ax
            if self.has_t:
                ht = f1 * at
            if self.has_xx:
                hxx = f2 * ax * ax
                if axx is not None:
                    hxx = hxx + f1 * axx

    def backward(self, adj: dict, per_point=False) -> list:
        """Parameter gradients for output-jet adjoints ``adj`` (keys v, x, xx, t).

        With ``per_point`` the gradients are not summed over points and carry a
        ``(B, P, ...)`` leading shape.
        """
        B, P, d = self.X.shape
        n = len(self.layers)

        def col(key):
            g = adj.get(key)
            if g is None:
                return None
            return np.broadcast_to(g, (B, P))[..., None]

        a_v, a_x, a_t, a_xx = col("v"), col("x"), col("t"), col("xx")
        if a_v is None:
            a_v = np.zeros((B, P, 1))
        if not self.has_x:
            a_x = None
        if not self.has_t:
            a_t = None
        if not self.has_xx:
            a_xx = None

        if per_point:
            def outer(u, w):
                return u[..., :, None] * w[..., None, :]

            def psum(u):
                return u
        else:
            def outer(u, w):
                if w.shape[1] == 1 and u.shape[1] != 1:
                    return u.sum(axis=1)[:, :, None] * w[:, 0, None, :]
                return np.matmul(u.transpose(0, 2, 1), w)

            def psum(u):
                return u.sum(axis=1)

        grads = [None] * n
        for l in range(n - 1, -1, -1):
            W, _ = self.layers[l]
            c = self.caches[l]
            if l == 0:
                dW = outer(a_v, self.X)
                if a_x is not None:
                    dW[..., 0] += psum(a_x)
                if a_t is not None:
                    dW[..., 1] += psum(a_t)
                grads[0] = (dW, psum(a_v))
                break
            dW = outer(a_v, c["h"])
            if a_x is not None:
                dW = dW + outer(a_x, c["hx"])
            if a_t is not None:
                dW = dW + outer(a_t, c["ht"])
            if a_xx is not None:
                dW = dW + outer(a_xx, c["hxx"])
            grads[l] = (dW, psum(a_v))
            hv = np.matmul(a_v, W)
            hx = None if a_x is None else np.matmul(a_x, W)
            ht = None if a_t is None else np.matmul(a_t, W)
            hxx = None if a_xx is None else np.matmul(a_xx, W)
            p = self.caches[l - 1]
            f1, f2, f3 = p["f1"], p["f2"], p["f3"]
            new_v = hv * f1
            if hx is not None:
                new_v = new_v + hx * f2 * p["ax"]
            if ht is not None:
                new_v = new_v + ht * f2 * p["at"]
            if hxx is not None:
                curv = f3 * p["ax"] * p["ax"]
                if p["axx"] is not None:
                    curv = curv + f2 * p["axx"]
                new_v = new_v + hxx * curv
            new_x = None
            if hx is not None:
                new_x = hx * f1
            if hxx is not None:
                curv_x = 2.0 * hxx * f2 * p["ax"]
                new_x = curv_x if new_x is None else new_x + curv_x
            a_v = new_v
            a_x = new_x
            a_t = None if ht is None else ht * f1
            a_xx = None if hxx is None else hxx * f1
        return grads


# ---------------------------------------------------------------------------
# single-network API


def _points_array(net: DenseNet, x, t=None) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if net.input_dim == 1:
        if t is not None:
            raise InvalidInputError("network takes x only; t was given")
        return x.reshape(1, -1, 1)
    if t is None:
        raise InvalidInputError("network takes (x, t); t is missing")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), x.shape)
    return np.stack([x, t], axis=-1).reshape(1, -1, 2)


def _stack_of(net: DenseNet):
    return stack_layers(flatten(net)[None, :], net.layer_widths)


def evaluate(net: DenseNet, x: float, t: Optional[float] = None) -> NetJet:
    """Value and exact input derivatives of ``net`` at one point."""
    if np.ndim(x) != 0 or (t is not None and np.ndim(t) != 0):
        raise InvalidInputError("evaluate takes scalar coordinates; use evaluate_batch")
    jets = evaluate_batch(net, x, t)
    return NetJet(
        float(jets.v[0]), float(jets.x[0]), float(jets.xx[0]),
        0.0 if jets.t is None else float(jets.t[0]),
    )


def evaluate_batch(net: DenseNet, x, t=None, order=2) -> Jets:
    X = _points_array(net, x, t)
    fw = StackForward(_stack_of(net), net.activation, X, order)
    o = fw.out
    return Jets(o.v[0], None if o.x is None else o.x[0],
                None if o.xx is None else o.xx[0], None if o.t is None else o.t[0])


def loss_gradient(
    net: DenseNet,
    points,
    loss: Callable[[Jets], tuple],
    term: str = "loss",
) -> np.ndarray:
    """Gradient of a scalar loss of the network jets with respect to all parameters.

    ``points`` is an array of x values, shape ``(P,)``, or ``(P, 2)`` rows of
    (x, t). ``loss(jets)`` returns ``(value, adjoints)`` where ``adjoints`` maps
    jet keys (``v``, ``x``, ``xx``, ``t``) to the partial derivatives of the
    loss with respect to that jet entry at each point.

    Returns the gradient in the flattening order of :func:`flatten`.
    """
    X = _batch_points(net, points)
    fw = StackForward(_stack_of(net), net.activation, X, order=2)
    o = fw.out
    value, adj = loss(Jets(o.v[0], o.x[0], o.xx[0], None if o.t is None else o.t[0]))
    if not np.isfinite(value):
        raise DivergedEvaluationError(term)
    adj = {k: None if v is None else np.asarray(v, dtype=np.float64)[None, :]
           for k, v in adj.items()}
    return flatten_grads(fw.backward(adj))[0]


def _batch_points(net, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if net.input_dim == 1:
        if pts.ndim == 2 and pts.shape[1] != 1:
            raise InvalidInputError("network takes x only")
        return pts.reshape(1, -1, 1)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInputError("network takes (x, t) rows")
    return pts.reshape(1, -1, 2)


def jet_jacobians(net: DenseNet, points, order=2) -> dict:
    """Per-point Jacobians of each jet entry with respect to the parameters.

    Returns a dict mapping jet keys to arrays of shape ``(P, n_params)``.
    """
    X = _batch_points(net, points)
    fw = StackForward(_stack_of(net), net.activation, X, order)
    out = {}
    for key in JET_KEYS:
        if fw.out.get(key) is None:
            continue
        g = fw.backward({key: np.ones(X.shape[:2])}, per_point=True)
        out[key] = flatten_grads(g, per_point=True)[0]
    return out


def residual_jacobian(net: DenseNet, points, residual: Callable[[Jets], tuple]):
    """Residual vector and its exact Jacobian with respect to the parameters.

    ``residual(jets)`` returns ``(e, coeffs)``: ``e`` has shape ``(R,)`` and
    ``coeffs`` maps jet keys to ``(R, P)`` matrices of partial derivatives of
    each residual entry with respect to that jet entry at each point.

    Only single-hidden-layer networks are supported; the damped least-squares
    update that consumes this Jacobian is restricted to them.
    """
    if len(net.layer_widths) != 3:
        raise UnsupportedArchitectureError(
            "residual Jacobians are limited to single-hidden-layer networks"
        )
    X = _batch_points(net, points)
    fw = StackForward(_stack_of(net), net.activation, X, order=2)
    o = fw.out
    e, coeffs = residual(Jets(o.v[0], o.x[0], o.xx[0], None if o.t is None else o.t[0]))
    e = np.atleast_1d(np.asarray(e, dtype=np.float64))
    J = np.zeros((e.size, net.n_params))
    for key, C in coeffs.items():
        if C is None:
            continue
        g = fw.backward({key: np.ones(X.shape[:2])}, per_point=True)
        J += np.asarray(C, dtype=np.float64) @ flatten_grads(g, per_point=True)[0]
    return e, J
