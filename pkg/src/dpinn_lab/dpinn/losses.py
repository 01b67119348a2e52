"""Loss terms of the block model, their gradients and residual Jacobians.

Every term is a scaled sum of squared rows, ``s * sum(e**2)``. Each row is a
linear combination of trial-function jets at one or two points, so a single
description of the rows drives the loss value, its gradient (one reverse
pass per point group) and the dense Jacobian used by damped least squares.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .. import netcore
from ..errors import DivergedEvaluationError, SingularSystemError, UnsupportedArchitectureError
from ..problems import (
    boundary_value,
    flux,
    flux_coeffs,
    initial_value,
    needs_second_derivative,
    residual,
    residual_coeffs,
)
from .model import BlockModel, CollocationSet, PointGroup, eval_group

TERMS = ("f", "b", "i", "vm", "sm", "sdm", "fm")


@dataclass(frozen=True)
class LossBreakdown:
    l_f: float
    l_b: float
    l_i: float
    l_vm: float
    l_sm: float
    l_sdm: float
    l_fm: float
    l_reg: float
    total: float
    grad_norms: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        norms = d.pop("grad_norms")
        d.update({f"g_{k}": v for k, v in norms.items()})
        return d


@dataclass
class _Contrib:
    """Rows of a term touching one group: point ``pts[n]`` enters row ``rows[n]``
    through jet coefficients ``coeffs[key][n]``."""

    group: str
    pts: np.ndarray
    rows: np.ndarray
    coeffs: dict


@dataclass
class _Term:
    name: str
    e: np.ndarray
    scale: float
    contribs: list

    @property
    def value(self) -> float:
        return self.scale * float(np.sum(self.e * self.e))


def _flat(a, n):
    return np.broadcast_to(a, n).ravel() if np.ndim(a) else np.full(n, float(a)).ravel()


class LossEngine:
    """Loss evaluation for a fixed model structure and collocation set."""

    def __init__(self, model: BlockModel, colloc: CollocationSet):
        self.model = model
        self.colloc = colloc
        p = model.problem
        g = model.grid
        B = g.n_blocks
        w = model.weights
        self.unsteady = g.t_edges is not None
        self.groups = {}
        self.orders = {}
        allb = np.arange(B)
        order_col = 2 if (needs_second_derivative(p) and model.collocation_target == "residual") else 1
        self.groups["col"] = PointGroup(model, allb, colloc.points())
        self.orders["col"] = order_col

        nx = colloc.xs.shape[1]
        nrow = 1 if not self.unsteady else colloc.ts.shape[1]
        self.nrow = nrow
        ii = allb % g.nbx
        jj = allb // g.nbx
        left_x = np.repeat(g.x_edges[ii][:, None], nrow, axis=1)
        right_x = np.repeat(g.x_edges[ii + 1][:, None], nrow, axis=1)
        xe = np.concatenate([left_x, right_x], axis=1)
        if self.unsteady:
            trow = colloc.ts[jj]
            te = np.concatenate([trow, trow], axis=1)
            Xe = np.stack([xe, te], axis=-1)
        else:
            Xe = xe[..., None]
        self.groups["edge"] = PointGroup(model, allb, Xe)
        self.orders["edge"] = 2 if w.w_sdm > 0 else 1

        P_e = 2 * nrow
        # boundary rows (left boundary blocks, then right boundary blocks)
        lb = allb[ii == 0]
        rb = allb[ii == g.nbx - 1]
        self.b_left = (lb[:, None] * P_e + np.arange(nrow)[None, :]).ravel()
        self.b_right = (rb[:, None] * P_e + nrow + np.arange(nrow)[None, :]).ravel()
        if self.unsteady:
            tl = colloc.ts[lb // g.nbx].ravel()
            tr = colloc.ts[rb // g.nbx].ravel()
            self.g_left = np.asarray(boundary_value(p, "left", tl), dtype=np.float64)
            self.g_right = np.asarray(boundary_value(p, "right", tr), dtype=np.float64)
        else:
            self.g_left = np.full(self.b_left.size, float(boundary_value(p, "left")))
            self.g_right = np.full(self.b_right.size, float(boundary_value(p, "right")))

        # x-interfaces: right edge of block (i, j) against left edge of (i+1, j)
        lk = allb[ii < g.nbx - 1]
        self.if_a = (lk[:, None] * P_e + nrow + np.arange(nrow)[None, :]).ravel()
        self.if_b = ((lk + 1)[:, None] * P_e + np.arange(nrow)[None, :]).ravel()
        self.if_h = np.repeat((g.x_edges[ii + 1] - g.x_edges[ii])[lk], nrow)

        if self.unsteady:
            first = allb[jj == 0]
            Xi = np.stack([colloc.xs[first % g.nbx],
                           np.full((first.size, nx), g.t_edges[0])], axis=-1)
            self.groups["init"] = PointGroup(model, first, Xi)
            self.orders["init"] = 0
            self.u0 = np.asarray(initial_value(p, Xi[..., 0]), dtype=np.float64).ravel()
        self.use_tedge = self.unsteady and model.t_interfaces and g.nbt > 1
        if self.use_tedge:
            xs = colloc.xs[ii]
            bot = np.repeat(g.t_edges[jj][:, None], nx, axis=1)
            top = np.repeat(g.t_edges[jj + 1][:, None], nx, axis=1)
            Xt = np.stack([np.concatenate([xs, xs], 1), np.concatenate([bot, top], 1)], -1)
            self.groups["tedge"] = PointGroup(model, allb, Xt)
            self.orders["tedge"] = 0
            lower = allb[jj < g.nbt - 1]
            self.tf_a = (lower[:, None] * 2 * nx + nx + np.arange(nx)[None, :]).ravel()
            self.tf_b = ((lower + g.nbx)[:, None] * 2 * nx + np.arange(nx)[None, :]).ravel()

        self.m = colloc.points_per_block
        self.n_weights = sum(
            model.layer_widths[l] * model.layer_widths[l + 1]
            for l in range(len(model.layer_widths) - 1)
        ) * B

    # ------------------------------------------------------------------

    def _forward(self, theta):
        fws, psis = {}, {}
        for name, grp in self.groups.items():
            fws[name], psis[name] = eval_group(self.model, grp, self.orders[name], theta)
        return fws, psis

    def _terms(self, psis, eps):
        model = self.model
        p = model.problem
        norm = model.normalization
        terms = {}

        col = self.groups["col"]
        psi = psis["col"]
        B, m = psi.v.shape
        n = B * m
        pts = np.arange(n)
        if model.collocation_target == "flux":
            r = flux(p, psi, eps)
            cf = flux_coeffs(p, psi, eps)
            sres = 1.0
        else:
            r = residual(p, psi, eps)
            cf = residual_coeffs(p, psi, eps)
            sres = col.dx if norm else 1.0
        r = np.broadcast_to(r * sres, (B, m))
        coeffs = {k: _flat(c * sres, (B, m)) for k, c in cf.items()}
        terms["f"] = _Term("f", r.ravel(), 1.0 / (2.0 * self.m),
                           [_Contrib("col", pts, pts, coeffs)])

        edge = psis["edge"]
        ev = edge.v.ravel()
        e_b = np.concatenate([ev[self.b_left] - self.g_left, ev[self.b_right] - self.g_right])
        bpts = np.concatenate([self.b_left, self.b_right])
        terms["b"] = _Term("b", e_b, 0.5, [
            _Contrib("edge", bpts, np.arange(bpts.size), {"v": np.ones(bpts.size)})
        ])

        if self.unsteady:
            iv = psis["init"].v.ravel()
            k = iv.size
            terms["i"] = _Term("i", iv - self.u0, 0.5, [
                _Contrib("init", np.arange(k), np.arange(k), {"v": np.ones(k)})
            ])
        else:
            terms["i"] = _Term("i", np.zeros(0), 0.5, [])

        a, b = self.if_a, self.if_b
        nif = a.size
        rows = np.arange(nif)
        pts2 = np.concatenate([a, b])
        rows2 = np.concatenate([rows, rows])
        sign = np.concatenate([np.ones(nif), -np.ones(nif)])

        def match(key, factor):
            arr = edge.get(key)
            if arr is None or nif == 0:
                return np.zeros(0), []
            fl = arr.ravel()
            e = (fl[a] - fl[b]) * factor
            return e, [_Contrib("edge", pts2, rows2,
                                {key: sign * np.concatenate([factor, factor])})]

        one = np.ones(nif)
        e_vm, c_vm = match("v", one)
        if self.use_tedge:
            tv = psis["tedge"].v.ravel()
            e_t = tv[self.tf_a] - tv[self.tf_b]
            nt = e_t.size
            rt = nif + np.arange(nt)
            c_vm = c_vm + [_Contrib(
                "tedge", np.concatenate([self.tf_a, self.tf_b]), np.concatenate([rt, rt]),
                {"v": np.concatenate([np.ones(nt), -np.ones(nt)])},
            )]
            e_vm = np.concatenate([e_vm, e_t]) if e_vm.size else e_t
        terms["vm"] = _Term("vm", e_vm, 0.5, c_vm)
        h = self.if_h if norm else one
        e_sm, c_sm = match("x", h)
        terms["sm"] = _Term("sm", e_sm, 0.5, c_sm)
        if model.weights.w_sdm > 0:
            e_sdm, c_sdm = match("xx", h * h)
        else:
            e_sdm, c_sdm = np.zeros(0), []
        terms["sdm"] = _Term("sdm", e_sdm, 0.5, c_sdm)

        if nif and model.weights.w_fm > 0:
            fx = np.broadcast_to(flux(p, edge, eps), edge.v.shape).ravel()
            fc = flux_coeffs(p, edge, eps)
            e_fm = fx[a] - fx[b]
            cc = {}
            for key, c in fc.items():
                cflat = _flat(c, edge.v.shape)
                cc[key] = np.concatenate([cflat[a], -cflat[b]])
            terms["fm"] = _Term("fm", e_fm, 0.5, [_Contrib("edge", pts2, rows2, cc)])
        else:
            terms["fm"] = _Term("fm", np.zeros(0), 0.5, [])
        return terms

    def _reg(self, theta):
        model = self.model
        B = model.n_blocks
        Pn = model.n_net_params
        layers = netcore.stack_layers(theta[: B * Pn].reshape(B, Pn), model.layer_widths)
        val = 0.0
        for W, _ in layers:
            val += float(np.sum(W * W))
        return val / (2.0 * self.n_weights), layers

    def _reg_grad(self, layers):
        grads = [(W / self.n_weights, np.zeros_like(b)) for W, b in layers]
        return netcore.flatten_grads(grads)

    def _adjoints(self, terms, ebars):
        """Trial-jet adjoints per group for row adjoints ``ebars[name]``."""
        adj = {}
        for name, ebar in ebars.items():
            for c in terms[name].contribs:
                grp = self.groups[c.group]
                size = grp.eta.size
                d = adj.setdefault(c.group, {})
                w = ebar[c.rows]
                for key, coef in c.coeffs.items():
                    arr = d.get(key)
                    if arr is None:
                        arr = d[key] = np.zeros(size)
                    np.add.at(arr, c.pts, coef * w)
        return adj

    def _backprop(self, fws, adj, theta):
        model = self.model
        B = model.n_blocks
        Pn = model.n_net_params
        gblock = np.zeros((B, Pn))
        gaux = np.zeros(model.n_aux)
        for gname, d in adj.items():
            grp = self.groups[gname]
            shape = grp.eta.shape
            d = {k: v.reshape(shape) for k, v in d.items()}
            raw = grp.trial_backward(model, d, gaux)
            local = grp.raw_adjoint_to_local(raw)
            g = netcore.flatten_grads(fws[gname].backward(local))
            if grp.all_blocks:
                gblock += g
            else:
                np.add.at(gblock, grp.idx, g)
        return np.concatenate([gblock.ravel(), gaux])

    # ------------------------------------------------------------------

    def evaluate(self, theta=None, eps: Optional[float] = None, grad: bool = True,
                 term_grads: bool = False):
        """Loss breakdown and (optionally) the gradient of the total loss."""
        # overflow surfaces as DivergedEvaluationError, not as a warning
        with np.errstate(over="ignore", invalid="ignore"):
            return self._evaluate(theta, eps, grad, term_grads)

    def _evaluate(self, theta, eps, grad, term_grads):
        model = self.model
        theta = model.params if theta is None else theta
        w = model.weights
        fws, psis = self._forward(theta)
        terms = self._terms(psis, eps)
        vals = {}
        for name in TERMS:
            v = terms[name].value
            if not np.isfinite(v):
                raise DivergedEvaluationError(name)
            vals[name] = v
        l_reg, layers = self._reg(theta)
        if not np.isfinite(l_reg):
            raise DivergedEvaluationError("reg")
        wts = self.term_weights()
        total = 0.0
        for name in TERMS:
            total += wts[name] * vals[name]
        total += w.lambda_reg * l_reg

        norms = {}
        g = None
        if grad or term_grads:
            ebars = {n: wts[n] * 2.0 * terms[n].scale * terms[n].e
                     for n in TERMS if wts[n] > 0 and terms[n].e.size}
            g = self._backprop(fws, self._adjoints(terms, ebars), theta)
            if w.lambda_reg > 0:
                B, Pn = model.n_blocks, model.n_net_params
                g[: B * Pn] += w.lambda_reg * self._reg_grad(layers).ravel()
            if term_grads:
                norms["total"] = float(np.linalg.norm(g))
                for n in TERMS:
                    if n in ebars:
                        gn = self._backprop(fws, self._adjoints(terms, {n: ebars[n]}), theta)
                        norms[n] = float(np.linalg.norm(gn))
                    else:
                        norms[n] = 0.0
                norms["reg"] = (
                    float(w.lambda_reg * np.linalg.norm(self._reg_grad(layers)))
                    if w.lambda_reg > 0 else 0.0
                )
        bd = LossBreakdown(vals["f"], vals["b"], vals["i"], vals["vm"], vals["sm"],
                           vals["sdm"], vals["fm"], l_reg, total, norms)
        return bd, g

    def term_weights(self) -> dict:
        w = self.model.weights
        return {"f": w.w_f, "b": w.w_b, "i": w.w_i, "vm": w.w_vm, "sm": w.w_sm,
                "sdm": w.w_sdm, "fm": w.w_fm}

    def term_gradient(self, name: str, theta=None, eps=None, row_adjoint=None):
        """Gradient of ``sum(row_adjoint * e)`` for one term's rows (default: all ones)."""
        theta = self.model.params if theta is None else theta
        fws, psis = self._forward(theta)
        terms = self._terms(psis, eps)
        t = terms[name]
        ebar = np.ones(t.e.size) if row_adjoint is None else row_adjoint
        if t.e.size == 0:
            return t.e, np.zeros(theta.size)
        return t.e, self._backprop(fws, self._adjoints(terms, {name: ebar}), theta)

    # ------------------------------------------------------------------

    def residual_system(self, theta=None, eps=None, jacobian: bool = True):
        """Stacked weighted rows ``sqrt(w*s)*e`` whose squared norm is the total loss,
        and their exact Jacobian (single-hidden-layer networks only)."""
        model = self.model
        if jacobian and len(model.layer_widths) != 3:
            raise UnsupportedArchitectureError(
                "damped least squares needs single-hidden-layer networks"
            )
        theta = model.params if theta is None else theta
        fws, psis = self._forward(theta)
        terms = self._terms(psis, eps)
        wts = self.term_weights()
        lam = model.weights.lambda_reg
        B, Pn = model.n_blocks, model.n_net_params
        n = theta.size
        blocks = []
        for name in TERMS:
            t = terms[name]
            if wts[name] > 0 and t.e.size:
                blocks.append((name, np.sqrt(wts[name] * t.scale)))
        parts = [f * terms[nm].e for nm, f in blocks]
        reg_f = 0.0
        if lam > 0:
            reg_f = np.sqrt(lam / (2.0 * self.n_weights))
            wmask = self._weight_mask()
            parts.append(reg_f * theta[: B * Pn][wmask])
        e = np.concatenate(parts) if parts else np.zeros(0)
        if not jacobian:
            return e, None
        dense = {gname: self._dense_jets(fws[gname], self.groups[gname], n)
                 for gname in self.groups}
        J = np.zeros((e.size, n))
        off = 0
        for nm, f in blocks:
            t = terms[nm]
            for c in t.contribs:
                D = dense[c.group]
                for key, coef in c.coeffs.items():
                    if key not in D:
                        continue
                    np.add.at(J, off + c.rows, (f * coef)[:, None] * D[key][c.pts])
            off += t.e.size
        if lam > 0:
            cols = np.flatnonzero(wmask)
            J[off + np.arange(cols.size), cols] = reg_f
        return e, J

    def _weight_mask(self):
        model = self.model
        widths = model.layer_widths
        mask = []
        for l in range(len(widths) - 1):
            mask += [True] * (widths[l] * widths[l + 1]) + [False] * widths[l + 1]
        return np.tile(np.array(mask), model.n_blocks)

    def _dense_jets(self, fw, grp: PointGroup, n: int) -> dict:
        """Per-point derivatives of each trial jet w.r.t. all parameters, ``(Bg*P, n)``."""
        model = self.model
        Bg, P = grp.eta.shape
        Pn = model.n_net_params
        scales = {"v": 1.0, "x": grp.sx, "xx": None if grp.sx is None else grp.sx**2,
                  "t": grp.st}
        raw = {}
        for key in netcore.JET_KEYS:
            if fw.out.get(key) is None:
                continue
            s = scales[key]
            seed = np.ones((Bg, P)) if s is None else np.broadcast_to(s, (Bg, P))
            raw[key] = netcore.flatten_grads(fw.backward({key: seed}, per_point=True),
                                             per_point=True)
        out = {}
        lin = grp.trial_jacobian_coeffs(model)
        cols = grp.idx[:, None] * Pn + np.arange(Pn)[None, :]
        for key, parts in lin.items():
            if any(rk not in raw for rk in parts):
                continue
            acc = 0.0
            for rk, coef in parts.items():
                if np.ndim(coef):
                    acc = acc + np.asarray(coef)[..., None] * raw[rk]
                else:
                    acc = acc + coef * raw[rk]
            D = np.zeros((Bg, P, n))
            for b in range(Bg):
                D[b][:, cols[b]] = acc[b]
            aj = grp.aux_jacobian(model, key)
            if aj is not None:
                D[..., model.n_blocks * Pn:] = aj
            out[key] = D.reshape(Bg * P, n)
        return out


def loss_terms(model: BlockModel, colloc: CollocationSet, eps: Optional[float] = None,
               term_grads: bool = True) -> LossBreakdown:
    """Loss breakdown for a model at a collocation set, with per-term gradient norms."""
    bd, _ = LossEngine(model, colloc).evaluate(eps=eps, grad=term_grads, term_grads=term_grads)
    return bd


def loss_and_gradient(model: BlockModel, colloc: CollocationSet, eps: Optional[float] = None):
    return LossEngine(model, colloc).evaluate(eps=eps, grad=True)


def lagrange_solve(A: np.ndarray, b: np.ndarray, cond_limit: float = 1e12) -> np.ndarray:
    """Least-squares multipliers ``(A^T A)^-1 A^T b``."""
    AtA = A.T @ A
    if not np.all(np.isfinite(AtA)) or not np.any(AtA) or np.linalg.cond(AtA) > cond_limit:
        raise SingularSystemError("A^T A is singular")
    return np.linalg.solve(AtA, A.T @ b)


def lagrange_weights(model: BlockModel, colloc: CollocationSet, eps: Optional[float] = None):
    """Multipliers for the boundary, value-matching and slope-matching constraints.

    Columns of A are the gradients of the summed constraint rows; the right-hand
    side is minus the gradient of half the summed squared residual rows.
    Experimental: the stationarity system is generally inconsistent.
    """
    eng = LossEngine(model, colloc)
    cols = []
    for name in ("b", "vm", "sm"):
        _, g = eng.term_gradient(name, eps=eps)
        cols.append(g)
    e_f, g_f = eng.term_gradient("f", eps=eps, row_adjoint=None)
    _, g_f = eng.term_gradient("f", eps=eps, row_adjoint=e_f)
    A = np.stack(cols, axis=1)
    lam = lagrange_solve(A, -g_f)
    if not np.all(np.isfinite(lam)):
        raise SingularSystemError("multipliers are not finite")
    return tuple(float(v) for v in lam)
