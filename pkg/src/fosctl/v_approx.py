"""Finite-window (v-)approximation of a fractional-order system.

The augmented state stacks the newest ``v`` states and the ``v`` most recent
past inputs::

    xt(k) = [x(k), x(k-1), ..., x(k-v+1), u(k-1), ..., u(k-v)]

so that ``xt(k+1) = At xt(k) + Bt u(k) + Gt r(k)`` holds exactly, with r(k)
the dropped tail. Setting r = 0 gives the v-approximation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fos_model import FosModel, ReformCoeffs, reform_coeffs, residual_from_history


@dataclass(frozen=True)
class Layout:
    n: int
    m: int
    v: int

    @property
    def dim(self) -> int:
        return self.v * (self.n + self.m)

    def x_block(self, i: int) -> slice:
        """Slot of x(k-i), i = 0..v-1."""
        return slice(i * self.n, (i + 1) * self.n)

    def u_block(self, i: int) -> slice:
        """Slot of u(k-1-i), i = 0..v-1."""
        off = self.v * self.n
        return slice(off + i * self.m, off + (i + 1) * self.m)


@dataclass(frozen=True)
class VApprox:
    v: int
    tildeA: np.ndarray
    tildeB: np.ndarray
    tildeG: np.ndarray
    layout: Layout

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def C(self) -> np.ndarray:
        """Output map picking x(k) out of the augmented state."""
        return self.tildeG.T.copy()

    def step(self, xt, u, r=None):
        xn = self.tildeA @ xt + self.tildeB @ np.atleast_1d(u)
        if r is not None:
            xn = xn + self.tildeG @ r
        return xn


def build_v_approx(model: FosModel, v: int, coeffs: ReformCoeffs = None) -> VApprox:
    if v < 1:
        raise ValueError("v must be >= 1")
    n, m = model.n, model.m
    if coeffs is None or coeffs.horizon < v:
        coeffs = reform_coeffs(model, v)
    L = Layout(n, m, v)
    At = np.zeros((L.dim, L.dim))
    Bt = np.zeros((L.dim, m))
    Gt = np.zeros((L.dim, n))
    top = L.x_block(0)
    for j in range(1, v + 1):
        At[top, L.x_block(j - 1)] = coeffs.checkA[j]
        At[top, L.u_block(j - 1)] = coeffs.checkB[j]
    Bt[top] = coeffs.checkB[0]
    Gt[top] = np.eye(n)
    for i in range(1, v):
        At[L.x_block(i), L.x_block(i - 1)] = np.eye(n)
        At[L.u_block(i), L.u_block(i - 1)] = np.eye(m)
    Bt[L.u_block(0)] = np.eye(m)
    for M in (At, Bt, Gt):
        M.flags.writeable = False
    return VApprox(v, At, Bt, Gt, L)


def augment(layout: Layout, x, u, k: int) -> np.ndarray:
    """Assemble xt(k) from full histories ``x[0..k]``, ``u[0..k-1]`` (zero before 0)."""
    xt = np.zeros(layout.dim)
    for i in range(layout.v):
        if k - i >= 0:
            xt[layout.x_block(i)] = x[k - i]
        if k - 1 - i >= 0:
            xt[layout.u_block(i)] = u[k - 1 - i]
    return xt


def residual(model: FosModel, traj, k: int, v: int, coeffs: ReformCoeffs = None) -> np.ndarray:
    """Exact tail r(k) for a recorded trajectory."""
    if coeffs is None or coeffs.horizon < k + 1:
        coeffs = reform_coeffs(model, max(k + 1, v))
    return residual_from_history(coeffs, traj.states, traj.inputs, traj.disturbances, k, v)
