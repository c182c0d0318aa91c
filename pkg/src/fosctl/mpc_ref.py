"""Receding-horizon reference generator on the v-approximation.

At time k the open-loop problem minimizes, over N future inputs,

    J = sum_{i<N} [ c_le * atan(l_e(i) / c_le) + c_s x(i)' Q x(i) ] + c_s x(N)' P x(N)
    l_e(i) = w_track * (x_1(i) - p_d(k+i))^2 + w_input * |u(i)|^2

subject to x(i+1) = At x(i) + Bt u(i). Only the first input is applied.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from .errors import OptimizerStalled
from .v_approx import VApprox

GTOL = 1e-8
MAXITER = 500


@dataclass
class MpcConfig:
    vapprox: VApprox
    P: np.ndarray
    Q: np.ndarray
    K_v: np.ndarray
    target: Callable[[int], float]
    horizon: int = 20
    c_le: float = 1e5
    c_s: float = 1e-5
    w_track: float = 10.0
    w_input: float = 1.0
    tracked: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not (self.c_le > 0 and self.c_s > 0):
            raise ValueError("c_le and c_s must be positive")
        self.K_v = np.atleast_2d(np.asarray(self.K_v, float))
        self.P = np.asarray(self.P, float)
        self.Q = np.asarray(self.Q, float)

    @classmethod
    def from_synthesis(cls, syn, target, **kw):
        return cls(syn.vapprox, syn.P, syn.Q, syn.K_v, target, **kw)

    @property
    def m(self) -> int:
        return self.vapprox.tildeB.shape[1]


def p_d_example(k) -> float:
    """Sinusoidal target -10 sin(0.2 k) + 3 sin(0.5 k)."""
    return -10.0 * math.sin(0.2 * k) + 3.0 * math.sin(0.5 * k)


def _tracking_error(cfg, k, x):
    return x[cfg.tracked] - cfg.target(k)


def stage_cost(k, x_e, u, cfg: MpcConfig) -> float:
    x_e = np.asarray(x_e, float)
    u = np.atleast_1d(np.asarray(u, float))
    le = cfg.w_track * _tracking_error(cfg, k, x_e) ** 2 + cfg.w_input * float(u @ u)
    return cfg.c_le * math.atan(le / cfg.c_le) + cfg.c_s * float(x_e @ cfg.Q @ x_e)


def terminal_cost(x_e, cfg: MpcConfig) -> float:
    x_e = np.asarray(x_e, float)
    return cfg.c_s * float(x_e @ cfg.P @ x_e)


def rollout(x_e, U, cfg: MpcConfig) -> np.ndarray:
    A, B = cfg.vapprox.tildeA, cfg.vapprox.tildeB
    X = np.empty((len(U) + 1, len(x_e)))
    X[0] = x_e
    for i, u in enumerate(U):
        X[i + 1] = A @ X[i] + B @ u
    return X


def cost(k, x_e, U, cfg: MpcConfig) -> float:
    U = np.asarray(U, float).reshape(cfg.horizon, cfg.m)
    X = rollout(x_e, U, cfg)
    return (sum(stage_cost(k + i, X[i], U[i], cfg) for i in range(cfg.horizon))
            + terminal_cost(X[-1], cfg))


def _simulate(x_e, C, cfg, F):
    """States and inputs for u(i) = F x(i) + C[i]."""
    A, B = cfg.vapprox.tildeA, cfg.vapprox.tildeB
    N = cfg.horizon
    X = np.empty((N + 1, len(x_e)))
    U = np.empty((N, cfg.m))
    X[0] = x_e
    for i in range(N):
        U[i] = F @ X[i] + C[i]
        X[i + 1] = A @ X[i] + B @ U[i]
    return X, U


def _cost_grad(k, x_e, z, cfg, F):
    """Cost and adjoint gradient w.r.t. the offsets C of u(i) = F x(i) + C[i]."""
    N, m = cfg.horizon, cfg.m
    A, B = cfg.vapprox.tildeA, cfg.vapprox.tildeB
    X, U = _simulate(x_e, np.asarray(z, float).reshape(N, m), cfg, F)
    QX = X[:N] @ cfg.Q
    J = cfg.c_s * float(X[N] @ cfg.P @ X[N])
    gx = np.empty((N, X.shape[1]))
    gU = np.empty((N, m))
    for i in range(N):
        err = X[i, cfg.tracked] - cfg.target(k + i)
        le = cfg.w_track * err * err + cfg.w_input * float(U[i] @ U[i])
        s = le / cfg.c_le
        J += cfg.c_le * math.atan(s) + cfg.c_s * float(QX[i] @ X[i])
        dsat = 1.0 / (1.0 + s * s)
        gx[i] = 2.0 * cfg.c_s * QX[i]
        gx[i, cfg.tracked] += dsat * 2.0 * cfg.w_track * err
        gU[i] = dsat * 2.0 * cfg.w_input * U[i]
    lam = 2.0 * cfg.c_s * (cfg.P @ X[N])
    grad = np.empty((N, m))
    for i in range(N - 1, -1, -1):
        grad[i] = gU[i] + B.T @ lam
        lam = gx[i] + F.T @ grad[i] + A.T @ lam
    return J, grad.ravel()


def cost_and_grad(k, x_e, z, cfg: MpcConfig):
    """Cost and its gradient w.r.t. the flattened open-loop inputs (adjoint recursion)."""
    return _cost_grad(k, x_e, z, cfg, np.zeros((cfg.m, cfg.vapprox.dim)))


def sensitivity(cfg: MpcConfig, F=None):
    """Jacobians of x(i) (N+1, dim, N*m) and u(i) (N, m, N*m) w.r.t. the offsets."""
    N, m = cfg.horizon, cfg.m
    A, B = cfg.vapprox.tildeA, cfg.vapprox.tildeB
    if F is None:
        F = np.zeros((m, A.shape[0]))
    S = np.zeros((N + 1, A.shape[0], N * m))
    D = np.zeros((N, m, N * m))
    for i in range(N):
        D[i] = F @ S[i]
        D[i][:, i * m:(i + 1) * m] += np.eye(m)
        S[i + 1] = A @ S[i] + B @ D[i]
    return S, D


def hessian(k, x_e, z, cfg: MpcConfig, F=None, sens=None) -> np.ndarray:
    """Exact Hessian of the horizon cost w.r.t. the offsets of u = F x + c."""
    N, m = cfg.horizon, cfg.m
    if F is None:
        F = np.zeros((m, cfg.vapprox.dim))
    S, D = sensitivity(cfg, F) if sens is None else sens
    X, U = _simulate(x_e, np.asarray(z, float).reshape(N, m), cfg, F)
    H = 2.0 * cfg.c_s * S[N].T @ cfg.P @ S[N]
    for i in range(N):
        H += 2.0 * cfg.c_s * S[i].T @ cfg.Q @ S[i]
        err = X[i, cfg.tracked] - cfg.target(k + i)
        le = cfg.w_track * err * err + cfg.w_input * float(U[i] @ U[i])
        s = le / cfg.c_le
        d1 = 1.0 / (1.0 + s * s)
        d2 = -2.0 * s / (cfg.c_le * (1.0 + s * s) ** 2)
        row = S[i][cfg.tracked]
        g = 2.0 * cfg.w_track * err * row + 2.0 * cfg.w_input * D[i].T @ U[i]
        Hl = 2.0 * cfg.w_track * np.outer(row, row) + 2.0 * cfg.w_input * D[i].T @ D[i]
        H += d1 * Hl + d2 * np.outer(g, g)
    return 0.5 * (H + H.T)


def _newton_polish(k, x_e, z, J, g, cfg, F, steps=20):
    """Damped Newton steps with the exact Hessian until the gradient tolerance holds."""
    sens = sensitivity(cfg, F)
    for _ in range(steps):
        if np.max(np.abs(g)) < GTOL:
            break
        H = hessian(k, x_e, z, cfg, F, sens)
        w, V = np.linalg.eigh(H)
        # atan saturation can make H indefinite; clip to keep a descent direction
        w = np.maximum(w, 1e-8 * max(1.0, w[-1]))
        dz = -(V @ ((V.T @ g) / w))
        t = 1.0
        for _ in range(30):
            Jn, gn = _cost_grad(k, x_e, z + t * dz, cfg, F)
            if Jn <= J + 1e-13 * abs(J) and np.max(np.abs(gn)) < np.max(np.abs(g)):
                break
            t *= 0.5
        else:
            break
        z, J, g = z + t * dz, Jn, gn
    return z, J, g


@dataclass
class OpenLoopSolution:
    k: int
    inputs: np.ndarray
    states: np.ndarray
    cost: float
    warm_cost: float
    grad_norm: float
    iterations: int
    stalled: bool = False


def feedback_inputs(x_e, cfg: MpcConfig, steps: int) -> np.ndarray:
    """Inputs of the linear law u = K_v x_e rolled along the v-approximation."""
    A, B, K = cfg.vapprox.tildeA, cfg.vapprox.tildeB, cfg.K_v
    U = np.empty((steps, cfg.m))
    x = np.asarray(x_e, float)
    for i in range(steps):
        U[i] = K @ x
        x = A @ x + B @ U[i]
    return U


def extended_inputs(prev: OpenLoopSolution, cfg: MpcConfig) -> np.ndarray:
    """Previous optimum shifted by one step and closed with K_v at the tail."""
    return np.vstack([prev.inputs[1:], (cfg.K_v @ prev.states[-1])[None, :]])


def solve_open_loop(k, x_e, cfg: MpcConfig, warm: Optional[np.ndarray] = None) -> OpenLoopSolution:
    """Minimize the horizon cost from ``x_e`` at time ``k``.

    The search runs over offsets c(i) of the pre-stabilized law
    u(i) = K_v x(i) + c(i), which keeps the problem well conditioned when the
    v-approximation is open-loop unstable; c = 0 is the pure K_v rollout.
    BFGS does the bulk of the work and exact-Hessian Newton steps finish off
    the gradient tolerance. Never returns a cost above the warm start's.
    If the tolerance is not met the best iterate comes back with
    ``stalled=True``.
    """
    x_e = np.asarray(x_e, float)
    F = cfg.K_v
    N, m = cfg.horizon, cfg.m
    if warm is None:
        warm = feedback_inputs(x_e, cfg, N)
    warm = np.asarray(warm, float).reshape(N, m)
    # offsets reproducing the warm-start inputs exactly
    Xw = rollout(x_e, warm, cfg)
    z0 = (warm - Xw[:N] @ F.T).ravel()
    J0, g0 = _cost_grad(k, x_e, z0, cfg, F)
    z, J, g, nit = z0, J0, g0, 0
    if np.max(np.abs(g0)) >= GTOL:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(lambda zz: _cost_grad(k, x_e, zz, cfg, F), z0, jac=True,
                           method="BFGS",
                           options={"gtol": GTOL, "norm": np.inf, "maxiter": MAXITER})
        nit = res.nit
        if res.fun <= J0:
            z, J, g = res.x, float(res.fun), res.jac
        z, J, g = _newton_polish(k, x_e, z, J, g, cfg, F)
        J, g = _cost_grad(k, x_e, z, cfg, F)
        if J > J0:
            z, J, g = z0, J0, g0
    gn = float(np.max(np.abs(g))) if g.size else 0.0
    X, U = _simulate(x_e, z.reshape(N, m), cfg, F)
    return OpenLoopSolution(k, U, X, J, J0, gn, nit, stalled=gn >= GTOL)


@dataclass
class MpcReference:
    """Stateful receding-horizon controller producing u_r(k) = first optimal input."""

    cfg: MpcConfig
    history: list = field(default_factory=list)
    stalls: int = 0

    def __call__(self, k, x_e):
        return self.step(k, x_e)

    def step(self, k, x_e) -> np.ndarray:
        warm = extended_inputs(self.history[-1], self.cfg) if self.history else None
        sol = solve_open_loop(k, x_e, self.cfg, warm)
        if sol.stalled:
            self.stalls += 1
            warnings.warn(f"MPC optimizer stalled at k={k} (|grad|_inf={sol.grad_norm:.2e})",
                          OptimizerStalled, stacklevel=2)
        self.history.append(sol)
        return sol.inputs[0].copy()

    @property
    def values(self) -> np.ndarray:
        """Value function V_MPC(k, x_e(k)) along the run."""
        return np.array([s.cost for s in self.history])

    def shifted_values(self) -> np.ndarray:
        return self.values - self.cfg.horizon * self.cfg.c_le * math.pi / 2

    def decrease_margins(self) -> np.ndarray:
        """W(k+1) - W(k) + alpha(|x_e(k)|) - 2 c_le pi/2; non-positive when the decrease holds.

        alpha(r) = c_s lambda_min(Q) r^2 lower-bounds the stabilizer stage term.
        """
        W = self.shifted_values()
        lam = np.linalg.eigvalsh(self.cfg.Q)[0]
        xs = np.array([np.linalg.norm(s.states[0]) for s in self.history])
        alpha = self.cfg.c_s * lam * xs[:-1] ** 2
        return W[1:] - W[:-1] + alpha - self.cfg.c_le * math.pi


def mpc_step(k, x_e, ctrl: MpcReference):
    """Apply one receding-horizon step; returns (u_r(k), x_e(k+1))."""
    u = ctrl.step(k, x_e)
    return u, ctrl.cfg.vapprox.step(x_e, u)


def run_mpc(cfg: MpcConfig, x_e0, steps: int):
    """Closed loop of the generator alone; returns (x_e history, u_r history, controller)."""
    ctrl = MpcReference(cfg)
    X = np.zeros((steps + 1, cfg.vapprox.dim))
    U = np.zeros((steps, cfg.m))
    X[0] = x_e0
    for k in range(steps):
        U[k], X[k + 1] = mpc_step(k, X[k], ctrl)
    return X, U, ctrl
