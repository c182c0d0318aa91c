"""Linear discrete-time fractional-order systems and their exact simulation.

A model is

    sum_i A_i D^{a_i} x(k+1) = sum_i B_i D^{b_i} u(k) + sum_i G_i D^{g_i} w(k)

with D^a the Grünwald-Letnikov difference and zero history before k = 0.
Solving for x(k+1) gives the explicit recursion

    x(k+1) = sum_{j>=1} Ac_j x(k-j+1) + sum_{j>=0} Bc_j u(k-j) + sum_{j>=0} Gc_j w(k-j)

with Ac_j = -Ah_0^{-1} Ah_j, Bc_j = Ah_0^{-1} Bh_j, Gc_j = Ah_0^{-1} Gh_j and
Ah_j = sum_i A_i c_j^{a_i} (same for Bh_j, Gh_j).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, NumericOverflow, SingularAggregateMatrix
from .frac_core import FracOrder, gl_coefficients

RCOND_MIN = 1e-12


def _as_terms(terms, rows, name):
    out = []
    for mat, order in terms:
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        if mat.shape[0] != rows:
            raise DimensionMismatch(f"{name} matrix has {mat.shape[0]} rows, expected {rows}")
        mat.flags.writeable = False
        out.append((mat, FracOrder(order)))
    return tuple(out)


@dataclass(frozen=True)
class FosModel:
    """Fractional-order system with additive disturbance.

    Parameters
    ----------
    state_terms : sequence of (A_i, a_i)
    input_terms : sequence of (B_i, b_i)
    dist_terms : sequence of (G_i, g_i), may be empty
    b_w : float
        Bound on ``||w(k)||``.
    """

    state_terms: tuple
    input_terms: tuple
    dist_terms: tuple = ()
    b_w: float = 0.0
    _lu: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.state_terms) < 1:
            raise DimensionMismatch("at least one state term is required")
        A0 = np.atleast_2d(np.asarray(self.state_terms[0][0], dtype=float))
        n = A0.shape[0]
        st = _as_terms(self.state_terms, n, "state")
        for A, _ in st:
            if A.shape != (n, n):
                raise DimensionMismatch(f"state matrix has shape {A.shape}, expected {(n, n)}")
        it = _as_terms(self.input_terms, n, "input")
        if not it:
            raise DimensionMismatch("at least one input term is required")
        m = it[0][0].shape[1]
        if any(B.shape[1] != m for B, _ in it):
            raise DimensionMismatch("input matrices disagree on the input dimension")
        dt = _as_terms(self.dist_terms, n, "disturbance")
        if dt and any(G.shape[1] != dt[0][0].shape[1] for G, _ in dt):
            raise DimensionMismatch("disturbance matrices disagree on the disturbance dimension")
        if not self.b_w >= 0.0:
            raise ValueError("b_w must be non-negative")
        object.__setattr__(self, "state_terms", st)
        object.__setattr__(self, "input_terms", it)
        object.__setattr__(self, "dist_terms", dt)
        object.__setattr__(self, "b_w", float(self.b_w))

        agg = sum(A for A, _ in st)
        rcond = _rcond(agg)
        if not rcond > RCOND_MIN:
            raise SingularAggregateMatrix(
                f"singular aggregate matrix: sum of A_i has reciprocal condition {rcond:.3e}")
        object.__setattr__(self, "_lu", sla.lu_factor(agg))

    @property
    def n(self) -> int:
        return self.state_terms[0][0].shape[0]

    @property
    def m(self) -> int:
        return self.input_terms[0][0].shape[1]

    @property
    def p(self) -> int:
        return self.dist_terms[0][0].shape[1] if self.dist_terms else 0

    def solve_a0(self, M) -> np.ndarray:
        """Apply Ah_0^{-1} to ``M`` through the stored LU factorization."""
        M = np.asarray(M, dtype=float)
        if M.size == 0:
            return np.zeros(M.shape)
        return sla.lu_solve(self._lu, M)


def _rcond(M) -> float:
    s = np.linalg.svd(M, compute_uv=False)
    return float(s[-1] / s[0]) if s[0] > 0 else 0.0


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    rcond: float
    dims: tuple
    errors: tuple = ()


def validate_model(state_terms, input_terms, dist_terms=(), b_w=0.0) -> ValidationReport:
    """Check a candidate model without raising; see :class:`FosModel`."""
    errors = []
    rcond = float("nan")
    dims = ()
    try:
        model = FosModel(state_terms, input_terms, dist_terms, b_w)
        rcond = _rcond(sum(A for A, _ in model.state_terms))
        dims = (model.n, model.m, model.p)
    except SingularAggregateMatrix as exc:
        errors.append(("SingularAggregateMatrix", str(exc)))
        try:
            rcond = _rcond(sum(np.atleast_2d(np.asarray(A, float)) for A, _ in state_terms))
        except ValueError:
            pass
    except (DimensionMismatch, ValueError) as exc:
        errors.append((type(exc).__name__, str(exc)))
    return ValidationReport(not errors, rcond, dims, tuple(errors))


@dataclass(frozen=True)
class ReformCoeffs:
    """Stacked coefficient matrices of the explicit recursion, j = 0..J.

    ``checkA[0]`` is unused and kept at zero so that indices match j.
    """

    hatA: np.ndarray
    hatB: np.ndarray
    hatG: np.ndarray
    checkA: np.ndarray
    checkB: np.ndarray
    checkG: np.ndarray

    @property
    def horizon(self) -> int:
        return self.hatA.shape[0] - 1


def _hat(terms, J, rows, cols):
    out = np.zeros((J + 1, rows, cols))
    for M, order in terms:
        c = gl_coefficients(order, J)
        out += c[:, None, None] * M[None, :, :]
    return out


def reform_coeffs(model: FosModel, J: int) -> ReformCoeffs:
    if J < 0:
        raise ValueError("J must be non-negative")
    n, m, p = model.n, model.m, model.p
    hatA = _hat(model.state_terms, J, n, n)
    hatB = _hat(model.input_terms, J, n, m)
    hatG = _hat(model.dist_terms, J, n, p)

    def solve_stack(S):
        # (J+1, n, c) -> apply Ah_0^{-1} to every block at once
        c = S.shape[2]
        flat = S.transpose(1, 0, 2).reshape(n, -1)
        return model.solve_a0(flat).reshape(n, J + 1, c).transpose(1, 0, 2)

    checkA = -solve_stack(hatA)
    checkA[0] = 0.0
    return ReformCoeffs(hatA, hatB, hatG, checkA, solve_stack(hatB), solve_stack(hatG))


@dataclass
class Trajectory:
    """Time-indexed record of a run, k = 0..K.

    ``inputs[k]`` and ``disturbances[k]`` are the signals applied at time k;
    values before k = 0 are implicitly zero.
    """

    states: np.ndarray
    inputs: np.ndarray
    disturbances: np.ndarray
    ref_states: Optional[np.ndarray] = None
    ref_inputs: Optional[np.ndarray] = None
    errors: Optional[np.ndarray] = None
    residual_norms: Optional[np.ndarray] = None
    bound: Optional[float] = None
    diverged: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.states))

    @property
    def K(self) -> int:
        return len(self.states) - 1

    @property
    def state_norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    @property
    def error_norms(self) -> Optional[np.ndarray]:
        return None if self.errors is None else np.linalg.norm(self.errors, axis=1)


class FosSimulator:
    """Step-by-step exact rollout of the explicit recursion.

    Keeps the whole history; one step at time k costs O(k) matrix-vector
    products. Inputs for time k may depend on ``x[0..k]`` and ``u[0..k-1]``.
    """

    def __init__(self, model: FosModel, x0, K: int, coeffs: Optional[ReformCoeffs] = None,
                 overflow: float = 1e12):
        self.model = model
        self.K = int(K)
        if coeffs is None or coeffs.horizon < self.K + 1:
            coeffs = reform_coeffs(model, self.K + 1)
        self.coeffs = coeffs
        n, m, p = model.n, model.m, model.p
        self.x = np.zeros((self.K + 1, n))
        self.u = np.zeros((self.K + 1, m))
        self.w = np.zeros((self.K + 1, p))
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.shape != (n,):
            raise DimensionMismatch(f"x0 has shape {x0.shape}, expected {(n,)}")
        self.x[0] = x0
        self.k = 0
        self.overflow = overflow
        self.diverged = False

    def step(self, u, w=None):
        """Apply ``u(k)``, ``w(k)`` and advance to ``x(k+1)``."""
        k = self.k
        if k >= self.K:
            raise IndexError("simulation horizon exhausted")
        self.u[k] = u
        if w is not None and self.model.p:
            self.w[k] = w
        C = self.coeffs
        # x(k+1) = sum_{j=1}^{k+1} Ac_j x(k+1-j) + sum_{j=0}^{k} (Bc_j u(k-j) + Gc_j w(k-j))
        xn = np.einsum("jab,jb->a", C.checkA[1:k + 2], self.x[k::-1])
        xn += np.einsum("jab,jb->a", C.checkB[:k + 1], self.u[k::-1])
        if self.model.p:
            xn += np.einsum("jab,jb->a", C.checkG[:k + 1], self.w[k::-1])
        self.k = k + 1
        self.x[k + 1] = xn
        if not np.all(np.isfinite(xn)) or np.linalg.norm(xn) > self.overflow:
            self.diverged = True
            raise NumericOverflow(f"state norm exceeded {self.overflow:g} at k={k + 1}")
        return xn

    def residual(self, k: int, v: int) -> np.ndarray:
        """Tail term r(k) dropped by the v-approximation (needs history up to k)."""
        return residual_from_history(self.coeffs, self.x, self.u, self.w, k, v)

    def trajectory(self, **kw) -> Trajectory:
        last = self.k + 1
        return Trajectory(self.x[:last].copy(), self.u[:last].copy(), self.w[:last].copy(),
                          diverged=self.diverged, **kw)


def residual_from_history(coeffs: ReformCoeffs, x, u, w, k: int, v: int) -> np.ndarray:
    """r(k) = sum_{j>v} Ac_j x(k-j+1) + sum_{j>v} Bc_j u(k-j) + sum_{j>=0} Gc_j w(k-j)."""
    n = coeffs.checkA.shape[1]
    r = np.zeros(n)
    # x index k-j+1 >= 0  <=>  j <= k+1
    if k + 1 >= v + 1:
        r += np.einsum("jab,jb->a", coeffs.checkA[v + 1:k + 2], x[k - v::-1])
    if k >= v + 1:
        r += np.einsum("jab,jb->a", coeffs.checkB[v + 1:k + 1], u[k - v - 1::-1])
    if coeffs.checkG.shape[2]:
        r += np.einsum("jab,jb->a", coeffs.checkG[:k + 1], w[k::-1])
    return r


def _signal(fn, k, size):
    if fn is None or size == 0:
        return np.zeros(size)
    return np.asarray(fn(k), dtype=float).reshape(size)


def simulate_exact(model: FosModel, u_fn: Optional[Callable] = None,
                   w_fn: Optional[Callable] = None, x0=None, K: int = 1) -> Trajectory:
    """Roll the model out for K steps from ``x0`` with zero pre-initial history.

    ``u_fn(k)`` and ``w_fn(k)`` return the signals at time k. A feedback law
    can be passed as ``u_fn`` accepting ``(k, sim)`` where ``sim`` is the
    running :class:`FosSimulator`; mark it with ``u_fn.feedback = True``.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if x0 is None:
        x0 = np.zeros(model.n)
    sim = FosSimulator(model, x0, K)
    feedback = getattr(u_fn, "feedback", False)
    try:
        for k in range(K + 1):
            if feedback:
                uk = np.asarray(u_fn(k, sim), dtype=float).reshape(model.m)
            else:
                uk = _signal(u_fn, k, model.m)
            wk = _signal(w_fn, k, model.p)
            if k == K:
                sim.u[k] = uk
                if model.p:
                    sim.w[k] = wk
                break
            sim.step(uk, wk)
    except NumericOverflow:
        pass
    return sim.trajectory()


def example_model(noise: bool = False, b_w: float = 0.5) -> FosModel:
    """The two-state benchmark: A_1 = I, A_2 = A (order 1.7), A_3 = -A, B_1 = e_2.

    With ``noise`` the disturbance enters through G_1 = I, otherwise G_1 = 0.
    """
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    G = np.eye(2) if noise else np.zeros((2, 2))
    return FosModel(
        state_terms=[(np.eye(2), 0.0), (A, 1.7), (-A, 0.0)],
        input_terms=[(np.array([[0.0], [1.0]]), 0.0)],
        dist_terms=[(G, 0.0)],
        b_w=b_w if noise else 0.0,
    )
