"""Gain synthesis and stability constants for the v-approximation controller."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import InfeasibleUpTo, KappaInfeasible, NotStabilizable, UnstableClosedLoop
from .fos_model import FosModel
from .frac_core import phi_tail
from .v_approx import VApprox, build_v_approx

log = logging.getLogger(__name__)

RICCATI_RTOL = 1e-12
RICCATI_MAXITER = 10000
DLYAP_MARGIN = 1e-9


def spectral_radius(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def norm2(M) -> float:
    M = np.asarray(M, dtype=float)
    return float(np.linalg.norm(M, 2)) if M.size else 0.0


@dataclass(frozen=True)
class AnalysisParams:
    """Design parameters. ``Q``/``R`` of None mean identity of the right size."""

    theta: float = 0.5
    theta_hat: float = 0.5
    c_rho: float = 0.5
    kappa: Optional[float] = None
    Q: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None
    gain_method: str = "riccati-lqr"
    K_v: Optional[np.ndarray] = None
    b_xr: float = 1.0
    b_ur: float = 1.0

    def __post_init__(self):
        for name in ("theta", "theta_hat", "c_rho"):
            val = getattr(self, name)
            if not 0.0 < val < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {val}")
        if self.kappa is not None and not 0.0 < self.kappa < 1.0:
            raise ValueError(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.gain_method not in ("riccati-lqr", "user-supplied"):
            raise ValueError(f"unknown gain method {self.gain_method!r}")
        if self.gain_method == "user-supplied" and self.K_v is None:
            raise ValueError("user-supplied gain method needs K_v")
        if self.b_xr < 0 or self.b_ur < 0:
            raise ValueError("reference bounds must be non-negative")

    def weights(self, dim: int, m: int):
        Q = np.eye(dim) if self.Q is None else _check_pd(self.Q, dim, "Q")
        R = np.eye(m) if self.R is None else _check_pd(self.R, m, "R")
        return Q, R


def _check_pd(M, dim, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (dim, dim):
        raise ValueError(f"{name} has shape {M.shape}, expected {(dim, dim)}")
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M)[0] <= 0:
        raise ValueError(f"{name} must be positive definite")
    return M


def _unstabilizable_mode(A, B):
    """Eigenvalue with |lambda| >= 1 failing the PBH rank test, if any."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0 - 1e-9:
            M = np.hstack([A - lam * np.eye(n), B.astype(complex)])
            if np.linalg.matrix_rank(M, tol=1e-9 * max(1.0, np.abs(M).max())) < n:
                return complex(lam)
    return None


def dare_iterate(A, B, Q, R, rtol=RICCATI_RTOL, maxiter=RICCATI_MAXITER):
    """Iterate S <- Q + A'SA - A'SB (R + B'SB)^{-1} B'SA from S = Q.

    Returns ``(S, iterations)``. Raises NotStabilizable on divergence or when
    the iteration cap is hit.
    """
    S = Q.copy()
    for it in range(1, maxiter + 1):
        BtS = B.T @ S
        gain = np.linalg.solve(R + BtS @ B, BtS @ A)
        Sn = Q + A.T @ S @ A - A.T @ S @ B @ gain
        Sn = 0.5 * (Sn + Sn.T)
        if not np.all(np.isfinite(Sn)) or np.abs(Sn).max() > 1e30:
            break
        if np.linalg.norm(Sn - S) <= rtol * np.linalg.norm(Sn):
            return Sn, it
        S = Sn
    mode = _unstabilizable_mode(A, B)
    raise NotStabilizable(
        f"Riccati recursion failed to converge in {it} iterations"
        + (f"; unstable unreachable mode near {mode:.6g}" if mode is not None else ""),
        mode=mode)


def lqr_gain(A, B, Q, R):
    """Gain K with closed loop A + B K, from the converged Riccati iterate."""
    A = np.atleast_2d(np.asarray(A, float))
    B = np.asarray(B, float).reshape(A.shape[0], -1)
    S, _ = dare_iterate(A, B, Q, R)
    K = -np.linalg.solve(R + B.T @ S @ B, B.T @ S @ A)
    rho = spectral_radius(A + B @ K)
    if not rho < 1.0:
        raise NotStabilizable(f"Riccati converged but closed loop has spectral radius {rho:.6g}",
                              mode=_unstabilizable_mode(A, B))
    return K, S


def synthesize_gain(vapprox: VApprox, params: AnalysisParams = AnalysisParams()) -> np.ndarray:
    m = vapprox.tildeB.shape[1]
    if params.gain_method == "user-supplied":
        K = np.atleast_2d(np.asarray(params.K_v, float))
        if K.shape != (m, vapprox.dim):
            raise ValueError(f"K_v has shape {K.shape}, expected {(m, vapprox.dim)}")
        return K
    Q, R = params.weights(vapprox.dim, m)
    K, _ = lqr_gain(vapprox.tildeA, vapprox.tildeB, Q, R)
    return K


def solve_dlyap(A_K, Q, tol=1e-15, maxiter=200) -> np.ndarray:
    """Solve A_K' P A_K - P + Q = 0 by squaring the Smith series.

    P = sum_i (A_K')^i Q A_K^i is accumulated as P <- P + M' P M, M <- M @ M.
    """
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    rho = spectral_radius(A_K)
    if rho >= 1.0 - DLYAP_MARGIN:
        raise UnstableClosedLoop(f"closed-loop spectral radius {rho:.12g} is not below 1")
    P = Q.copy()
    M = A_K.copy()
    for _ in range(maxiter):
        if np.linalg.norm(M, 2) < tol:
            break
        P = P + M.T @ P @ M
        M = M @ M
    return 0.5 * (P + P.T)


def compute_psi(model: FosModel, K_v, v: int) -> float:
    """Tail weight sum_i ||A0^-1 A_i|| phi_{a_i}(v) + sum_i ||A0^-1 B_i K_v|| phi_{b_i}(v)."""
    K_v = np.atleast_2d(np.asarray(K_v, float))
    total = 0.0
    for A, a in model.state_terms:
        phi = phi_tail(a, v)
        if phi:
            total += norm2(model.solve_a0(A)) * phi
    for B, b in model.input_terms:
        phi = phi_tail(b, v)
        if phi:
            total += norm2(model.solve_a0(B) @ K_v) * phi
    return total


def disturbance_gain(model: FosModel) -> float:
    """sum_i ||A0^-1 G_i|| e^{g_i}."""
    return sum(norm2(model.solve_a0(G)) * math.exp(g.value) for G, g in model.dist_terms)


def compute_tracking_bound_d(model: FosModel, v: int, kappa: float, b_xr: float, b_ur: float) -> float:
    """Ultimate tracking offset d for references bounded by ``b_xr``, ``b_ur``."""
    if not 0.0 < kappa < 1.0:
        raise ValueError("kappa must lie in (0, 1)")
    sx = sum(norm2(model.solve_a0(A)) * phi_tail(a, v) for A, a in model.state_terms)
    su = sum(norm2(model.solve_a0(B)) * phi_tail(b, v) for B, b in model.input_terms)
    return kappa / (1.0 - kappa) * (b_xr * sx + b_ur * su)


def default_kappa(condition: float) -> float:
    kappa = max(0.9, 0.5 * (1.0 + condition))
    if kappa <= condition or kappa >= 1.0:
        kappa = 0.5 * (condition + 1.0)
    return kappa


@dataclass
class SynthesisResult:
    v: int
    vapprox: VApprox
    K_v: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    A_K: np.ndarray
    psi: float
    c_2: float
    c_4: float
    c_4_hat: float
    c_psi: float
    gamma_w: float
    condition_value: float
    feasible: bool
    kappa: float = float("nan")
    c_gamma: float = float("nan")
    d: float = float("nan")
    params: AnalysisParams = field(default_factory=AnalysisParams)

    @property
    def rho(self) -> float:
        return spectral_radius(self.A_K)

    def gamma(self, r: float) -> float:
        """Disturbance gain gamma(r) = c_gamma * r."""
        return self.c_gamma * r

    def row(self) -> dict:
        return {"v": self.v, "psi": self.psi, "c_psi": self.c_psi,
                "condition": self.condition_value, "feasible": self.feasible,
                "c_gamma": self.c_gamma, "d": self.d}


def compute_constants(model: FosModel, vapprox: VApprox, K_v, P, params: AnalysisParams = AnalysisParams(),
                      require_feasible: bool = True) -> SynthesisResult:
    """Fill in every stability constant for a given gain and Lyapunov matrix.

    With ``require_feasible`` an infeasible window raises KappaInfeasible;
    otherwise the result is returned with ``feasible=False`` and NaN for the
    kappa-dependent constants.
    """
    v = vapprox.v
    K_v = np.atleast_2d(np.asarray(K_v, float))
    Q, _ = params.weights(vapprox.dim, model.m)
    A_K = vapprox.tildeA + vapprox.tildeB @ K_v
    G = vapprox.tildeG
    lam_P = np.linalg.eigvalsh(P)
    lam_Q_min = np.linalg.eigvalsh(Q)[0]
    c_2 = (np.linalg.eigvalsh(G.T @ P @ G)[-1]
           + norm2(G.T @ P @ A_K) ** 2 / (params.theta * lam_Q_min))
    c_4 = (1.0 - params.theta) * lam_Q_min / lam_P[-1]
    c_4_hat = min(c_4, params.theta_hat)
    c_psi = math.sqrt(c_2 / (c_4_hat * params.c_rho * lam_P[0]))
    psi = compute_psi(model, K_v, v)
    cond = c_psi * psi
    gw_unit = disturbance_gain(model)
    res = SynthesisResult(v=v, vapprox=vapprox, K_v=K_v, P=P, Q=Q, A_K=A_K, psi=psi,
                          c_2=float(c_2), c_4=float(c_4), c_4_hat=float(c_4_hat), c_psi=c_psi,
                          gamma_w=model.b_w * gw_unit, condition_value=cond,
                          feasible=cond < 1.0, params=params)
    if not res.feasible:
        if require_feasible:
            raise KappaInfeasible(f"c_psi * psi({v}) = {cond:.6g} >= 1; no admissible kappa")
        return res
    kappa = params.kappa if params.kappa is not None else default_kappa(cond)
    if not cond < kappa < 1.0:
        if require_feasible:
            raise KappaInfeasible(f"kappa = {kappa} outside ({cond:.6g}, 1)")
        res.feasible = False
        return res
    res.kappa = kappa
    res.c_gamma = c_psi * kappa / (1.0 - kappa) * gw_unit
    res.d = compute_tracking_bound_d(model, v, kappa, params.b_xr, params.b_ur)
    return res


def synthesize(model: FosModel, v: int, params: AnalysisParams = AnalysisParams(),
               require_feasible: bool = False) -> SynthesisResult:
    """Build the v-approximation, synthesize K_v and P, and compute all constants."""
    va = build_v_approx(model, v)
    K = synthesize_gain(va, params)
    Q, _ = params.weights(va.dim, model.m)
    P = solve_dlyap(va.tildeA + va.tildeB @ K, Q)
    return compute_constants(model, va, K, P, params, require_feasible=require_feasible)


@dataclass
class ScanResult:
    v_star: Optional[int]
    result: Optional[SynthesisResult]
    table: list


def scan_v(model: FosModel, params: AnalysisParams = AnalysisParams(), v_max: int = 64,
           v_min: int = 1, stop_at_first: bool = False) -> ScanResult:
    """Evaluate the feasibility condition for v = v_min..v_max."""
    table = []
    best = None
    for v in range(v_min, v_max + 1):
        try:
            res = synthesize(model, v, params)
        except (NotStabilizable, UnstableClosedLoop) as exc:
            log.info("v=%d: %s", v, exc)
            table.append({"v": v, "psi": float("nan"), "c_psi": float("nan"),
                          "condition": float("nan"), "feasible": False,
                          "c_gamma": float("nan"), "d": float("nan"), "error": str(exc)})
            continue
        table.append(res.row())
        if res.feasible and best is None:
            best = res
            if stop_at_first:
                break
    return ScanResult(best.v if best else None, best, table)


def find_min_v(model: FosModel, params: AnalysisParams = AnalysisParams(), v_max: int = 64):
    """Smallest v whose condition c_psi * psi(v) < 1 holds.

    Every candidate is evaluated from scratch since both factors depend on
    the gain synthesized for that v.
    """
    if v_max < 1:
        raise ValueError("v_max must be >= 1")
    scan = scan_v(model, params, v_max, stop_at_first=True)
    if scan.v_star is None:
        raise InfeasibleUpTo(v_max, scan.table)
    return scan.v_star, scan.result


def refine_gain(model: FosModel, v: int, params: AnalysisParams = AnalysisParams(),
                K0=None, maxfev: int = 4000) -> np.ndarray:
    """Search for a gain with a smaller c_psi * psi(v) than the LQR one.

    Derivative-free (Nelder-Mead) minimization of log(c_psi * psi) over the
    entries of K_v, started from ``K0`` (LQR by default). Gains that do not
    stabilize the v-approximation are rejected. Feed the result back through
    ``AnalysisParams(gain_method="user-supplied", K_v=...)``.
    """
    from scipy.optimize import minimize

    va = build_v_approx(model, v)
    lqr = replace(params, gain_method="riccati-lqr", K_v=None)
    K0 = synthesize_gain(va, lqr) if K0 is None else np.atleast_2d(np.asarray(K0, float))
    Q, _ = params.weights(va.dim, model.m)
    shape = K0.shape

    def objective(k):
        K = k.reshape(shape)
        try:
            P = solve_dlyap(va.tildeA + va.tildeB @ K, Q)
        except UnstableClosedLoop:
            return 50.0
        res = compute_constants(model, va, K, P, params, require_feasible=False)
        return math.log(res.condition_value) if res.condition_value > 0 else -50.0

    res = minimize(objective, K0.ravel(), method="Nelder-Mead",
                   options={"maxfev": maxfev, "xatol": 1e-10, "fatol": 1e-12})
    best = res.x if res.fun <= objective(K0.ravel()) else K0.ravel()
    return best.reshape(shape)
