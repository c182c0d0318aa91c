"""Closed-loop runs: regulation, tracking a FOS solution, tracking the v-approximation.

The plant is always the exact infinite-memory system; the v-approximation
only lives inside the controller and the exogenous reference generator.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import NumericOverflow
from .fos_model import FosModel, FosSimulator, Trajectory, simulate_exact
from .synthesis import SynthesisResult, compute_tracking_bound_d
from .v_approx import augment

MASK64 = (1 << 64) - 1
DIVERGENCE_NORM = 1e12


def splitmix64(seed: int):
    """Infinite stream of 64-bit integers from the SplitMix64 generator.

    state += 0x9E3779B97F4A7C15
    z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB; yield z ^ (z >> 31)
    (all arithmetic mod 2^64)
    """
    state = seed & MASK64
    while True:
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        yield z ^ (z >> 31)


def uniform_stream(seed: int, count: int) -> np.ndarray:
    """``count`` doubles in [0, 1): top 53 bits of each SplitMix64 output / 2^53."""
    gen = splitmix64(seed)
    return np.array([(next(gen) >> 11) * 2.0 ** -53 for _ in range(count)])


def make_disturbance(kind, b_w: float, seed: int, K: int, p: int) -> np.ndarray:
    """Disturbance sequence of shape (K+1, p).

    ``kind`` is ``"none"``, ``"uniform"`` (each component i.i.d. in
    [-b_w, b_w], drawn row-major from the SplitMix64 stream) or an explicit
    array of samples.
    """
    if b_w < 0:
        raise ValueError("b_w must be non-negative")
    if kind is None or (isinstance(kind, str) and kind == "none") or b_w == 0.0 and isinstance(kind, str):
        return np.zeros((K + 1, p))
    if isinstance(kind, str):
        if kind != "uniform":
            raise ValueError(f"unknown disturbance kind {kind!r}")
        u = uniform_stream(seed, (K + 1) * p).reshape(K + 1, p)
        return b_w * (2.0 * u - 1.0)
    w = np.asarray(kind, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    out = np.zeros((K + 1, p))
    rows = min(len(w), K + 1)
    out[:rows] = w[:rows]
    return out


@dataclass
class Scenario:
    """A closed-loop experiment.

    ``reference`` depends on ``kind``:

    * ``regulate``: ignored.
    * ``track-fos``: input sequence u_r (array (K+1, m) or callable k -> u_r),
      with ``ref_x0`` the reference initial state.
    * ``track-vapprox``: callable ``(k, x_e) -> u_r`` (e.g. an MPC generator)
      or an input array; ``ref_x0`` is the exogenous initial state (length
      v(n+m)) or None for zero.
    """

    kind: str
    model: FosModel
    synthesis: SynthesisResult
    horizon: int
    x0: Any
    disturbance: Any = "none"
    seed: int = 0
    reference: Any = None
    ref_x0: Any = None

    def __post_init__(self):
        if self.kind not in ("regulate", "track-fos", "track-vapprox"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        self.x0 = np.asarray(self.x0, float).reshape(self.model.n)

    def disturbances(self) -> np.ndarray:
        return make_disturbance(self.disturbance, self.model.b_w, self.seed, self.horizon, self.model.p)


def _input_fn(ref, m):
    if ref is None:
        return lambda k: np.zeros(m)
    if callable(ref):
        return lambda k: np.asarray(ref(k), float).reshape(m)
    arr = np.asarray(ref, float).reshape(-1, m)
    return lambda k: arr[k] if k < len(arr) else np.zeros(m)


def _closed_loop(sc: Scenario, ref_x=None, ref_u=None, ref_aug=None):
    """Run the plant under u(k) = u_r(k) + K_v (xt(k) - xt_r(k)).

    ``ref_aug(k)`` gives the augmented reference, ``ref_u(k)`` the feedforward.
    """
    model, syn, K = sc.model, sc.synthesis, sc.horizon
    layout = syn.vapprox.layout
    W = sc.disturbances()
    sim = FosSimulator(model, sc.x0, K, overflow=DIVERGENCE_NORM)
    try:
        for k in range(K + 1):
            xt = augment(layout, sim.x, sim.u, k)
            if ref_aug is not None:
                uk = ref_u(k) + syn.K_v @ (xt - ref_aug(k))
            else:
                uk = syn.K_v @ xt
            if k == K:
                sim.u[k] = uk
                sim.w[k] = W[k]
                break
            sim.step(uk, W[k])
    except NumericOverflow:
        pass
    return sim


def run_regulation(sc: Scenario) -> Trajectory:
    """Plant under u(k) = K_v xt(k). Feasibility is not required.

    The ``bound`` channel holds the predicted ultimate bound c_gamma * b_w
    (NaN when the window is infeasible).
    """
    sim = _closed_loop(sc)
    traj = sim.trajectory(bound=sc.synthesis.gamma(sc.model.b_w))
    traj.errors = traj.states.copy()
    return traj


def reference_fos(model: FosModel, u_r, x_r0, K: int) -> Trajectory:
    """Noise-free solution of the plant equation driven by ``u_r``."""
    return simulate_exact(model, _input_fn(u_r, model.m), None, x_r0, K)


def run_track_fos(sc: Scenario) -> Trajectory:
    """Track a noise-free plant solution with u = u_r + K_v (xt - xt_r)."""
    model, K = sc.model, sc.horizon
    x_r0 = np.zeros(model.n) if sc.ref_x0 is None else sc.ref_x0
    ref = reference_fos(model, sc.reference, x_r0, K)
    if ref.diverged or len(ref.states) < K + 1:
        raise NumericOverflow("reference trajectory diverged")
    layout = sc.synthesis.vapprox.layout
    sim = _closed_loop(sc, ref_u=lambda k: ref.inputs[k],
                       ref_aug=lambda k: augment(layout, ref.states, ref.inputs, k))
    traj = sim.trajectory(bound=sc.synthesis.gamma(model.b_w))
    n = len(traj.states)
    traj.ref_states = ref.states[:n]
    traj.ref_inputs = ref.inputs[:n]
    traj.errors = traj.states - traj.ref_states
    return traj


def run_track_vapprox(sc: Scenario) -> Trajectory:
    """Co-simulate the plant and the exogenous v-approximation reference.

    The exogenous system is x_e(k+1) = At x_e(k) + Bt u_r(k), x_r = C x_e.
    The bound channel is gamma(b_w) + d with d evaluated at the realized
    reference bounds; ``extra`` holds d, b_xr, b_ur and the trailing-half sup
    of the tracking error.
    """
    model, syn, K = sc.model, sc.synthesis, sc.horizon
    va = syn.vapprox
    layout = va.layout
    W = sc.disturbances()
    ref = sc.reference
    if callable(ref):
        exo_input = lambda k, xe: np.asarray(ref(k, xe), float).reshape(model.m)
    else:
        fn = _input_fn(ref, model.m)
        exo_input = lambda k, xe: fn(k)
    xe = np.zeros(va.dim) if sc.ref_x0 is None else np.asarray(sc.ref_x0, float).reshape(va.dim)
    XE = np.zeros((K + 1, va.dim))
    UR = np.zeros((K + 1, model.m))
    sim = FosSimulator(model, sc.x0, K, overflow=DIVERGENCE_NORM)
    try:
        for k in range(K + 1):
            XE[k] = xe
            UR[k] = exo_input(k, xe)
            xt = augment(layout, sim.x, sim.u, k)
            uk = UR[k] + syn.K_v @ (xt - xe)
            if k == K:
                sim.u[k] = uk
                sim.w[k] = W[k]
                break
            sim.step(uk, W[k])
            xe = va.step(xe, UR[k])
    except NumericOverflow:
        pass
    traj = sim.trajectory()
    n = len(traj.states)
    traj.ref_states = XE[:n] @ va.C.T
    traj.ref_inputs = UR[:n]
    traj.errors = traj.states - traj.ref_states
    traj.extra["exo_states"] = XE[:n]
    b_xr = float(np.max(np.linalg.norm(traj.ref_states, axis=1)))
    b_ur = float(np.max(np.linalg.norm(traj.ref_inputs, axis=1)))
    if syn.feasible:
        d = compute_tracking_bound_d(model, syn.v, syn.kappa, b_xr, b_ur)
        traj.bound = syn.gamma(model.b_w) + d
    else:
        d = float("nan")
        traj.bound = float("nan")
    traj.extra.update(d=d, b_xr=b_xr, b_ur=b_ur, ultimate_error=ultimate_sup(traj.error_norms))
    return traj


def ultimate_sup(norms, fraction: float = 0.5) -> float:
    """Sup over the trailing ``fraction`` of a norm sequence."""
    norms = np.asarray(norms)
    start = int(len(norms) * (1.0 - fraction))
    return float(np.max(norms[start:])) if len(norms) else float("nan")


def run(sc: Scenario) -> Trajectory:
    return {"regulate": run_regulation, "track-fos": run_track_fos,
            "track-vapprox": run_track_vapprox}[sc.kind](sc)


def diverged(traj: Trajectory, threshold: float = 1e6) -> bool:
    return traj.diverged or bool(np.max(traj.state_norms) > threshold)
