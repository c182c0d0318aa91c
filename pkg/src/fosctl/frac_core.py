"""Grünwald-Letnikov coefficients and exponential tail functions.

Coefficients are generated by the running product

    c_0 = 1,   c_{j+1} = c_j * (j - a) / (j + 1)

which never forms factorials or gamma ratios, so it cannot overflow and keeps
exact zeros for integer orders.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# closed form e^a - partial sum loses accuracy to cancellation beyond this
_TAIL_SWITCH = 12
_TAIL_RTOL = 1e-20


@dataclass(frozen=True)
class FracOrder:
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not math.isfinite(v) or v < 0.0:
            raise ValueError(f"fractional order must be finite and >= 0, got {self.value!r}")
        object.__setattr__(self, "value", v)

    def __float__(self):
        return self.value


def _order(a) -> float:
    return FracOrder(a).value if not isinstance(a, FracOrder) else a.value


def gl_coefficient(a, j: int) -> float:
    """Return c_j^a = (-1)^j * binom(a, j)."""
    a = _order(a)
    if j < 0:
        raise ValueError("j must be non-negative")
    c = 1.0
    for i in range(j):
        c *= (i - a) / (i + 1)
        if c == 0.0:
            break
    return c


@dataclass(frozen=True)
class CoeffTable:
    order: FracOrder
    coeffs: np.ndarray = field(repr=False)

    @property
    def horizon(self) -> int:
        return len(self.coeffs) - 1

    def __getitem__(self, j):
        return self.coeffs[j]


def coeff_table(a, J: int) -> CoeffTable:
    """Coefficients c_0^a .. c_J^a, one multiply per term."""
    order = a if isinstance(a, FracOrder) else FracOrder(a)
    if J < 0:
        raise ValueError("J must be non-negative")
    c = np.empty(J + 1)
    c[0] = 1.0
    for j in range(J):
        # + 0.0 turns the -0.0 produced past an integer order into +0.0
        c[j + 1] = c[j] * (j - order.value) / (j + 1) + 0.0
    c.flags.writeable = False
    return CoeffTable(order, c)


def gl_coefficients(a, J: int) -> np.ndarray:
    """Plain array form of :func:`coeff_table`."""
    return coeff_table(a, J).coeffs


def phi_tail_sum(a, v: int) -> float:
    """sum_{j >= v+1} a^j / j!, accumulated until terms stop mattering."""
    a = _order(a)
    if v < 0:
        raise ValueError("v must be non-negative")
    if a == 0.0:
        return 0.0
    # a^(v+1)/(v+1)! in log space, then the recurrence term *= a/(j+1)
    j = v + 1
    term = math.exp(j * math.log(a) - math.lgamma(j + 1))
    total = 0.0
    while term > 0.0:
        total += term
        # terms are decreasing once j+1 > a
        if j + 1 > a and term < _TAIL_RTOL * total:
            break
        term *= a / (j + 1)
        j += 1
    return total


def phi_tail(a, v: int) -> float:
    """Exponential tail e^a - sum_{j=0}^{v} a^j/j!, never negative.

    Uses the closed form for small ``v`` and the direct tail sum from
    ``v >= 12`` on, where the subtraction cancels catastrophically. The tail
    sum is also used below 12 when the closed form keeps fewer than about
    12 significant digits (small ``a``).
    """
    a = _order(a)
    if v < 0:
        raise ValueError("v must be non-negative")
    if v >= _TAIL_SWITCH:
        return phi_tail_sum(a, v)
    partial = 0.0
    term = 1.0  # 0^0 = 1
    for j in range(v + 1):
        if j > 0:
            term *= a / j
        partial += term
    closed = math.exp(a) - partial
    if closed < 1e-4 * math.exp(a):
        return phi_tail_sum(a, v)
    return max(closed, 0.0)


def phi_curve(a, v_max: int) -> np.ndarray:
    return np.array([phi_tail(a, v) for v in range(v_max + 1)])
