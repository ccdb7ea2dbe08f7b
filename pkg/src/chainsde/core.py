"""State, parameters, and coefficient algebra for the triangular noise chain.

The model is a d-coordinate chain (d = 2 or 3) in which noise enters only
the last coordinate and propagates to the first through integration:

    dX = Y dt,   dY = Z dt,   dZ = |X|^alpha dB        (d = 3)
    dX = Y dt,   dY = |X|^alpha dB                     (d = 2)

with Holder exponent alpha in (0, 1).  This module owns the immutable
value types shared by the solvers and the closed-form pieces: the
diffusion coefficient |x|^alpha, the mean-value upper bound used in
divergence estimates, and the exact flow of the drift subsystem with the
last coordinate frozen.  All arithmetic is 64-bit binary floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "ChainState",
    "SystemParams",
    "diffusion_coeff",
    "mvt_bound",
    "drift_flow",
]


@dataclass(frozen=True)
class ChainState:
    """Solution vector (x, y) or (x, y, z) at one time point.

    Coordinates must be finite unless the state is explicitly flagged as
    blown up (the solver uses the flag when a step overflows).
    """

    t: float
    coords: tuple[float, ...]
    blown_up: bool = False

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "coords", tuple(float(c) for c in self.coords))
        if not (math.isfinite(self.t) and self.t >= 0.0):
            raise ValueError(f"time must be finite and >= 0, got {self.t}")
        if len(self.coords) not in (2, 3):
            raise ValueError(f"chain order must be 2 or 3, got {len(self.coords)} coordinates")
        if not self.blown_up and not all(math.isfinite(c) for c in self.coords):
            raise ValueError(f"non-finite coordinates {self.coords} without blowup flag")

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def x(self) -> float:
        return self.coords[0]

    @property
    def y(self) -> float:
        return self.coords[1]

    @property
    def z(self) -> float:
        if len(self.coords) != 3:
            raise ValueError("z is only defined for chain order 3")
        return self.coords[2]

    def reflected(self) -> "ChainState":
        """Image under the sign symmetry (x, y, z) -> (-x, -y, -z)."""
        return ChainState(self.t, tuple(-c for c in self.coords), self.blown_up)

    def is_origin(self) -> bool:
        return all(c == 0.0 for c in self.coords)


@dataclass(frozen=True)
class SystemParams:
    """Holder exponent, chain order, and initial state of one system.

    alpha may be anywhere in (0, 1) so sub-threshold exponents can be
    explored; the initial state must not be the origin.
    """

    alpha: float
    chain_order: int
    initial: ChainState

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.chain_order not in (2, 3):
            raise ValueError(f"chain_order must be 2 or 3, got {self.chain_order}")
        if self.initial.dim != self.chain_order:
            raise ValueError(
                f"initial state has {self.initial.dim} coordinates, expected {self.chain_order}"
            )
        if self.initial.t != 0.0:
            raise ValueError(f"initial state must be at t = 0, got t = {self.initial.t}")
        if self.initial.is_origin():
            raise ValueError("initial state must not be the origin")


def diffusion_coeff(x: float, alpha: float) -> float:
    """Noise coefficient |x|^alpha.

    Evaluated as exp(alpha * ln|x|) with an explicit x = 0 branch so the
    origin returns exactly 0.0 rather than propagating ln(0).
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not math.isfinite(x):
        raise ValueError(f"x must be finite, got {x}")
    if x == 0.0:
        return 0.0
    return math.exp(alpha * math.log(abs(x)))


def mvt_bound(a: float, b: float, alpha: float) -> float:
    """Upper bound alpha * a**(alpha - 1) * (b - a) for b**alpha - a**alpha.

    Valid for 0 < a < b: the derivative of x**alpha is decreasing, so the
    mean-value slope is at most the slope at a.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not (a > 0.0 and math.isfinite(a)):
        raise ValueError(f"a must be finite and > 0, got {a}")
    if not (b > a and math.isfinite(b)):
        raise ValueError(f"b must be finite and > a, got {b}")
    return alpha * a ** (alpha - 1.0) * (b - a)


def drift_flow(state: ChainState, h: float) -> ChainState:
    """Advance the drift subsystem by h with the last coordinate frozen.

    The drift rows form a nilpotent linear chain, so the flow is an exact
    polynomial: for order 3, (x, y, z) maps to
    (x + y h + z h^2/2, y + z h, z); for order 2, (x + y h, y).
    Exact up to floating-point rounding of the handful of operations.
    """
    if not (h > 0.0 and math.isfinite(h)):
        raise ValueError(f"h must be finite and > 0, got {h}")
    if state.blown_up:
        raise ValueError("cannot advance a blown-up state")
    if state.dim == 3:
        x, y, z = state.coords
        coords = (x + h * y + (0.5 * h * h) * z, y + h * z, z)
    else:
        x, y = state.coords
        coords = (x + h * y, y)
    return ChainState(state.t + h, coords)
