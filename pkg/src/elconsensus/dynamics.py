"""Relative translational orbit dynamics of a follower in Euler-Lagrange form.

Coordinates are expressed in the rotating leader-orbit frame
(radial x, along-track y, orbit-normal z) and satisfy

    M q'' + C(theta_dot) q' + g(theta_dot, theta_ddot, q) = tau.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

EARTH_MU = 3.986004418e14  # m^3/s^2


class DynamicsFault(ArithmeticError):
    """Degenerate geometry (follower at the attracting centre)."""


@dataclass(frozen=True)
class LeaderOrbit:
    """Leader reference orbit.

    ``theta_dot``/``theta_ddot`` default to the circular-orbit values
    ``sqrt(mu / r_l**3)`` and 0.
    """

    r_l: float
    mu: float = EARTH_MU
    theta_dot: float | None = None
    theta_ddot: float = 0.0

    def __post_init__(self):
        if not self.r_l > 0:
            raise ValueError(f"r_l must be positive, got {self.r_l}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.theta_dot is None:
            object.__setattr__(self, "theta_dot", float(np.sqrt(self.mu / self.r_l**3)))

    @classmethod
    def circular(cls, r_l: float, mu: float = EARTH_MU) -> "LeaderOrbit":
        return cls(r_l=r_l, mu=mu)

    def at(self, theta_dot: float, theta_ddot: float) -> "LeaderOrbit":
        return LeaderOrbit(self.r_l, self.mu, float(theta_dot), float(theta_ddot))


@dataclass(frozen=True)
class AgentParams:
    """Per-follower physical and gain parameters.

    ``true_bias`` is the constant offset on the relative-position sensor; it is
    never visible to the controller. ``disturbance`` is an optional constant
    external force (N) used for robustness experiments.
    """

    mass: float
    true_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    beta: float = 0.0
    gamma: float = 0.0
    disturbance: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be nonnegative")
        object.__setattr__(self, "true_bias", np.asarray(self.true_bias, dtype=float).reshape(3))
        object.__setattr__(self, "disturbance", np.asarray(self.disturbance, dtype=float).reshape(3))


@dataclass(frozen=True)
class AgentState:
    q: np.ndarray
    q_dot: np.ndarray
    b_hat: np.ndarray

    def __post_init__(self):
        for name in ("q", "q_dot", "b_hat"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has non-finite components: {v}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class BoundConstants:
    k_m: float
    k_c: float
    k_g: float


def follower_radius(q, orbit: LeaderOrbit) -> float:
    x, y, z = np.asarray(q, dtype=float)
    r_f = float(np.sqrt((orbit.r_l + x) ** 2 + y**2 + z**2))
    if not r_f > 0:
        raise DynamicsFault(f"follower radius is zero at q = {q}")
    return r_f


def mass_matrix(params: AgentParams) -> np.ndarray:
    return params.mass * np.eye(3)


def coriolis_matrix(params: AgentParams, orbit: LeaderOrbit) -> np.ndarray:
    # skew form: matches the +2*theta_dot*x_dot coupling in the along-track equation
    c = 2.0 * params.mass * orbit.theta_dot
    return np.array([[0.0, -c, 0.0], [c, 0.0, 0.0], [0.0, 0.0, 0.0]])


def gravity_vector(q, params: AgentParams, orbit: LeaderOrbit) -> np.ndarray:
    x, y, z = np.asarray(q, dtype=float)
    r_f = follower_radius(q, orbit)
    mu, r_l = orbit.mu, orbit.r_l
    k = mu / r_f**3
    w2 = orbit.theta_dot**2
    tdd = orbit.theta_ddot
    return params.mass * np.array(
        [
            (k - w2) * x - tdd * y + mu * (r_l / r_f**3 - 1.0 / r_l**2),
            tdd * x + (k - w2) * y,
            k * z,
        ]
    )


def el_accel(state: AgentState, tau, params: AgentParams, orbit: LeaderOrbit) -> np.ndarray:
    """Acceleration ``M^-1 (tau - C q' - g)``."""
    rhs = (
        np.asarray(tau, dtype=float)
        - coriolis_matrix(params, orbit) @ state.q_dot
        - gravity_vector(state.q, params, orbit)
    )
    return rhs / params.mass


def bound_constants(params: AgentParams, orbit: LeaderOrbit, region_radius: float,
                    points: int = 11) -> BoundConstants:
    """Local bounds on ``||M||``, ``||C||`` and ``||g||``.

    ``k_g`` is the maximum of ``||g(q)||`` over a ``points**3`` grid of the cube
    ``[-R, R]^3`` restricted to the ball ``||q|| <= R``. The gravity term grows
    without bound, so the result only holds on that region.
    """
    if not region_radius > 0:
        raise ValueError("region_radius must be positive")
    axis = np.linspace(-region_radius, region_radius, points)
    k_g = 0.0
    lim = region_radius * (1 + 1e-12)
    for q in itertools.product(axis, axis, axis):
        if np.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2) <= lim:
            k_g = max(k_g, float(np.linalg.norm(gravity_vector(q, params, orbit))))
    return BoundConstants(
        k_m=params.mass,
        k_c=2.0 * params.mass * abs(orbit.theta_dot),
        k_g=k_g,
    )
