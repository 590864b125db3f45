"""Closed-loop simulation of the follower network.

Each follower is propagated under its own plant model while the controller
acts on biased position measurements ``y_i = q_i + b_i``. Integration is
classical fixed-step RK4 with synchronous communication: every agent reads
its neighbours' sliding variables at the same stage time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import control, dynamics
from .analyze import lyapunov_value
from .control import ControlGains
from .dynamics import AgentParams, AgentState, BoundConstants, LeaderOrbit
from .graph import NetworkTopology, augmented_matrix
from .kernels import get_backend

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e9


class SimulationDiverged(RuntimeError):
    def __init__(self, time, agent, component, value):
        self.time, self.agent, self.component, self.value = time, agent, component, value
        super().__init__(
            f"state diverged at t = {time:.6g} s: agent {agent}, {component} = {value!r}"
        )


@dataclass(frozen=True)
class OrbitTable:
    """Tabulated ``theta_dot(t)``/``theta_ddot(t)``, linearly interpolated and clamped at the ends."""

    t: np.ndarray
    theta_dot: np.ndarray
    theta_ddot: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) <= 0):
            raise ValueError("orbit table times must be a non-empty increasing sequence")
        for name in ("theta_dot", "theta_ddot"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != t.shape:
                raise ValueError(f"orbit table {name} must have {t.size} entries")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "t", t)

    def at(self, t: float) -> tuple[float, float]:
        return float(np.interp(t, self.t, self.theta_dot)), float(np.interp(t, self.t, self.theta_ddot))


@dataclass(frozen=True)
class InitSpec:
    q_range: tuple[float, float] = (0.0, 9.0)
    qdot_range: tuple[float, float] = (0.0, 6.0)
    bias_range: tuple[float, float] = (-1.0, 2.0)
    bhat_rule: str = "offset"
    bhat_offset: float = 1.0
    explicit_biases: np.ndarray | None = None
    explicit_q: np.ndarray | None = None
    explicit_qdot: np.ndarray | None = None
    explicit_bhat: np.ndarray | None = None

    def __post_init__(self):
        if self.bhat_rule not in ("offset", "zero", "true"):
            raise ValueError(f"unknown bhat_rule {self.bhat_rule!r}")


@dataclass(frozen=True)
class Scenario:
    topology: NetworkTopology
    orbit: LeaderOrbit
    gains: ControlGains
    masses: np.ndarray
    init: InitSpec
    seed: int
    t_end: float
    dt: float = 1e-3
    sign_epsilon: float = 0.0
    stride: int = 1
    disturbances: np.ndarray | None = None
    orbit_table: OrbitTable | None = None
    region_radius: float = 20.0
    analysis: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        n = self.topology.n
        masses = np.broadcast_to(np.asarray(self.masses, dtype=float), (n,)).copy()
        object.__setattr__(self, "masses", masses)
        dist = np.zeros((n, 3)) if self.disturbances is None else np.asarray(self.disturbances, dtype=float)
        object.__setattr__(self, "disturbances", np.broadcast_to(dist, (n, 3)).copy())
        if self.gains.n != n:
            raise ValueError(f"gains sized for {self.gains.n} agents but topology has {n}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end >= self.dt:
            raise ValueError("t_end must be at least dt")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.sign_epsilon < 0:
            raise ValueError("sign_epsilon must be nonnegative")

    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def agent_params(self, biases) -> list[AgentParams]:
        biases = np.asarray(biases, dtype=float).reshape(self.n, 3)
        return [
            AgentParams(
                mass=float(self.masses[i]),
                true_bias=biases[i],
                beta=float(self.gains.beta[i]),
                gamma=float(self.gains.gamma[i]),
                disturbance=self.disturbances[i],
            )
            for i in range(self.n)
        ]

    def orbit_at(self, t: float) -> LeaderOrbit:
        if self.orbit_table is None:
            return self.orbit
        return self.orbit.at(*self.orbit_table.at(t))

    def replace(self, **changes) -> "Scenario":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class InitialConditions:
    states: list[AgentState]
    biases: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.array([np.concatenate([s.q, s.q_dot, s.b_hat]) for s in self.states])


@dataclass
class SimTrace:
    """Sampled closed-loop trajectory; agent arrays have shape ``(samples, n, 3)``."""

    t: np.ndarray
    q: np.ndarray
    q_dot: np.ndarray
    b_hat: np.ndarray
    s: np.ndarray
    tau: np.ndarray
    V: np.ndarray
    true_bias: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.q.shape[1]

    @property
    def b_tilde(self) -> np.ndarray:
        return self.true_bias[None] - self.b_hat

    @property
    def q_plus_b_tilde(self) -> np.ndarray:
        return self.q + self.b_tilde


def sample_initial_conditions(scenario: Scenario) -> InitialConditions:
    """Uniform componentwise draws for q, q_dot and the true bias, in that order.

    Explicit values in the init spec replace the corresponding draw (the draw
    is still consumed so the remaining quantities do not shift with it).
    """
    n = scenario.n
    init = scenario.init
    rng = np.random.default_rng(scenario.seed)
    q = rng.uniform(*init.q_range, size=(n, 3))
    qd = rng.uniform(*init.qdot_range, size=(n, 3))
    b = rng.uniform(*init.bias_range, size=(n, 3))
    if init.explicit_q is not None:
        q = np.asarray(init.explicit_q, dtype=float).reshape(n, 3)
    if init.explicit_qdot is not None:
        qd = np.asarray(init.explicit_qdot, dtype=float).reshape(n, 3)
    if init.explicit_biases is not None:
        b = np.asarray(init.explicit_biases, dtype=float).reshape(n, 3)
    if init.explicit_bhat is not None:
        bh = np.asarray(init.explicit_bhat, dtype=float).reshape(n, 3)
    elif init.bhat_rule == "offset":
        bh = b - init.bhat_offset
    elif init.bhat_rule == "zero":
        bh = np.zeros((n, 3))
    else:
        bh = b.copy()
    states = [AgentState(q[i], qd[i], bh[i]) for i in range(n)]
    return InitialConditions(states, b)


def closed_loop_derivative(x, t: float, scenario: Scenario, biases) -> np.ndarray:
    """Reference right-hand side assembled from the per-agent module operations.

    ``x`` has shape ``(n, 9)`` with rows ``[q, q_dot, b_hat]``. This path is
    slow and exists as the readable definition the kernels are checked against.
    """
    x = np.asarray(x, dtype=float).reshape(scenario.n, 9)
    params = scenario.agent_params(biases)
    orbit = scenario.orbit_at(t)
    gains = scenario.gains
    all_s = np.array([
        control.sliding_variable(x[i, 3:6], x[i, 0:3] + params[i].true_bias, x[i, 6:9], gains.lam)
        for i in range(scenario.n)
    ])
    out = np.empty_like(x)
    for i in range(scenario.n):
        state = AgentState(x[i, 0:3], x[i, 3:6], x[i, 6:9])
        tau = control.control_force_agent(i, all_s, scenario.topology, state.q_dot, gains,
                                          scenario.sign_epsilon)
        try:
            acc = dynamics.el_accel(state, tau + params[i].disturbance, params[i], orbit)
        except dynamics.DynamicsFault as exc:
            raise dynamics.DynamicsFault(f"agent {i + 1}: {exc}") from exc
        out[i, 0:3] = state.q_dot
        out[i, 3:6] = acc
        out[i, 6:9] = control.bias_update(state.q_dot)
    return out


def kernel_args(scenario: Scenario, biases) -> tuple:
    """Positional model arguments shared by both kernel backends."""
    n = scenario.n
    g = scenario.gains
    if scenario.orbit_table is None:
        tab = (np.zeros(1), np.array([scenario.orbit.theta_dot]), np.array([scenario.orbit.theta_ddot]))
    else:
        ot = scenario.orbit_table
        tab = (ot.t, ot.theta_dot, ot.theta_ddot)
    return (
        np.ascontiguousarray(augmented_matrix(scenario.topology)),
        np.ascontiguousarray(np.asarray(biases, dtype=float).reshape(n, 3)),
        scenario.masses.copy(),
        g.beta.copy(),
        g.gamma.copy(),
        np.ascontiguousarray(scenario.disturbances),
        float(g.alpha),
        float(g.lam),
        float(scenario.sign_epsilon),
        float(scenario.orbit.mu),
        float(scenario.orbit.r_l),
        *(np.ascontiguousarray(a, dtype=float) for a in tab),
    )


def agent_bounds(scenario: Scenario, biases=None) -> list[BoundConstants]:
    """Per-agent bound constants over the configured region.

    A constant disturbance adds its norm to ``k_g`` since it enters the plant
    alongside gravity.
    """
    params = scenario.agent_params(np.zeros((scenario.n, 3)) if biases is None else biases)
    if scenario.orbit_table is None:
        orbits = [scenario.orbit]
    else:
        ot = scenario.orbit_table
        orbits = [scenario.orbit.at(a, b) for a, b in zip(ot.theta_dot, ot.theta_ddot)]
    cache: dict[float, BoundConstants] = {}
    out = []
    for p in params:
        if p.mass not in cache:
            per_orbit = [dynamics.bound_constants(p, o, scenario.region_radius) for o in orbits]
            cache[p.mass] = BoundConstants(
                k_m=p.mass,
                k_c=max(b.k_c for b in per_orbit),
                k_g=max(b.k_g for b in per_orbit),
            )
        b = cache[p.mass]
        out.append(BoundConstants(b.k_m, b.k_c, b.k_g + float(np.linalg.norm(p.disturbance))))
    return out


def sliding_series(q, q_dot, b_hat, biases, lam):
    return q_dot + lam * ((q + biases) - b_hat)


def control_series(s, q_dot, scenario: Scenario):
    """Controller output at every sample; matches ``control_force_stacked`` per row."""
    g = scenario.gains
    H = augmented_matrix(scenario.topology)
    sw = control.smoothed_sign(s, scenario.sign_epsilon)
    speed = np.linalg.norm(q_dot, axis=-1)
    return -g.alpha * np.einsum("ij,tjc->tic", H, s) - (g.beta + g.gamma * speed)[..., None] * sw


def integrate(scenario: Scenario, backend: str | None = None,
              initial: InitialConditions | None = None) -> SimTrace:
    """Run the closed loop from ``initial`` (sampled from the seed by default)."""
    ic = initial if initial is not None else sample_initial_conditions(scenario)
    bounds = agent_bounds(scenario, ic.biases)
    report = control.validate_gains(scenario.gains, bounds)
    if not report.passed:
        log.warning("gain conditions not met: %s", "; ".join(report.failures))

    kern = get_backend(backend)
    x0 = ic.stacked()
    samples, steps, fail_step, fail_state = kern.integrate(
        x0, 0.0, scenario.dt, scenario.n_steps, scenario.stride, DIVERGENCE_LIMIT,
        *kernel_args(scenario, ic.biases),
    )
    if fail_step >= 0:
        bad = ~(np.isfinite(fail_state) & (np.abs(fail_state) <= DIVERGENCE_LIMIT))
        i, c = np.argwhere(bad)[0]
        names = ["q_x", "q_y", "q_z", "qd_x", "qd_y", "qd_z", "bhat_x", "bhat_y", "bhat_z"]
        raise SimulationDiverged(fail_step * scenario.dt, int(i) + 1, names[c], float(fail_state[i, c]))

    q = samples[:, :, 0:3]
    qd = samples[:, :, 3:6]
    bh = samples[:, :, 6:9]
    s = sliding_series(q, qd, bh, ic.biases, scenario.gains.lam)
    tau = control_series(s, qd, scenario)
    V = lyapunov_value(s, scenario.masses)
    meta = {
        "seed": scenario.seed,
        "backend": backend or _backend_name(kern),
        "gain_validation": report.to_dict(),
        "bounds": [{"k_m": b.k_m, "k_c": b.k_c, "k_g": b.k_g} for b in bounds],
        "dt": scenario.dt,
        "stride": scenario.stride,
        "sign_epsilon": scenario.sign_epsilon,
    }
    return SimTrace(
        t=steps * scenario.dt,
        q=q, q_dot=qd, b_hat=bh, s=s, tau=tau, V=V,
        true_bias=np.array(ic.biases, dtype=float),
        metadata=meta,
    )


def _backend_name(mod) -> str:
    from .kernels import BACKENDS

    for name, m in BACKENDS.items():
        if m is mod:
            return name
    return "unknown"
