"""Distributed sliding-mode consensus law with adaptive bias estimation.

Nothing here evaluates the plant model: the controller only sees biased
relative positions, unbiased velocities, its own bias estimate, and the
neighbours' sliding variables. Gain conditions are checked against externally
supplied bound constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import NetworkTopology, augmented_matrix, kron_expand


@dataclass(frozen=True)
class ControlGains:
    """Network gain ``alpha``, sliding-surface gain ``lam`` (1/s) and per-agent ``beta``/``gamma``."""

    alpha: float
    lam: float
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if beta.shape != gamma.shape:
            raise ValueError(f"beta and gamma lengths differ: {beta.shape} vs {gamma.shape}")
        if self.alpha < 0 or self.lam < 0 or np.any(beta < 0) or np.any(gamma < 0):
            raise ValueError("control gains must be nonnegative")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def uniform(cls, alpha, lam, beta, gamma, n) -> "ControlGains":
        return cls(alpha, lam, np.full(n, float(beta)), np.full(n, float(gamma)))

    @property
    def n(self) -> int:
        return self.beta.shape[0]


def smoothed_sign(x, epsilon: float = 0.0):
    """Componentwise signum with ``sgn(0) = 0``; a saturation ``clip(x/eps, -1, 1)`` if ``epsilon > 0``."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    x = np.asarray(x, dtype=float)
    if epsilon == 0:
        return np.sign(x)
    return np.clip(x / epsilon, -1.0, 1.0)


def sliding_variable(q_dot_i, y_i, b_hat_i, lam: float) -> np.ndarray:
    """``s_i = q_dot_i + lam * (y_i - b_hat_i)`` where ``y_i = q_i + b_i`` is the biased measurement."""
    return np.asarray(q_dot_i, dtype=float) + lam * (
        np.asarray(y_i, dtype=float) - np.asarray(b_hat_i, dtype=float)
    )


def control_force_agent(i: int, all_s, topology: NetworkTopology, q_dot_i, gains: ControlGains,
                        epsilon: float = 0.0) -> np.ndarray:
    """Force on follower ``i`` from its own and its neighbours' sliding variables.

    The leader's sliding variable is identically zero in the leader frame, so the
    leader link contributes ``a_i0 * s_i`` to the disagreement sum.
    """
    all_s = np.asarray(all_s, dtype=float).reshape(topology.n, 3)
    s_i = all_s[i]
    disagreement = topology.leader_weights[i] * s_i
    for j in topology.neighbors(i):
        disagreement = disagreement + topology.adjacency[i, j] * (s_i - all_s[j])
    sw = smoothed_sign(s_i, epsilon)
    speed = float(np.linalg.norm(q_dot_i))
    return -gains.alpha * disagreement - gains.beta[i] * sw - gains.gamma[i] * speed * sw


def control_force_stacked(all_s, topology: NetworkTopology, all_q_dot, gains: ControlGains,
                          epsilon: float = 0.0) -> np.ndarray:
    """Stacked form ``-alpha H1 s - B sgn(s) - Gamma Q sgn(s)`` on 3n-vectors."""
    n = topology.n
    s = np.asarray(all_s, dtype=float).reshape(-1)
    qd = np.asarray(all_q_dot, dtype=float).reshape(-1)
    if s.shape != (3 * n,) or qd.shape != (3 * n,):
        raise ValueError(f"expected 3n = {3 * n} stacked components, got s {s.shape}, q_dot {qd.shape}")
    if gains.n != n:
        raise ValueError(f"gains are sized for {gains.n} agents, topology has {n}")
    H1 = kron_expand(augmented_matrix(topology))
    B = np.repeat(gains.beta, 3)
    GQ = np.repeat(gains.gamma * np.linalg.norm(qd.reshape(n, 3), axis=1), 3)
    sw = smoothed_sign(s, epsilon)
    return -gains.alpha * (H1 @ s) - B * sw - GQ * sw


def bias_update(q_dot_i) -> np.ndarray:
    """Bias-estimate rate ``-q_dot_i``."""
    return -np.asarray(q_dot_i, dtype=float)


@dataclass
class GainCheck:
    agent: int
    beta_margin: float
    gamma_margin: float
    k_m: float
    k_c: float
    k_g: float

    @property
    def passed(self) -> bool:
        return self.beta_margin > 0 and self.gamma_margin > 0


@dataclass
class GainReport:
    lam: float
    agents: list[GainCheck] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "lambda": self.lam,
            "failures": list(self.failures),
            "agents": [
                {
                    "agent": c.agent,
                    "beta_margin": c.beta_margin,
                    "gamma_margin": c.gamma_margin,
                    "k_m": c.k_m,
                    "k_c": c.k_c,
                    "k_g": c.k_g,
                }
                for c in self.agents
            ],
        }


def validate_gains(gains: ControlGains, bounds: Sequence) -> GainReport:
    """Check ``beta_i > k_g`` and ``gamma_i > k_c,i + 2 lam k_m,i`` for every agent.

    ``bounds`` holds one object per agent with ``k_m``, ``k_c``, ``k_g``
    attributes. The conditions are sufficient, not necessary, for convergence.
    """
    if len(bounds) != gains.n:
        raise ValueError(f"need {gains.n} bound triples, got {len(bounds)}")
    report = GainReport(lam=gains.lam)
    for i, b in enumerate(bounds):
        beta_margin = float(gains.beta[i] - b.k_g)
        gamma_need = b.k_c + 2.0 * gains.lam * b.k_m
        gamma_margin = float(gains.gamma[i] - gamma_need)
        report.agents.append(GainCheck(i + 1, beta_margin, gamma_margin, b.k_m, b.k_c, b.k_g))
        if beta_margin <= 0:
            report.failures.append(
                f"agent {i + 1}: beta > k_g violated (beta = {gains.beta[i]:g}, k_g = {b.k_g:.6g})"
            )
        if gamma_margin <= 0:
            report.failures.append(
                f"agent {i + 1}: gamma > k_c + 2*lambda*k_m violated "
                f"(gamma = {gains.gamma[i]:g}, required > {gamma_need:.6g})"
            )
    return report
