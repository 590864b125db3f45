"""Post-processing checks of the convergence guarantees on simulated traces."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from .graph import NetworkTopology, augmented_matrix

if TYPE_CHECKING:
    from .simulate import Scenario, SimTrace


class NotPositiveDefinite(ValueError):
    pass


class FitError(ValueError):
    pass


def lyapunov_value(s, masses) -> np.ndarray | float:
    """``V = 1/2 s^T M s`` for sliding variables of shape ``(..., n, 3)`` or stacked ``(3n,)``."""
    s = np.asarray(s, dtype=float)
    m = np.asarray(masses, dtype=float)
    if s.ndim == 1:
        s = s.reshape(-1, 3)
    V = 0.5 * np.einsum("...ic,i->...", s * s, np.broadcast_to(m, s.shape[-2:-1]))
    return float(V) if np.ndim(V) == 0 else V


def theoretical_rate(topology: NetworkTopology, gains, masses) -> float:
    """Guaranteed decay rate ``2 alpha lambda_min(H) / max_i m_i`` of the Lyapunov function."""
    H = augmented_matrix(topology)
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(
            "L + diag(a_i0) is not positive definite; every follower needs a path to the leader"
        ) from None
    lam_min = float(np.linalg.eigvalsh(H)[0])
    return 2.0 * gains.alpha * lam_min / float(np.max(masses))


def closed_form_solution(q_star, b_tilde_star, lam: float, t):
    """Post-surface solution from an anchor ``(q*, b_tilde*)`` with ``s = 0`` thereafter.

    Returns ``(q_dot, q, b_tilde)``; a vector ``t`` adds a leading time axis.
    """
    q0 = np.asarray(q_star, dtype=float)
    b0 = np.asarray(b_tilde_star, dtype=float)
    t = np.asarray(t, dtype=float)
    decay = np.exp(-2.0 * lam * t).reshape(t.shape + (1,) * q0.ndim)
    plus = q0 + b0
    minus = 0.5 * (q0 - b0)
    return -lam * plus * decay, 0.5 * plus * decay + minus, 0.5 * plus * decay - minus


@dataclass
class DecayFit:
    rate: float
    r_squared: float
    n_samples: int
    t_start: float
    t_end: float


def fit_decay_rate(t, y, t_start: float | None = None, skip_fraction: float = 0.2,
                   floor_ratio: float = 1e-8, min_samples: int = 10) -> DecayFit:
    """Negated least-squares slope of ``log y`` against ``t``.

    The window starts at ``t_start`` (or after the first ``skip_fraction`` of
    samples) and runs until the series first drops below ``floor_ratio`` times
    its maximum over the window.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    start = int(np.searchsorted(t, t_start)) if t_start is not None else int(len(t) * skip_fraction)
    tw, yw = t[start:], y[start:]
    if len(yw) == 0:
        raise FitError("empty fit window")
    floor = floor_ratio * float(np.max(yw))
    below = np.flatnonzero(~(yw > floor))
    stop = below[0] if below.size else len(yw)
    tw, yw = tw[:stop], yw[:stop]
    if len(tw) < min_samples:
        raise FitError(f"only {len(tw)} usable samples in fit window (need {min_samples})")
    ly = np.log(yw)
    slope, icept = np.polyfit(tw, ly, 1)
    resid = ly - (slope * tw + icept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return DecayFit(float(-slope) + 0.0, r2, len(tw), float(tw[0]), float(tw[-1]))


@dataclass
class AnalysisSettings:
    anchor_threshold: float = 1e-3
    lyapunov_bound_tol: float = 0.05
    monotone_tol: float = 1e-6
    floor_ratio: float = 1e-10
    fit_skip: float = 0.2
    fit_floor: float = 1e-8
    rate_tol: float = 0.3
    limit_tol: float = 0.05
    tracking_window: float = 10.0
    tracking_tol: float = 0.01
    # applied to the Lyapunov checks when the sign is smoothed
    smoothed_relax: float = 2.0

    @classmethod
    def from_dict(cls, d: dict | None) -> "AnalysisSettings":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown analysis settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float | None
    tolerance: float | None
    detail: str = ""


@dataclass
class ConvergenceReport:
    eta_theoretical: float
    rate_s: DecayFit | None
    rate_q_plus_b_tilde: DecayFit | None
    rate_q_dot: DecayFit | None
    anchor_time: float | None
    predicted_q_limit: list | None
    predicted_b_tilde_limit: list | None
    residuals: dict[str, float] = field(default_factory=dict)
    checks: list[CheckResult] = field(default_factory=list)
    gain_validation: dict[str, Any] = field(default_factory=dict)
    sufficient_conditions_met: bool = True
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def lyapunov_bound_ratio(t, V, eta: float, floor_ratio: float = 1e-10) -> tuple[float, int]:
    """Max of ``V(t) / (V(0) e^{-eta t})`` over the samples before ``V`` first falls below the floor."""
    V = np.asarray(V, dtype=float)
    t = np.asarray(t, dtype=float)
    V0 = V[0]
    if V0 == 0:
        return 0.0, 0
    stop = _pre_floor(V, floor_ratio)
    ratio = V[:stop] / (V0 * np.exp(-eta * (t[:stop] - t[0])))
    return float(np.max(ratio)), stop


def lyapunov_max_increase(V, floor_ratio: float = 1e-10) -> float:
    """Largest ``V[k+1] - V[k]`` over the pre-floor window, as a fraction of ``V(0)``."""
    V = np.asarray(V, dtype=float)
    if V[0] == 0:
        return 0.0
    stop = _pre_floor(V, floor_ratio)
    if stop < 2:
        return 0.0
    return float(np.max(np.diff(V[:stop]))) / V[0]


def _pre_floor(V, floor_ratio):
    below = np.flatnonzero(V < floor_ratio * V[0])
    return int(below[0]) if below.size else len(V)


def find_anchor(t, s, threshold: float) -> int | None:
    norms = np.linalg.norm(np.asarray(s).reshape(len(t), -1), axis=1)
    hit = np.flatnonzero(norms < threshold)
    return int(hit[0]) if hit.size else None


def closed_form_tracking_error(trace: "SimTrace", anchor: int, lam: float, window: float) -> float:
    """Max componentwise deviation of simulated ``(q, b_tilde)`` from the closed form over ``window`` seconds,
    relative to each agent's anchor amplitude ``max(|q*|, |b_tilde*|)``."""
    t = trace.t
    q_star = trace.q[anchor]
    b_star = trace.b_tilde[anchor]
    sel = (t >= t[anchor]) & (t <= t[anchor] + window + 1e-12)
    _, q_cf, b_cf = closed_form_solution(q_star, b_star, lam, t[sel] - t[anchor])
    amp = np.maximum(np.abs(q_star).max(axis=1), np.abs(b_star).max(axis=1))
    amp = np.where(amp > 0, amp, 1.0)[None, :, None]
    err_q = np.abs(trace.q[sel] - q_cf) / amp
    err_b = np.abs(trace.b_tilde[sel] - b_cf) / amp
    return float(max(err_q.max(), err_b.max()))


def max_plant_force(trace: "SimTrace", scenario: "Scenario") -> np.ndarray:
    """Per-agent maximum of ``||g_i(q(t)) + d_i||`` along the trace."""
    from .dynamics import gravity_vector

    params = scenario.agent_params(trace.true_bias)
    out = np.zeros(trace.n)
    for k, tk in enumerate(trace.t):
        orbit = scenario.orbit_at(float(tk))
        for i, p in enumerate(params):
            f = gravity_vector(trace.q[k, i], p, orbit) + p.disturbance
            out[i] = max(out[i], float(np.linalg.norm(f)))
    return out


def verify_theorem(trace: "SimTrace", scenario: "Scenario",
                   settings: AnalysisSettings | None = None) -> ConvergenceReport:
    """Check the convergence claims on a finished trace.

    Checks: Lyapunov envelope ``V(0) e^{-eta t}``, stepwise monotonicity of
    ``V``, fitted decay rates of ``||q + b_tilde||`` and ``||q_dot||`` against
    ``2 lambda``, terminal position/bias-error limits predicted from the anchor,
    tracking of the closed-form solution, and an a-posteriori ``beta > ||g + d||``
    check. The gain conditions are sufficient only, so a violation is reported
    as a flag rather than as a predicted divergence.
    """
    from .control import validate_gains
    from .simulate import agent_bounds

    st = settings or AnalysisSettings.from_dict(scenario.analysis)
    lam = scenario.gains.lam
    eta = theoretical_rate(scenario.topology, scenario.gains, scenario.masses)
    smoothed = scenario.sign_epsilon > 0
    relax = st.smoothed_relax if smoothed else 1.0
    t = trace.t
    V = np.asarray(trace.V)
    checks: list[CheckResult] = []
    notes: list[str] = []

    gain_report = validate_gains(scenario.gains, agent_bounds(scenario, trace.true_bias))
    if not gain_report.passed:
        notes.append(
            "sufficient gain condition violated: " + "; ".join(gain_report.failures)
            + " (conditions are sufficient, not necessary; convergence may still occur)"
        )
    if smoothed:
        notes.append(
            f"boundary-layer sign (epsilon = {scenario.sign_epsilon:g}); Lyapunov checks use "
            f"tolerances relaxed by x{relax:g}"
        )

    ratio, _ = lyapunov_bound_ratio(t, V, eta, st.floor_ratio)
    bound_tol = st.lyapunov_bound_tol * relax
    checks.append(CheckResult("lyapunov_bound", ratio <= 1 + bound_tol, ratio, 1 + bound_tol,
                              "max V(t) / (V(0) exp(-eta t)) before the numerical floor"))
    inc = lyapunov_max_increase(V, st.floor_ratio)
    mono_tol = st.monotone_tol * relax
    checks.append(CheckResult("lyapunov_monotone", inc <= mono_tol, inc, mono_tol,
                              "max stepwise increase of V as a fraction of V(0)"))

    anchor = find_anchor(t, trace.s, st.anchor_threshold)
    qb = np.linalg.norm(trace.q_plus_b_tilde.reshape(len(t), -1), axis=1)
    qd = np.linalg.norm(trace.q_dot.reshape(len(t), -1), axis=1)
    sn = np.linalg.norm(trace.s.reshape(len(t), -1), axis=1)
    zero_run = qb.max() == 0 and qd.max() == 0 and sn.max() == 0

    rate_s = _try_fit(t, sn, None, st, notes, "||s||")
    rate_qb = rate_qd = None
    q_lim = b_lim = None
    if zero_run:
        notes.append("trace identically zero; rate and limit checks hold trivially")
        for name in ("rate_q_plus_b_tilde", "rate_q_dot", "terminal_q_limit", "terminal_b_tilde_limit",
                     "closed_form_tracking"):
            checks.append(CheckResult(name, True, 0.0, None, "zero trace"))
        q_lim = np.zeros((trace.n, 3)).tolist()
        b_lim = np.zeros((trace.n, 3)).tolist()
    elif anchor is None:
        notes.append(f"||s|| never fell below {st.anchor_threshold:g}; no anchor for closed-form checks")
        for name in ("rate_q_plus_b_tilde", "rate_q_dot", "terminal_q_limit", "terminal_b_tilde_limit",
                     "closed_form_tracking"):
            checks.append(CheckResult(name, False, None, None, "no anchor"))
    else:
        t_star = float(t[anchor])
        rate_qb = _try_fit(t, qb, t_star, st, notes, "||q + b_tilde||")
        rate_qd = _try_fit(t, qd, t_star, st, notes, "||q_dot||")
        target = 2.0 * lam
        for name, fit in (("rate_q_plus_b_tilde", rate_qb), ("rate_q_dot", rate_qd)):
            if fit is None:
                checks.append(CheckResult(name, False, None, st.rate_tol, "fit failed"))
            else:
                rel = abs(fit.rate - target) / target if target > 0 else abs(fit.rate)
                checks.append(CheckResult(name, rel <= st.rate_tol, fit.rate, st.rate_tol,
                                          f"fitted rate vs 2*lambda = {target:g}, relative error {rel:.3g}"))
        q_star = trace.q[anchor]
        b_star = trace.b_tilde[anchor]
        q_lim_a = 0.5 * (q_star - b_star)
        q_lim, b_lim = q_lim_a.tolist(), (-q_lim_a).tolist()
        dq = float(np.abs(trace.q[-1] - q_lim_a).max())
        db = float(np.abs(trace.b_tilde[-1] + q_lim_a).max())
        checks.append(CheckResult("terminal_q_limit", dq <= st.limit_tol, dq, st.limit_tol,
                                  "max |q(T) - (q* - b_tilde*)/2|"))
        checks.append(CheckResult("terminal_b_tilde_limit", db <= st.limit_tol, db, st.limit_tol,
                                  "max |b_tilde(T) + (q* - b_tilde*)/2|"))
        track = closed_form_tracking_error(trace, anchor, lam, st.tracking_window)
        checks.append(CheckResult("closed_form_tracking", track <= st.tracking_tol, track, st.tracking_tol,
                                  f"over {st.tracking_window:g} s after the anchor"))

    f_max = max_plant_force(trace, scenario)
    margin = float(np.min(scenario.gains.beta - f_max))
    checks.append(CheckResult("beta_exceeds_plant_force", margin > 0, margin, 0.0,
                              "min_i beta_i - max_t ||g_i + d_i|| along the trajectory"))

    residuals = {
        "final_q_dot_norm": float(qd[-1]),
        "final_q_plus_b_tilde_norm": float(qb[-1]),
        "final_s_norm": float(sn[-1]),
        "final_V": float(V[-1]),
    }
    return ConvergenceReport(
        eta_theoretical=eta,
        rate_s=rate_s,
        rate_q_plus_b_tilde=rate_qb,
        rate_q_dot=rate_qd,
        anchor_time=None if anchor is None else float(t[anchor]),
        predicted_q_limit=q_lim,
        predicted_b_tilde_limit=b_lim,
        residuals=residuals,
        checks=checks,
        gain_validation=gain_report.to_dict(),
        sufficient_conditions_met=gain_report.passed,
        notes=notes,
    )


def _try_fit(t, y, t_start, st: AnalysisSettings, notes: list, label: str) -> DecayFit | None:
    try:
        return fit_decay_rate(t, y, t_start=t_start, skip_fraction=st.fit_skip, floor_ratio=st.fit_floor)
    except FitError as exc:
        notes.append(f"{label} fit: {exc}")
        return None
