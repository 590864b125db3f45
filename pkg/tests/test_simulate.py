import hashlib

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from elconsensus import control, dynamics
from elconsensus.control import ControlGains
from elconsensus.dynamics import AgentParams, LeaderOrbit
from elconsensus.graph import augmented_matrix, path_topology
from elconsensus.kernels import BACKENDS
from elconsensus.simulate import (
    InitialConditions,
    InitSpec,
    OrbitTable,
    Scenario,
    SimulationDiverged,
    closed_loop_derivative,
    integrate,
    kernel_args,
    sample_initial_conditions,
)

ORBIT = LeaderOrbit.circular(7078e3)


def make_scenario(n=5, **kw):
    base = dict(
        topology=path_topology(n),
        orbit=ORBIT,
        gains=ControlGains.uniform(1.0, 0.5, 20.2, 3.12, n),
        masses=np.ones(n),
        init=InitSpec(),
        seed=3,
        t_end=2.0,
        dt=1e-3,
        sign_epsilon=0.0,
        stride=10,
    )
    base.update(kw)
    return Scenario(**base)


def stacked_reference(x, t, sc, biases):
    """Independent composition: stacked controller plus matrix-form plant."""
    n = sc.n
    q, qd, bh = x[:, 0:3], x[:, 3:6], x[:, 6:9]
    s = qd + sc.gains.lam * (q + biases - bh)
    tau = control.control_force_stacked(s.ravel(), sc.topology, qd.ravel(), sc.gains, sc.sign_epsilon).reshape(n, 3)
    orbit = sc.orbit_at(t)
    out = np.empty_like(x)
    for i in range(n):
        p = AgentParams(sc.masses[i], biases[i], disturbance=sc.disturbances[i])
        M = dynamics.mass_matrix(p)
        rhs = tau[i] + p.disturbance - dynamics.coriolis_matrix(p, orbit) @ qd[i] - dynamics.gravity_vector(q[i], p, orbit)
        out[i] = np.concatenate([qd[i], np.linalg.solve(M, rhs), -qd[i]])
    return out


def test_reference_init_rule():
    sc = make_scenario()
    ic = sample_initial_conditions(sc)
    b_tilde = ic.biases - np.array([s.b_hat for s in ic.states])
    np.testing.assert_allclose(b_tilde, 1.0, atol=1e-15)
    q = np.array([s.q for s in ic.states])
    qd = np.array([s.q_dot for s in ic.states])
    assert q.min() >= 0 and q.max() <= 9
    assert qd.min() >= 0 and qd.max() <= 6
    assert ic.biases.min() >= -1 and ic.biases.max() <= 2


def test_sampling_is_deterministic_and_seeded():
    a = sample_initial_conditions(make_scenario()).stacked()
    b = sample_initial_conditions(make_scenario()).stacked()
    c = sample_initial_conditions(make_scenario(seed=4)).stacked()
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_explicit_initial_states_are_echoed():
    rng = np.random.default_rng(0)
    q, qd, bh, b = (rng.normal(size=(5, 3)) for _ in range(4))
    sc = make_scenario(init=InitSpec(explicit_q=q, explicit_qdot=qd, explicit_bhat=bh, explicit_biases=b))
    ic = sample_initial_conditions(sc)
    np.testing.assert_array_equal(ic.stacked(), np.concatenate([q, qd, bh], axis=1))
    np.testing.assert_array_equal(ic.biases, b)


@pytest.mark.parametrize("bhat_rule", ["zero", "true"])
def test_other_bhat_rules(bhat_rule):
    ic = sample_initial_conditions(make_scenario(init=InitSpec(bhat_rule=bhat_rule)))
    bh = np.array([s.b_hat for s in ic.states])
    np.testing.assert_array_equal(bh, 0.0 if bhat_rule == "zero" else ic.biases)


def test_equilibrium_derivative_is_zero():
    sc = make_scenario()
    b = np.random.default_rng(1).normal(size=(5, 3))
    x = np.concatenate([np.zeros((5, 6)), b], axis=1)
    np.testing.assert_allclose(closed_loop_derivative(x, 0.0, sc, b), 0.0, atol=1e-12)


def test_single_agent_without_surface_gain():
    sc = make_scenario(n=1, gains=ControlGains(1.0, 0.0, [2.0], [0.5]))
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 9))
    b = rng.normal(size=(1, 3))
    d = closed_loop_derivative(x, 0.0, sc, b)
    qd = x[0, 3:6]
    p = AgentParams(1.0)
    tau = -1.0 * qd - (2.0 + 0.5 * np.linalg.norm(qd)) * np.sign(qd)
    expected = tau - dynamics.coriolis_matrix(p, ORBIT) @ qd - dynamics.gravity_vector(x[0, :3], p, ORBIT)
    np.testing.assert_allclose(d[0, 3:6], expected, rtol=1e-13)


@pytest.mark.parametrize("eps", [0.0, 0.3])
def test_derivative_cross_implementation(eps):
    rng = np.random.default_rng(12)
    for _ in range(20):
        n = int(rng.integers(1, 7))
        sc = make_scenario(n=n, sign_epsilon=eps, masses=rng.uniform(0.5, 3, n),
                           disturbances=rng.normal(size=(n, 3)) * 0.1)
        x = rng.normal(size=(n, 9)) * 10
        b = rng.normal(size=(n, 3))
        np.testing.assert_allclose(closed_loop_derivative(x, 0.0, sc, b), stacked_reference(x, 0.0, sc, b),
                                   rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("eps", [0.0, 0.3])
def test_kernels_match_reference_derivative(backend, eps):
    kern = BACKENDS[backend]
    rng = np.random.default_rng(13)
    table = OrbitTable([0.0, 5.0, 10.0], [1.0e-3, 1.1e-3, 0.9e-3], [0.0, 2e-5, -4e-5])
    for k in range(20):
        n = int(rng.integers(1, 7))
        sc = make_scenario(n=n, sign_epsilon=eps, masses=rng.uniform(0.5, 3, n),
                           disturbances=rng.normal(size=(n, 3)) * 0.1,
                           orbit_table=table if k % 2 else None)
        x = rng.normal(size=(n, 9)) * 10
        b = rng.normal(size=(n, 3))
        t = float(rng.uniform(-1, 12))
        ref = closed_loop_derivative(x, t, sc, b)
        got = kern.derivative(x, t, *kernel_args(sc, b))
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)


def test_zero_run_is_identically_zero(backend):
    n = 3
    init = InitSpec(explicit_q=np.zeros((n, 3)), explicit_qdot=np.zeros((n, 3)),
                    explicit_bhat=np.zeros((n, 3)), explicit_biases=np.zeros((n, 3)))
    sc = make_scenario(n=n, gains=ControlGains.uniform(0, 0, 0, 0, n), init=init, t_end=1.0)
    tr = integrate(sc, backend=backend)
    for arr in (tr.q, tr.q_dot, tr.b_hat, tr.s, tr.tau, tr.V):
        assert not np.any(arr)


def ballistic_scenario(dt, t_end=2000.0):
    init = InitSpec(explicit_q=[[0.0, 0.0, 100.0]], explicit_qdot=[[0.0, 0.0, 0.1]],
                    explicit_bhat=[[0.0, 0.0, 0.0]], explicit_biases=[[0.0, 0.0, 0.0]])
    return make_scenario(n=1, gains=ControlGains(0.0, 0.5, [0.0], [0.0]), init=init,
                         t_end=t_end, dt=dt, stride=int(round(t_end / dt)))


def test_ballistic_against_reference_and_order(backend):
    def rhs(t, y):
        x, yy, z, xd, yd, zd = y
        thd, mu, rl = ORBIT.theta_dot, ORBIT.mu, ORBIT.r_l
        rf3 = ((rl + x) ** 2 + yy * yy + z * z) ** 1.5
        return [xd, yd, zd,
                2 * thd * yd - (mu / rf3 - thd**2) * x - mu * (rl / rf3 - 1 / rl**2),
                -2 * thd * xd - (mu / rf3 - thd**2) * yy,
                -mu / rf3 * z]

    ref = solve_ivp(rhs, (0, 2000), [0, 0, 100.0, 0, 0, 0.1], method="DOP853", rtol=1e-13, atol=1e-12).y[:, -1]
    errs = []
    for dt in (40.0, 20.0, 10.0):
        tr = integrate(ballistic_scenario(dt), backend=backend)
        final = np.concatenate([tr.q[-1, 0], tr.q_dot[-1, 0]])
        errs.append(np.linalg.norm(final - ref) / np.linalg.norm(ref))
    assert errs[-1] <= 1e-6
    order = np.log2(errs[0] / errs[1])
    assert order >= 3.5


def test_divergence_guard(backend):
    sc = make_scenario(gains=ControlGains.uniform(1e4, 0.5, 0, 0, 5), dt=0.01, t_end=5.0)
    with pytest.raises(SimulationDiverged) as err:
        integrate(sc, backend=backend)
    assert 1 <= err.value.agent <= 5
    assert err.value.component in {"q_x", "q_y", "q_z", "qd_x", "qd_y", "qd_z", "bhat_x", "bhat_y", "bhat_z"}
    assert 0 < err.value.time <= 5.0


def test_trace_identities(backend):
    sc = make_scenario(sign_epsilon=0.01, stride=1, t_end=3.0)
    tr = integrate(sc, backend=backend)
    assert len(tr.t) == sc.n_steps + 1
    lam = sc.gains.lam
    np.testing.assert_allclose(tr.s, tr.q_dot + lam * tr.q_plus_b_tilde, rtol=0, atol=1e-12)
    drift = np.abs((tr.b_hat + tr.q) - (tr.b_hat[0] + tr.q[0]))
    assert drift.max() <= 1e-9
    # finite-difference: d/dt b_tilde = q_dot
    dbt = np.gradient(tr.b_tilde, tr.t, axis=0)
    np.testing.assert_allclose(dbt[1:-1], tr.q_dot[1:-1], atol=1e-2)
    H = augmented_matrix(sc.topology)
    for k in (0, len(tr.t) // 2, -1):
        tau = control.control_force_stacked(tr.s[k].ravel(), sc.topology, tr.q_dot[k].ravel(), sc.gains, 0.01)
        np.testing.assert_allclose(tr.tau[k].ravel(), tau, rtol=1e-12, atol=1e-12)
    assert H.shape == (5, 5)


def test_determinism(backend):
    sc = make_scenario(t_end=1.0)
    a, b = integrate(sc, backend=backend), integrate(sc, backend=backend)
    digest = lambda tr: hashlib.sha256(np.concatenate([tr.q, tr.q_dot, tr.b_hat], axis=2).tobytes()).hexdigest()
    assert digest(a) == digest(b)


@pytest.mark.skipif("compiled" not in BACKENDS, reason="compiled kernel not built")
def test_backends_agree_on_smooth_run():
    sc = make_scenario(sign_epsilon=0.5, t_end=3.0)
    a, b = integrate(sc, backend="compiled"), integrate(sc, backend="python")
    np.testing.assert_allclose(a.q, b.q, rtol=0, atol=1e-10)
    np.testing.assert_allclose(a.q_dot, b.q_dot, rtol=0, atol=1e-10)


def test_constant_table_matches_circular(backend):
    thd = ORBIT.theta_dot
    table = OrbitTable([0.0, 1.0], [thd, thd], [0.0, 0.0])
    a = integrate(make_scenario(t_end=1.0), backend=backend)
    b = integrate(make_scenario(t_end=1.0, orbit_table=table), backend=backend)
    np.testing.assert_array_equal(a.q, b.q)


def test_gain_failure_warns(caplog):
    sc = make_scenario(gains=ControlGains.uniform(1.0, 0.5, 0.0, 3.12, 5), t_end=0.1)
    with caplog.at_level("WARNING"):
        tr = integrate(sc)
    assert "beta > k_g" in caplog.text
    assert tr.metadata["gain_validation"]["passed"] is False


def test_scenario_validation():
    with pytest.raises(ValueError):
        make_scenario(dt=0.0)
    with pytest.raises(ValueError):
        make_scenario(t_end=1e-4)
    with pytest.raises(ValueError):
        make_scenario(gains=ControlGains.uniform(1, 0.5, 1, 1, 4))
    with pytest.raises(ValueError):
        make_scenario(stride=0)


def test_initial_conditions_override():
    sc = make_scenario(t_end=0.01, stride=1)
    ic = sample_initial_conditions(sc)
    ic2 = InitialConditions(ic.states, ic.biases + 1)
    tr = integrate(sc, initial=ic2)
    np.testing.assert_array_equal(tr.true_bias, ic.biases + 1)
