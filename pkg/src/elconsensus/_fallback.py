"""Pure numpy closed-loop kernel; used when the compiled ``_core`` is unavailable.

State layout is an ``(n, 9)`` array with rows ``[q, q_dot, b_hat]``.
"""

import numpy as np


def _interp(t, tab_t, tab_v):
    if tab_t.shape[0] == 1:
        return float(tab_v[0])
    return float(np.interp(t, tab_t, tab_v))


def derivative(x, t, H, bias, mass, beta, gamma, dist, alpha, lam, eps,
               mu, r_l, tab_t, tab_thd, tab_thdd):
    q = x[:, 0:3]
    qd = x[:, 3:6]
    bh = x[:, 6:9]
    thd = _interp(t, tab_t, tab_thd)
    thdd = _interp(t, tab_t, tab_thdd)

    # controller: biased measurement y = q + b enters only through s
    s = qd + lam * ((q + bias) - bh)
    sw = np.sign(s) if eps == 0.0 else np.clip(s / eps, -1.0, 1.0)
    speed = np.sqrt((qd * qd).sum(axis=1))
    tau = -alpha * (H @ s) - (beta + gamma * speed)[:, None] * sw

    # plant
    xq, yq, zq = q[:, 0], q[:, 1], q[:, 2]
    rf = np.sqrt((r_l + xq) ** 2 + yq * yq + zq * zq)
    rf3 = rf ** 3
    k = mu / rf3
    w2 = thd * thd
    g = np.empty_like(q)
    g[:, 0] = (k - w2) * xq - thdd * yq + mu * (r_l / rf3 - 1.0 / (r_l * r_l))
    g[:, 1] = thdd * xq + (k - w2) * yq
    g[:, 2] = k * zq
    cq = np.empty_like(q)
    cq[:, 0] = -2.0 * thd * qd[:, 1]
    cq[:, 1] = 2.0 * thd * qd[:, 0]
    cq[:, 2] = 0.0

    out = np.empty_like(x)
    out[:, 0:3] = qd
    out[:, 3:6] = (tau + dist) / mass[:, None] - cq - g
    out[:, 6:9] = -qd
    return out


def integrate(x0, t0, dt, n_steps, stride, limit, H, bias, mass, beta, gamma, dist,
              alpha, lam, eps, mu, r_l, tab_t, tab_thd, tab_thdd):
    """Classical RK4 with fixed step.

    Returns ``(samples, steps, fail_step, fail_state)``; ``fail_step`` is -1 on
    success, otherwise the first step whose result is non-finite or exceeds
    ``limit`` in magnitude.
    """
    args = (H, bias, mass, beta, gamma, dist, alpha, lam, eps, mu, r_l, tab_t, tab_thd, tab_thdd)
    x = np.array(x0, dtype=float)
    rows = n_steps // stride + 1 + (1 if n_steps % stride else 0)
    samples = np.empty((rows,) + x.shape)
    steps = np.empty(rows, dtype=np.int64)
    samples[0] = x
    steps[0] = 0
    r = 1
    h2 = 0.5 * dt
    for k in range(n_steps):
        t = t0 + k * dt
        k1 = derivative(x, t, *args)
        k2 = derivative(x + h2 * k1, t + h2, *args)
        k3 = derivative(x + h2 * k2, t + h2, *args)
        k4 = derivative(x + dt * k3, t + dt, *args)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.abs(x) <= limit):
            return samples[:r], steps[:r], k + 1, x
        if (k + 1) % stride == 0 or k + 1 == n_steps:
            samples[r] = x
            steps[r] = k + 1
            r += 1
    return samples[:r], steps[:r], -1, None
