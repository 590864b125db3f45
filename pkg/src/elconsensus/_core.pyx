# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled closed-loop kernel. Same contract as ``_fallback``."""

import numpy as np
from libc.math cimport sqrt, fabs, isfinite


cdef double _interp(double t, const double[::1] tt, const double[::1] v) noexcept nogil:
    cdef Py_ssize_t m = tt.shape[0], lo = 0, hi, mid
    if m == 1 or t <= tt[0]:
        return v[0]
    if t >= tt[m - 1]:
        return v[m - 1]
    hi = m - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tt[mid] <= t:
            lo = mid
        else:
            hi = mid
    return v[lo] + (v[hi] - v[lo]) * (t - tt[lo]) / (tt[hi] - tt[lo])


cdef class _Model:
    cdef Py_ssize_t n
    cdef double[:, ::1] H, bias, dist, s, sw
    cdef double[::1] mass, beta, gamma, tab_t, tab_thd, tab_thdd
    cdef double alpha, lam, eps, mu, r_l

    def __init__(self, H, bias, mass, beta, gamma, dist, double alpha, double lam, double eps,
                 double mu, double r_l, tab_t, tab_thd, tab_thdd):
        self.H = np.ascontiguousarray(H, dtype=np.float64)
        self.n = self.H.shape[0]
        self.bias = np.ascontiguousarray(bias, dtype=np.float64)
        self.dist = np.ascontiguousarray(dist, dtype=np.float64)
        self.mass = np.ascontiguousarray(mass, dtype=np.float64)
        self.beta = np.ascontiguousarray(beta, dtype=np.float64)
        self.gamma = np.ascontiguousarray(gamma, dtype=np.float64)
        self.tab_t = np.ascontiguousarray(tab_t, dtype=np.float64)
        self.tab_thd = np.ascontiguousarray(tab_thd, dtype=np.float64)
        self.tab_thdd = np.ascontiguousarray(tab_thdd, dtype=np.float64)
        self.alpha = alpha
        self.lam = lam
        self.eps = eps
        self.mu = mu
        self.r_l = r_l
        self.s = np.zeros((self.n, 3))
        self.sw = np.zeros((self.n, 3))

    cdef void deriv(self, const double[:, ::1] x, double t, double[:, ::1] out) noexcept nogil:
        cdef Py_ssize_t i, j, c, n = self.n
        cdef double thd = _interp(t, self.tab_t, self.tab_thd)
        cdef double thdd = _interp(t, self.tab_t, self.tab_thdd)
        cdef double w2 = thd * thd
        cdef double v, acc, speed, gain, xq, yq, zq, rf, rf3, k, gx, gy, gz, m
        cdef double inv_rl2 = 1.0 / (self.r_l * self.r_l)

        for i in range(n):
            for c in range(3):
                v = x[i, 3 + c] + self.lam * ((x[i, c] + self.bias[i, c]) - x[i, 6 + c])
                self.s[i, c] = v
                if self.eps == 0.0:
                    self.sw[i, c] = (v > 0) - (v < 0)
                else:
                    v = v / self.eps
                    self.sw[i, c] = 1.0 if v > 1.0 else (-1.0 if v < -1.0 else v)

        for i in range(n):
            speed = sqrt(x[i, 3] * x[i, 3] + x[i, 4] * x[i, 4] + x[i, 5] * x[i, 5])
            gain = self.beta[i] + self.gamma[i] * speed
            m = self.mass[i]
            xq = x[i, 0]
            yq = x[i, 1]
            zq = x[i, 2]
            rf = sqrt((self.r_l + xq) * (self.r_l + xq) + yq * yq + zq * zq)
            rf3 = rf * rf * rf
            k = self.mu / rf3
            gx = (k - w2) * xq - thdd * yq + self.mu * (self.r_l / rf3 - inv_rl2)
            gy = thdd * xq + (k - w2) * yq
            gz = k * zq
            for c in range(3):
                acc = 0.0
                for j in range(n):
                    acc = acc + self.H[i, j] * self.s[j, c]
                out[i, c] = x[i, 3 + c]
                out[i, 6 + c] = -x[i, 3 + c]
                out[i, 3 + c] = (-self.alpha * acc - gain * self.sw[i, c] + self.dist[i, c]) / m
            out[i, 3] = out[i, 3] + 2.0 * thd * x[i, 4] - gx
            out[i, 4] = out[i, 4] - 2.0 * thd * x[i, 3] - gy
            out[i, 5] = out[i, 5] - gz


def derivative(x, double t, H, bias, mass, beta, gamma, dist, double alpha, double lam, double eps,
               double mu, double r_l, tab_t, tab_thd, tab_thdd):
    cdef _Model model = _Model(H, bias, mass, beta, gamma, dist, alpha, lam, eps, mu, r_l,
                               tab_t, tab_thd, tab_thdd)
    xc = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(xc)
    cdef double[:, ::1] xv = xc
    cdef double[:, ::1] ov = out
    model.deriv(xv, t, ov)
    return out


def integrate(x0, double t0, double dt, Py_ssize_t n_steps, Py_ssize_t stride, double limit,
              H, bias, mass, beta, gamma, dist, double alpha, double lam, double eps,
              double mu, double r_l, tab_t, tab_thd, tab_thdd):
    cdef _Model model = _Model(H, bias, mass, beta, gamma, dist, alpha, lam, eps, mu, r_l,
                               tab_t, tab_thd, tab_thdd)
    cdef Py_ssize_t n = model.n
    cdef Py_ssize_t rows = n_steps // stride + 1 + (1 if n_steps % stride else 0)
    samples = np.empty((rows, n, 9))
    steps = np.empty(rows, dtype=np.int64)
    x_arr = np.array(x0, dtype=np.float64, order="C")
    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] k1 = np.empty((n, 9))
    cdef double[:, ::1] k2 = np.empty((n, 9))
    cdef double[:, ::1] k3 = np.empty((n, 9))
    cdef double[:, ::1] k4 = np.empty((n, 9))
    cdef double[:, ::1] tmp = np.empty((n, 9))
    cdef double[:, :, ::1] sv = samples
    cdef long long[::1] st = steps
    cdef Py_ssize_t k, i, c, r = 1
    cdef double t, h2 = 0.5 * dt, h6 = dt / 6.0, v
    cdef bint bad = False

    sv[0, :, :] = x
    st[0] = 0
    with nogil:
        for k in range(n_steps):
            t = t0 + k * dt
            model.deriv(x, t, k1)
            for i in range(n):
                for c in range(9):
                    tmp[i, c] = x[i, c] + h2 * k1[i, c]
            model.deriv(tmp, t + h2, k2)
            for i in range(n):
                for c in range(9):
                    tmp[i, c] = x[i, c] + h2 * k2[i, c]
            model.deriv(tmp, t + h2, k3)
            for i in range(n):
                for c in range(9):
                    tmp[i, c] = x[i, c] + dt * k3[i, c]
            model.deriv(tmp, t + dt, k4)
            for i in range(n):
                for c in range(9):
                    v = x[i, c] + h6 * (k1[i, c] + 2.0 * k2[i, c] + 2.0 * k3[i, c] + k4[i, c])
                    x[i, c] = v
                    if not (isfinite(v) and fabs(v) <= limit):
                        bad = True
            if bad:
                break
            if (k + 1) % stride == 0 or k + 1 == n_steps:
                sv[r, :, :] = x
                st[r] = k + 1
                r += 1
    if bad:
        return samples[:r], steps[:r], k + 1, np.asarray(x_arr).copy()
    return samples[:r], steps[:r], -1, None
