# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sample-loop kernels.

Same contract as ``rotd._pykernels.run``: state arrays are updated in place,
records are written at the requested iterations, and the return value is the
number of completed iterations with finite iterates.
"""
from libc.math cimport sqrt, fabs, isfinite, NAN

import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "compiled"

cdef enum:
    TD = 0
    TDC = 1
    ROTD = 2
    GQ = 3
    ROGQ = 4
    ROTD_EXT = 5


cdef inline double dot(const double[:] a, const double[:] b, Py_ssize_t d) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(d):
        s += a[i] * b[i]
    return s


cdef inline double shrink(double v, double thr) noexcept nogil:
    if v > thr:
        return v - thr
    if v < -thr:
        return v + thr
    return 0.0


cdef inline double clamp1(double v) noexcept nogil:
    if v > 1.0:
        return 1.0
    if v < -1.0:
        return -1.0
    return v


cdef void record(Py_ssize_t k, Py_ssize_t t, double[:] w, double[:] theta, double[:] y1, double[:] y2,
                 double[:] sums, double sum_alpha, double delta,
                 double[:, :] out_x, double[:, :] out_y, double[:, :] out_xbar, double[:, :] out_ybar,
                 double[:] out_delta, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(d):
        out_x[k, i] = w[i]
        out_x[k, d + i] = theta[i]
        out_y[k, i] = y1[i]
        out_y[k, d + i] = y2[i]
    if sum_alpha > 0:
        for i in range(2 * d):
            out_xbar[k, i] = sums[i] / sum_alpha
            out_ybar[k, i] = sums[2 * d + i] / sum_alpha
    else:
        for i in range(2 * d):
            out_xbar[k, i] = out_x[k, i]
            out_ybar[k, i] = out_y[k, i]
    out_delta[k] = delta if t > 0 else NAN


def run(int code, const double[:, :] phi, const double[:] reward, const double[:, :] phi_next,
        const double[:, :] phi_bar, const unsigned char[:] starts, const double[:] alphas,
        double eta, double gamma, double lam, double rho1, double rho2, int n_dual,
        double[:] w, double[:] theta, double[:] y1, double[:] y2, double[:] u,
        double[:] sums, double[:] sum_alpha_box,
        const cnp.int64_t[:] record_its, double[:, :] out_x, double[:, :] out_y,
        double[:, :] out_xbar, double[:, :] out_ybar, double[:] out_delta):
    if code < 0 or code > 5:
        raise ValueError(f"unknown algorithm code {code}")
    cdef Py_ssize_t n = phi.shape[0]
    cdef Py_ssize_t d = phi.shape[1]
    cdef Py_ssize_t n_rec = record_its.shape[0]
    cdef double[:] e = np.zeros(d)
    cdef double[:] gw = np.zeros(d)
    cdef double[:] gth = np.zeros(d)
    cdef double[:] rw = np.zeros(d)
    cdef double[:] rth = np.zeros(d)
    cdef double[:] xold = np.zeros(2 * d)
    cdef const double[:] p
    cdef const double[:] pn
    cdef Py_ssize_t t, i, k = 0
    cdef Py_ssize_t done = n
    cdef double a, r, delta = NAN, pw, we, c1, c2, c3, ce, norm, rho, decay, sum_alpha = sum_alpha_box[0]
    cdef bint finite

    with nogil:
        if n_rec > 0 and record_its[0] == 0:
            record(0, 0, w, theta, y1, y2, sums, sum_alpha, delta, out_x, out_y, out_xbar, out_ybar, out_delta, d)
            k = 1
        for t in range(n):
            p = phi[t]
            a = alphas[t]
            r = reward[t]
            if code == GQ or code == ROGQ:
                pn = phi_bar[t]
                if starts[t]:
                    for i in range(d):
                        e[i] = p[i]
                else:
                    decay = gamma * lam
                    for i in range(d):
                        e[i] = decay * e[i] + p[i]
            else:
                pn = phi_next[t]
            delta = r + gamma * dot(pn, theta, d) - dot(p, theta, d)

            if code == TD:
                for i in range(d):
                    theta[i] += a * delta * p[i]
            elif code == TDC:
                pw = dot(p, w, d)
                for i in range(d):
                    theta[i] += a * delta * p[i] - a * gamma * pw * pn[i]
                    w[i] += eta * a * (delta - pw) * p[i]
            elif code == GQ:
                we = dot(w, e, d)
                pw = dot(w, p, d)
                for i in range(d):
                    theta[i] += a * (delta * e[i] - gamma * (1.0 - lam) * we * pn[i])
                for i in range(d):
                    w[i] += eta * a * (delta * e[i] - pw * p[i])
            else:
                pw = dot(p, w, d)
                c1 = dot(y1, p, d)
                if code == ROGQ:
                    c2 = dot(y2, pn, d)
                    ce = eta * dot(y1, e, d) + dot(y2, e, d)
                    we = dot(e, w, d)
                    for i in range(d):
                        gw[i] = eta * c1 * p[i] + gamma * (1.0 - lam) * c2 * e[i]
                        gth[i] = ce * (p[i] - gamma * pn[i])
                        rw[i] = -eta * (delta * e[i] - pw * p[i])
                        rth[i] = gamma * (1.0 - lam) * we * pn[i] - delta * e[i]
                else:
                    c2 = dot(y2, pn, d)
                    c3 = eta * c1 + dot(y2, p, d)
                    for i in range(d):
                        gw[i] = eta * c1 * p[i] + gamma * c2 * p[i]
                        gth[i] = c3 * (p[i] - gamma * pn[i])
                        rw[i] = -eta * (delta - pw) * p[i]
                        rth[i] = gamma * pw * pn[i] - delta * p[i]
                if code == ROTD_EXT:
                    rho = rho1
                    for i in range(d):
                        xold[i] = w[i]
                        xold[d + i] = theta[i]
                    for i in range(d):
                        w[i] -= a * rho * (u[i] + gw[i])
                        theta[i] -= a * rho * (u[d + i] + gth[i])
                        y1[i] += (a / rho) * (rw[i] - rho * y1[i])
                        y2[i] += (a / rho) * (rth[i] - rho * y2[i])
                    for i in range(2 * d):
                        u[i] = clamp1(u[i] + (a / rho) * xold[i])
                else:
                    for i in range(d):
                        w[i] = shrink(w[i] - a * gw[i], a * rho2)
                        theta[i] = shrink(theta[i] - a * gth[i], a * rho1)
                        y1[i] += a * rw[i]
                        y2[i] += a * rth[i]
                    if n_dual == 0:
                        for i in range(d):
                            y1[i] = clamp1(y1[i])
                            y2[i] = clamp1(y2[i])
                    else:
                        norm = 0.0
                        if n_dual == 2:
                            for i in range(d):
                                norm += y1[i] * y1[i] + y2[i] * y2[i]
                            norm = sqrt(norm)
                        else:
                            for i in range(d):
                                norm += fabs(y1[i]) + fabs(y2[i])
                        if norm > 1.0:
                            for i in range(d):
                                y1[i] /= norm
                                y2[i] /= norm

            finite = True
            for i in range(d):
                if not (isfinite(theta[i]) and isfinite(w[i]) and isfinite(y1[i]) and isfinite(y2[i])):
                    finite = False
                    break
            if not finite:
                done = t
                break
            sum_alpha += a
            for i in range(d):
                sums[i] += a * w[i]
                sums[d + i] += a * theta[i]
                sums[2 * d + i] += a * y1[i]
                sums[3 * d + i] += a * y2[i]
            if k < n_rec and record_its[k] == t + 1:
                record(k, t + 1, w, theta, y1, y2, sums, sum_alpha, delta, out_x, out_y, out_xbar, out_ybar, out_delta, d)
                k += 1
    sum_alpha_box[0] = sum_alpha
    return done
