"""NumPy implementation of the sample-loop kernels (fallback for ``_kernels``).

``run`` mutates the state arrays in place, fills the record buffers at the
requested iterations, and returns the number of completed iterations whose
iterates are all finite.
"""
import math

import numpy as np

NAME = "python"

TD, TDC, ROTD, GQ, ROGQ, ROTD_EXT = range(6)


def _shrink(v, thr):
    return np.maximum(v - thr, 0.0) - np.maximum(-v - thr, 0.0)


def _project(y1, y2, n_dual):
    if n_dual == 0:
        np.clip(y1, -1.0, 1.0, out=y1)
        np.clip(y2, -1.0, 1.0, out=y2)
        return
    if n_dual == 2:
        norm = math.sqrt(y1 @ y1 + y2 @ y2)
    else:
        norm = np.abs(y1).sum() + np.abs(y2).sum()
    if norm > 1.0:
        y1 /= norm
        y2 /= norm


def _record(k, t, w, theta, y1, y2, sums, sum_alpha, delta, out_x, out_y, out_xbar, out_ybar, out_delta):
    d = len(theta)
    out_x[k, :d] = w
    out_x[k, d:] = theta
    out_y[k, :d] = y1
    out_y[k, d:] = y2
    if sum_alpha > 0:
        out_xbar[k] = sums[: 2 * d] / sum_alpha
        out_ybar[k] = sums[2 * d:] / sum_alpha
    else:
        out_xbar[k] = out_x[k]
        out_ybar[k] = out_y[k]
    out_delta[k] = delta if t > 0 else np.nan


def run(*args):
    # overflow is detected and reported through the return value
    with np.errstate(over="ignore", invalid="ignore"):
        return _run(*args)


def _run(code, phi, reward, phi_next, phi_bar, starts, alphas, eta, gamma, lam, rho1, rho2, n_dual,
         w, theta, y1, y2, u, sums, sum_alpha_box,
         record_its, out_x, out_y, out_xbar, out_ybar, out_delta):
    n, d = phi.shape
    sum_alpha = float(sum_alpha_box[0])
    e = np.zeros(d)
    k = 0
    delta = math.nan
    if k < len(record_its) and record_its[k] == 0:
        _record(0, 0, w, theta, y1, y2, sums, sum_alpha, delta, out_x, out_y, out_xbar, out_ybar, out_delta)
        k += 1
    for t in range(n):
        p = phi[t]
        a = alphas[t]
        r = reward[t]
        if code in (GQ, ROGQ):
            pn = phi_bar[t]
            if starts[t]:
                e = p.copy()
            else:
                e = gamma * lam * e + p
        else:
            pn = phi_next[t]
        delta = r + gamma * (pn @ theta) - p @ theta

        if code == TD:
            theta += a * delta * p
        elif code == TDC:
            pw = p @ w
            theta += a * delta * p - a * gamma * pw * pn
            w += eta * a * (delta - pw) * p
        elif code == GQ:
            we = w @ e
            pw = w @ p
            theta += a * (delta * e - gamma * (1.0 - lam) * we * pn)
            w += eta * a * (delta * e - pw * p)
        elif code in (ROTD, ROGQ):
            pw = p @ w
            c1 = y1 @ p
            if code == ROTD:
                gw = eta * c1 * p + gamma * (y2 @ pn) * p
                gth = (eta * c1 + y2 @ p) * (p - gamma * pn)
                rw = -eta * (delta - pw) * p
                rth = gamma * pw * pn - delta * p
            else:
                gw = eta * c1 * p + gamma * (1.0 - lam) * (y2 @ pn) * e
                gth = (eta * (y1 @ e) + y2 @ e) * (p - gamma * pn)
                rw = -eta * (delta * e - pw * p)
                rth = gamma * (1.0 - lam) * (e @ w) * pn - delta * e
            w[:] = _shrink(w - a * gw, a * rho2)
            theta[:] = _shrink(theta - a * gth, a * rho1)
            y1 += a * rw
            y2 += a * rth
            _project(y1, y2, n_dual)
        elif code == ROTD_EXT:
            pw = p @ w
            c1 = y1 @ p
            gw = eta * c1 * p + gamma * (y2 @ pn) * p
            gth = (eta * c1 + y2 @ p) * (p - gamma * pn)
            rw = -eta * (delta - pw) * p
            rth = gamma * pw * pn - delta * p
            rho = rho1
            u_new = np.clip(u + (a / rho) * np.concatenate([w, theta]), -1.0, 1.0)
            y1_new = y1 + (a / rho) * (rw - rho * y1)
            y2_new = y2 + (a / rho) * (rth - rho * y2)
            w -= a * rho * (u[:d] + gw)
            theta -= a * rho * (u[d:] + gth)
            y1[:] = y1_new
            y2[:] = y2_new
            u[:] = u_new
        else:
            raise ValueError(f"unknown algorithm code {code}")

        if not (np.isfinite(theta).all() and np.isfinite(w).all()
                and np.isfinite(y1).all() and np.isfinite(y2).all()):
            sum_alpha_box[0] = sum_alpha
            return t
        sum_alpha += a
        sums[:d] += a * w
        sums[d:2 * d] += a * theta
        sums[2 * d:3 * d] += a * y1
        sums[3 * d:] += a * y2
        if k < len(record_its) and record_its[k] == t + 1:
            _record(k, t + 1, w, theta, y1, y2, sums, sum_alpha, delta, out_x, out_y, out_xbar, out_ybar, out_delta)
            k += 1
    sum_alpha_box[0] = sum_alpha
    return n
