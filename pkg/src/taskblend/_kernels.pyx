# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels.  Same contracts as ``_kernels_py``."""
import numpy as np

from libc.math cimport sqrt, exp, fabs, INFINITY, NAN

cdef double ZERO_NORM = 1e-30
cdef double COS_CLAMP = 1e-12


cdef inline double _dot(const double[::1] a, const double[::1] b) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


cdef inline double _clamp(double x, double lo, double hi) noexcept nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def softmax(const double[::1] v):
    cdef Py_ssize_t n = v.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double mx = v[0], s = 0.0
    for i in range(1, n):
        if v[i] > mx:
            mx = v[i]
    for i in range(n):
        o[i] = exp(v[i] - mx)
        s += o[i]
    for i in range(n):
        o[i] /= s
    return out


cdef double _eliminate(double[:, ::1] m, double[::1] x, bint with_rhs) noexcept nogil:
    cdef Py_ssize_t n = m.shape[0], i, j, k, p
    cdef double piv, best, f, tmp, min_piv = INFINITY
    for k in range(n):
        p = k
        best = fabs(m[k, k])
        for i in range(k + 1, n):
            if fabs(m[i, k]) > best:
                best = fabs(m[i, k])
                p = i
        if best < min_piv:
            min_piv = best
        if best < 1e-12:
            return min_piv
        if p != k:
            for j in range(n):
                tmp = m[k, j]
                m[k, j] = m[p, j]
                m[p, j] = tmp
            if with_rhs:
                tmp = x[k]
                x[k] = x[p]
                x[p] = tmp
        for i in range(k + 1, n):
            f = m[i, k] / m[k, k]
            for j in range(k, n):
                m[i, j] -= f * m[k, j]
            if with_rhs:
                x[i] -= f * x[k]
    return min_piv


def lu_solve(const double[:, ::1] a, const double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i, j
    m_arr = np.array(a, dtype=np.float64, copy=True)
    x_arr = np.array(b, dtype=np.float64, copy=True)
    cdef double[:, ::1] m = m_arr
    cdef double[::1] x = x_arr
    cdef double min_piv = _eliminate(m, x, True)
    cdef double s
    if min_piv < 1e-12:
        return np.full(n, np.nan), min_piv
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, n):
            s -= m[i, j] * x[j]
        x[i] = s / m[i, i]
    return x_arr, min_piv


def min_pivot(const double[:, ::1] a):
    m_arr = np.array(a, dtype=np.float64, copy=True)
    cdef double[:, ::1] m = m_arr
    cdef double[::1] dummy = np.empty(0)
    return _eliminate(m, dummy, False)


def cosine(const double[::1] u, const double[::1] v):
    cdef double nu = sqrt(_dot(u, u)), nv = sqrt(_dot(v, v))
    if nu < ZERO_NORM or nv < ZERO_NORM:
        return NAN
    return _clamp(_dot(u, v) / (nu * nv), -1.0, 1.0)


def aggregate(const double[::1] w, const double[:, ::1] g):
    cdef Py_ssize_t t_count = g.shape[0], d = g.shape[1], t, j
    out = np.zeros(d)
    cdef double[::1] o = out
    cdef double wt
    for t in range(t_count):
        wt = w[t]
        for j in range(d):
            o[j] += wt * g[t, j]
    return out


def pcgrad(const double[:, ::1] g, const long long[:, ::1] orders):
    cdef Py_ssize_t t_count = g.shape[0], d = g.shape[1], p, q, j, r
    out_arr = np.array(g, dtype=np.float64, copy=True)
    coef_arr = np.zeros((t_count, t_count))
    sq_arr = np.empty(t_count)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] coef = coef_arr
    cdef double[::1] sq = sq_arr
    cdef double dot, c
    for p in range(t_count):
        sq[p] = _dot(g[p], g[p])
    for p in range(t_count):
        for r in range(orders.shape[1]):
            q = orders[p, r]
            if sqrt(sq[q]) < ZERO_NORM:
                continue
            dot = 0.0
            for j in range(d):
                dot += out[p, j] * g[q, j]
            if dot < 0.0:
                c = -dot / sq[q]
                for j in range(d):
                    out[p, j] += c * g[q, j]
                coef[p, q] += c
    return out_arr, coef_arr


def gradvac(const double[:, ::1] g, const long long[:, ::1] orders,
            double[:, ::1] phi_hat, double beta):
    cdef Py_ssize_t t_count = g.shape[0], d = g.shape[1], p, q, j, r
    out_arr = np.array(g, dtype=np.float64, copy=True)
    coef_arr = np.zeros((t_count, t_count))
    norms_arr = np.empty(t_count)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] coef = coef_arr
    cdef double[::1] norms = norms_arr
    cdef double lo = -1.0 + COS_CLAMP, hi = 1.0 - COS_CLAMP
    cdef double ng, nq, dot, phi, target, pc, tc, root_t, a, c
    for p in range(t_count):
        norms[p] = sqrt(_dot(g[p], g[p]))
    for p in range(t_count):
        for r in range(orders.shape[1]):
            q = orders[p, r]
            nq = norms[q]
            ng = 0.0
            dot = 0.0
            for j in range(d):
                ng += out[p, j] * out[p, j]
                dot += out[p, j] * g[q, j]
            ng = sqrt(ng)
            if nq < ZERO_NORM or ng < ZERO_NORM:
                continue
            phi = _clamp(dot / (ng * nq), -1.0, 1.0)
            target = phi_hat[p, q]
            if phi < target:
                pc = _clamp(phi, lo, hi)
                tc = _clamp(target, lo, hi)
                root_t = sqrt(1.0 - tc * tc)
                a = (target * sqrt(1.0 - pc * pc) - phi * root_t) / root_t
                c = ng * a / nq
                for j in range(d):
                    out[p, j] += c * g[q, j]
                coef[p, q] += c
            phi_hat[p, q] = (1.0 - beta) * target + beta * phi
    return out_arr, coef_arr


def mgda_frank_wolfe(const double[:, ::1] gram, int max_iter, double tol):
    cdef Py_ssize_t t_count = gram.shape[0], i, j, s, a
    lam_arr = np.full(t_count, 1.0 / t_count)
    mlam_arr = np.empty(t_count)
    cdef double[::1] lam = lam_arr
    cdef double[::1] mlam = mlam_arr
    cdef double f2, gap = INFINITY, away_gap, slope, curv, gmax, step, acc
    cdef int it = 0
    cdef bint away
    while True:
        f2 = 0.0
        for i in range(t_count):
            acc = 0.0
            for j in range(t_count):
                acc += gram[i, j] * lam[j]
            mlam[i] = acc
            f2 += lam[i] * acc
        s = 0
        for i in range(1, t_count):
            if mlam[i] < mlam[s]:
                s = i
        gap = 2.0 * (f2 - mlam[s])
        if gap <= tol or it >= max_iter:
            break
        it += 1
        a = -1
        for i in range(t_count):
            if lam[i] > 0.0 and (a < 0 or mlam[i] > mlam[a]):
                a = i
        away_gap = 2.0 * (mlam[a] - f2)
        if gap >= away_gap:
            slope = mlam[s] - f2
            curv = gram[s, s] - 2.0 * mlam[s] + f2
            gmax = 1.0
            away = False
        else:
            slope = f2 - mlam[a]
            curv = f2 - 2.0 * mlam[a] + gram[a, a]
            gmax = lam[a] / (1.0 - lam[a]) if lam[a] < 1.0 else INFINITY
            away = True
        if curv <= 0.0:
            step = gmax
        else:
            step = -slope / curv
            if step < 0.0:
                step = 0.0
            if step > gmax:
                step = gmax
        if away:
            for i in range(t_count):
                lam[i] *= 1.0 + step
            lam[a] -= step
            if step == gmax:
                lam[a] = 0.0
        else:
            for i in range(t_count):
                lam[i] *= 1.0 - step
            lam[s] += step
    return lam_arr, gap, it


def graddrop(const double[:, ::1] g, const double[::1] sign,
             const double[::1] e, const double[::1] leak):
    cdef Py_ssize_t t_count = g.shape[0], d = g.shape[1], t, j
    out_arr = np.zeros(d)
    cdef double[::1] out = out_arr
    cdef double num, den, purity, x, m, acc
    for j in range(d):
        num = 0.0
        den = 0.0
        for t in range(t_count):
            x = g[t, j] * sign[j]
            num += x
            den += fabs(x)
        if den < ZERO_NORM:
            purity = 0.5
        else:
            purity = 0.5 * (1.0 + num / den)
        acc = 0.0
        for t in range(t_count):
            x = g[t, j] * sign[j]
            if (x > 0.0 and purity > e[j]) or (x < 0.0 and purity < e[j]):
                m = x
            else:
                m = 0.0
            acc += leak[t] * x + (1.0 - leak[t]) * m
        out[j] = acc * sign[j]
    return out_arr


def quad_batch(const double[:, :, ::1] x, const long long[:, ::1] idx,
               const double[::1] theta, const double[::1] curv):
    cdef Py_ssize_t t_count = x.shape[0], d = x.shape[2], b = idx.shape[1]
    cdef Py_ssize_t t, i, j, row
    losses_arr = np.empty(t_count)
    grads_arr = np.zeros((t_count, d))
    cdef double[::1] losses = losses_arr
    cdef double[:, ::1] grads = grads_arr
    cdef double sq, diff
    for t in range(t_count):
        sq = 0.0
        for i in range(b):
            row = idx[t, i]
            for j in range(d):
                diff = theta[j] - x[t, row, j]
                sq += diff * diff
                grads[t, j] += diff
        losses[t] = 0.5 * curv[t] * sq / b
        for j in range(d):
            grads[t, j] = curv[t] * grads[t, j] / b
    return losses_arr, grads_arr
