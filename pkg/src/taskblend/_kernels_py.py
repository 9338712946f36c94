"""Reference (numpy) implementations of the hot kernels.

Every function here has a compiled twin in ``_kernels.pyx`` with the same
signature and semantics.  Inputs are float64 / int64 arrays; callers in
:mod:`taskblend.kernels` take care of dtype and contiguity.
"""
from __future__ import annotations

import math

import numpy as np

ZERO_NORM = 1e-30
COS_CLAMP = 1e-12


def softmax(v):
    z = v - v.max()
    e = np.exp(z)
    return e / e.sum()


def lu_solve(a, b):
    """Gaussian elimination with partial pivoting.

    Returns ``(x, min_pivot)``.  Elimination stops at the first pivot whose
    magnitude is below 1e-12; ``x`` is then all-NaN and ``min_pivot`` is
    that pivot.
    """
    n = a.shape[0]
    m = a.astype(np.float64, copy=True)
    x = b.astype(np.float64, copy=True)
    min_pivot = math.inf
    for k in range(n):
        p = k + int(np.argmax(np.abs(m[k:, k])))
        piv = abs(m[p, k])
        min_pivot = min(min_pivot, piv)
        if piv < 1e-12:
            return np.full(n, np.nan), min_pivot
        if p != k:
            m[[k, p]] = m[[p, k]]
            x[k], x[p] = x[p], x[k]
        f = m[k + 1:, k] / m[k, k]
        m[k + 1:, k:] -= np.outer(f, m[k, k:])
        x[k + 1:] -= f * x[k]
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - m[k, k + 1:] @ x[k + 1:]) / m[k, k]
    return x, min_pivot


def min_pivot(a):
    """Smallest partial-pivot magnitude met while eliminating ``a``."""
    n = a.shape[0]
    m = a.astype(np.float64, copy=True)
    out = math.inf
    for k in range(n):
        p = k + int(np.argmax(np.abs(m[k:, k])))
        piv = abs(m[p, k])
        out = min(out, piv)
        if piv < 1e-12:
            return out
        if p != k:
            m[[k, p]] = m[[p, k]]
        f = m[k + 1:, k] / m[k, k]
        m[k + 1:, k:] -= np.outer(f, m[k, k:])
    return out


def cosine(u, v):
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    if nu < ZERO_NORM or nv < ZERO_NORM:
        return math.nan
    c = float(u @ v) / (nu * nv)
    return min(1.0, max(-1.0, c))


def aggregate(w, g):
    return w @ g


def pcgrad(g, orders):
    t_count = g.shape[0]
    sq = np.einsum("ij,ij->i", g, g)
    out = g.copy()
    coef = np.zeros((t_count, t_count))
    for p in range(t_count):
        gp = out[p]
        for q in orders[p]:
            if math.sqrt(sq[q]) < ZERO_NORM:
                continue
            dot = float(gp @ g[q])
            if dot < 0.0:
                c = -dot / sq[q]
                gp += c * g[q]
                coef[p, q] += c
    return out, coef


def gradvac(g, orders, phi_hat, beta):
    """GradVac adjustment.  ``phi_hat`` is updated in place."""
    t_count = g.shape[0]
    norms = np.sqrt(np.einsum("ij,ij->i", g, g))
    out = g.copy()
    coef = np.zeros((t_count, t_count))
    lo, hi = -1.0 + COS_CLAMP, 1.0 - COS_CLAMP
    for p in range(t_count):
        gp = out[p]
        for q in orders[p]:
            nq = norms[q]
            ng = math.sqrt(float(gp @ gp))
            if nq < ZERO_NORM or ng < ZERO_NORM:
                continue
            phi = float(gp @ g[q]) / (ng * nq)
            phi = min(1.0, max(-1.0, phi))
            target = phi_hat[p, q]
            if phi < target:
                pc = min(hi, max(lo, phi))
                tc = min(hi, max(lo, target))
                root_t = math.sqrt(1.0 - tc * tc)
                a = (target * math.sqrt(1.0 - pc * pc) - phi * root_t) / root_t
                c = ng * a / nq
                gp += c * g[q]
                coef[p, q] += c
            phi_hat[p, q] = (1.0 - beta) * target + beta * phi
    return out, coef


def mgda_frank_wolfe(gram, max_iter, tol):
    """Away-step Frank-Wolfe for min ||lam^T G||^2 over the simplex.

    Works on the Gram matrix only.  Returns ``(lam, gap, iterations)`` where
    ``gap`` is the Frank-Wolfe duality gap <grad f(lam), lam - e_s>.
    """
    t_count = gram.shape[0]
    lam = np.full(t_count, 1.0 / t_count)
    gap = math.inf
    it = 0
    while True:
        mlam = gram @ lam
        f2 = float(lam @ mlam)
        s = int(np.argmin(mlam))
        gap = 2.0 * (f2 - mlam[s])
        if gap <= tol or it >= max_iter:
            break
        it += 1
        active = lam > 0.0
        a = int(np.flatnonzero(active)[np.argmax(mlam[active])])
        away_gap = 2.0 * (mlam[a] - f2)
        if gap >= away_gap:
            slope = mlam[s] - f2
            curv = gram[s, s] - 2.0 * mlam[s] + f2
            gmax = 1.0
            away = False
        else:
            slope = f2 - mlam[a]
            curv = f2 - 2.0 * mlam[a] + gram[a, a]
            gmax = lam[a] / (1.0 - lam[a]) if lam[a] < 1.0 else math.inf
            away = True
        if curv <= 0.0:
            step = gmax
        else:
            step = min(gmax, max(0.0, -slope / curv))
        if away:
            lam *= 1.0 + step
            lam[a] -= step
            if step == gmax:
                lam[a] = 0.0
        else:
            lam *= 1.0 - step
            lam[s] += step
    return lam, gap, it


def graddrop(g, sign, e, leak):
    t_count, dim = g.shape
    gs = g * sign
    num = gs.sum(axis=0)
    den = np.abs(gs).sum(axis=0)
    purity = np.where(den < ZERO_NORM, 0.5, 0.5 * (1.0 + num / np.where(den < ZERO_NORM, 1.0, den)))
    keep = ((gs > 0.0) & (purity > e)) | ((gs < 0.0) & (purity < e))
    masked = np.where(keep, gs, 0.0)
    out = np.zeros(dim)
    for t in range(t_count):
        out += leak[t] * gs[t] + (1.0 - leak[t]) * masked[t]
    return out * sign


def quad_batch(x, idx, theta, curv):
    """Batch losses and gradients of the quadratic task family.

    ``x`` has shape (T, n, d), ``idx`` shape (T, B).  Task t's batch loss is
    ``curv[t]/2 * mean_i ||theta - x[t, i]||^2``.
    """
    t_count = x.shape[0]
    losses = np.empty(t_count)
    grads = np.empty((t_count, x.shape[2]))
    for t in range(t_count):
        diff = theta - x[t, idx[t]]
        losses[t] = 0.5 * curv[t] * float(np.einsum("ij,ij->", diff, diff)) / idx.shape[1]
        grads[t] = curv[t] * diff.mean(axis=0)
    return losses, grads
