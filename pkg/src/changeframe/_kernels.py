"""Compiled inner loops: batched least-squares refits and derivative grids.

Everything here works on the sufficient statistics of a replicated design:
per-time-point means ``ybar`` with weights ``n_p`` plus the within-group sum
of squares ``wss``, so that

    RSS(theta) = wss + sum_p n_p * (ybar_p - f(t_p, theta))**2

Family codes: 0 = 4pLL, 1 = beta.  All kernels release the GIL.
"""

import math

import numba as nb
import numpy as np

_JIT = dict(cache=True, nogil=True)

CONVERGED = 0
MAX_ITER = 1
NONFINITE = 2


@nb.njit(**_JIT)
def _shape_terms(fam, t, p, q, scal):
    """Shape factor g(t) and its partials with respect to (p, q)."""
    if t <= 0.0:
        return 0.0, 0.0, 0.0
    if fam == 0:
        lct = math.log(p) - math.log(t)
        x = q * lct
        if x >= 0.0:
            e = math.exp(-x)
            g = e / (1.0 + e)
            omg = 1.0 / (1.0 + e)
        else:
            e = math.exp(x)
            g = 1.0 / (1.0 + e)
            omg = e / (1.0 + e)
        w = g * omg
        return g, -w * q / p, -w * lct
    u = t / scal
    s = p + q
    ls = math.log(s)
    lu = math.log(u)
    l1u = math.log1p(-u)
    g = math.exp(s * ls - p * math.log(p) - q * math.log(q) + p * lu + q * l1u)
    return g, g * (lu + ls - math.log(p)), g * (l1u + ls - math.log(q))


@nb.njit(**_JIT)
def _shape_value(fam, t, p, q, scal):
    if t <= 0.0:
        return 0.0
    if fam == 0:
        x = q * (math.log(p) - math.log(t))
        if x >= 0.0:
            e = math.exp(-x)
            return e / (1.0 + e)
        return 1.0 / (1.0 + math.exp(x))
    u = t / scal
    s = p + q
    return math.exp(s * math.log(s) - p * math.log(p) - q * math.log(q)
                    + p * math.log(u) + q * math.log1p(-u))


@nb.njit(**_JIT)
def _shape_slope(fam, t, p, q, scal):
    """d g / d t for t > 0."""
    if fam == 0:
        x = q * (math.log(p) - math.log(t))
        if x >= 0.0:
            e = math.exp(-x)
            w = e / ((1.0 + e) * (1.0 + e))
        else:
            e = math.exp(x)
            w = e / ((1.0 + e) * (1.0 + e))
        return w * q / t
    g = _shape_value(fam, t, p, q, scal)
    return g * (p / t - q / (scal - t))


@nb.njit(**_JIT)
def _rss(fam, scal, t, sw, ybar, wss, x):
    s = wss
    for i in range(t.size):
        r = sw[i] * (ybar[i] - x[0] - x[1] * _shape_value(fam, t[i], x[2], x[3], scal))
        s += r * r
    return s


@nb.njit(**_JIT)
def _chol_solve(M, rhs, L, out):
    n = rhs.size
    for i in range(n):
        for j in range(i + 1):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if not s > 0.0:
                    return False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    for i in range(n):
        s = rhs[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, n):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]
    return True


@nb.njit(**_JIT)
def _lm_fit(fam, scal, t, sw, ybar, wss, x0, lo, hi, max_iter, tol, x_out):
    m = t.size
    x = np.empty(4)
    xn = np.empty(4)
    dx = np.empty(4)
    grad = np.empty(4)
    rhs = np.empty(4)
    A = np.empty((4, 4))
    M = np.empty((4, 4))
    L = np.zeros((4, 4))
    J = np.empty((m, 4))
    r = np.empty(m)
    free = np.empty(4, dtype=np.bool_)
    for k in range(4):
        x[k] = min(max(x0[k], lo[k]), hi[k])
        x_out[k] = x[k]

    S = _rss(fam, scal, t, sw, ybar, wss, x)
    if not np.isfinite(S):
        return S, NONFINITE
    scale = wss
    for i in range(m):
        scale += sw[i] * sw[i] * ybar[i] * ybar[i]
    floor = 1e-30 * (1.0 + scale)

    mu = 1e-3
    status = MAX_ITER
    for _ in range(max_iter):
        if S <= floor:
            status = CONVERGED
            break
        a, b, p, q = x[0], x[1], x[2], x[3]
        for i in range(m):
            g, gp, gq = _shape_terms(fam, t[i], p, q, scal)
            r[i] = sw[i] * (ybar[i] - a - b * g)
            J[i, 0] = sw[i]
            J[i, 1] = sw[i] * g
            J[i, 2] = sw[i] * b * gp
            J[i, 3] = sw[i] * b * gq
        dmax = 0.0
        for j in range(4):
            s = 0.0
            for i in range(m):
                s += J[i, j] * r[i]
            grad[j] = s
            for k in range(j, 4):
                s = 0.0
                for i in range(m):
                    s += J[i, j] * J[i, k]
                A[j, k] = s
                A[k, j] = s
            dmax = max(dmax, A[j, j])
        # coordinates pinned at a bound whose descent direction points outward stay fixed
        for k in range(4):
            free[k] = not ((x[k] <= lo[k] and grad[k] < 0.0) or (x[k] >= hi[k] and grad[k] > 0.0))

        improved = False
        rel = 0.0
        while mu < 1e20:
            for j in range(4):
                for k in range(4):
                    if free[j] and free[k]:
                        M[j, k] = A[j, k]
                    else:
                        M[j, k] = 0.0
                if free[j]:
                    M[j, j] += mu * max(A[j, j], 1e-12 * dmax)
                    rhs[j] = grad[j]
                else:
                    M[j, j] = 1.0
                    rhs[j] = 0.0
            if not _chol_solve(M, rhs, L, dx):
                mu *= 10.0
                continue
            for k in range(4):
                xn[k] = min(max(x[k] + dx[k], lo[k]), hi[k])
            Sn = _rss(fam, scal, t, sw, ybar, wss, xn)
            if np.isfinite(Sn) and Sn < S:
                rel = (S - Sn) / S
                S = Sn
                for k in range(4):
                    x[k] = xn[k]
                mu = max(mu * 0.3, 1e-15)
                improved = True
                break
            mu *= 10.0
        if not improved:
            # no descent step exists at working precision: numerically stationary
            status = CONVERGED
            break
        if rel < tol:
            status = CONVERGED
            break

    for k in range(4):
        x_out[k] = x[k]
    if not np.isfinite(S):
        return S, NONFINITE
    return S, status


@nb.njit(**_JIT)
def fit_many(fam, scal, t, sw, ybar, wss, x0, lo, hi, max_iter, tol, x_out, rss_out, status_out):
    for k in range(ybar.shape[0]):
        s, st = _lm_fit(fam, scal, t, sw, ybar[k], wss[k], x0[k], lo, hi, max_iter, tol, x_out[k])
        rss_out[k] = s
        status_out[k] = st


@nb.njit(**_JIT)
def model_values(fam, scal, params, t, out):
    for k in range(params.shape[0]):
        for i in range(t.size):
            out[k, i] = params[k, 0] + params[k, 1] * _shape_value(
                fam, t[i], params[k, 2], params[k, 3], scal)


@nb.njit(**_JIT)
def abs_slope_grid(fam, scal, params, grid, out):
    """|f'(t, theta_k)| for every parameter row k and grid point t > 0."""
    for k in range(params.shape[0]):
        for j in range(grid.size):
            out[k, j] = abs(params[k, 1] * _shape_slope(
                fam, grid[j], params[k, 2], params[k, 3], scal))


@nb.njit(**_JIT)
def slope_sd_grid(fam, scal, params, valid, grid, out):
    """Sample sd (ddof=1) of |f'(t, .)| across axis 1 of ``params`` (L, B, 4).

    Rows with fewer than two valid replicates get NaN.
    """
    nl, nb_, _ = params.shape
    buf = np.empty(nb_)
    for l in range(nl):
        for j in range(grid.size):
            n = 0
            tot = 0.0
            for b in range(nb_):
                if valid[l, b]:
                    v = abs(params[l, b, 1] * _shape_slope(
                        fam, grid[j], params[l, b, 2], params[l, b, 3], scal))
                    buf[n] = v
                    tot += v
                    n += 1
            if n < 2:
                out[l, j] = np.nan
                continue
            mean = tot / n
            ss = 0.0
            for b in range(n):
                d = buf[b] - mean
                ss += d * d
            out[l, j] = math.sqrt(ss / (n - 1))
