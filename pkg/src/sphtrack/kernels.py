"""Compiled per-frame kernels of the spherical tracker.

Each kernel computes the same quantities as a numpy routine
(:func:`~sphtrack.filter.predict_arrays`, :func:`~sphtrack.association.cost_arrays`,
:func:`~sphtrack.filter.update_rows_arrays`, :func:`~sphtrack.filter.finalize_arrays`)
but loops over tracks and (track, detection) pairs instead of broadcasting,
which removes the per-call overhead of many small array operations.  The
tracker uses them when numba is importable and falls back to the numpy
routines otherwise.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn

from .state import ASPECT, ASPECT_MIN, BOX_H, DEPTH, DEPTH_MIN, STATE_DIM

# (value, rate) index pairs, as in the state layout
_PAIRS = np.array([[0, 2], [1, 3], [4, 5], [6, 7], [8, 9]])


@njit(cache=True)
def _tangent_basis(g0, g1, g2, out):
    """Column-major (3, 2) basis at ``g``; mirrors ``make_tangent_basis``."""
    a0, a1, a2 = abs(g0), abs(g1), abs(g2)
    k = 0
    if a1 < a0:
        k = 1
    if a2 < (a0 if k == 0 else a1):
        k = 2
    # b1 = e_k x g, b2 = e_k - (e_k . g) g
    if k == 0:
        b10, b11, b12 = 0.0, -g2, g1
        eg = g0
        b20, b21, b22 = 1.0 - eg * g0, -eg * g1, -eg * g2
    elif k == 1:
        b10, b11, b12 = g2, 0.0, -g0
        eg = g1
        b20, b21, b22 = -eg * g0, 1.0 - eg * g1, -eg * g2
    else:
        b10, b11, b12 = -g1, g0, 0.0
        eg = g2
        b20, b21, b22 = -eg * g0, -eg * g1, 1.0 - eg * g2
    inv_n = 1.0 / math.sqrt(b10 * b10 + b11 * b11 + b12 * b12)
    out[0, 0] = b10 * inv_n
    out[1, 0] = b11 * inv_n
    out[2, 0] = b12 * inv_n
    out[0, 1] = b20 * inv_n
    out[1, 1] = b21 * inv_n
    out[2, 1] = b22 * inv_n


@njit(cache=True)
def _exp(g, B, w0, w1, eps_small, out):
    """``exp_map(g, B, (w0, w1))`` written into ``out``."""
    theta = math.hypot(w0, w1)
    v0 = B[0, 0] * w0 + B[0, 1] * w1
    v1 = B[1, 0] * w0 + B[1, 1] * w1
    v2 = B[2, 0] * w0 + B[2, 1] * w1
    if theta < eps_small:
        o0, o1, o2 = g[0] + v0, g[1] + v1, g[2] + v2
    else:
        c = math.cos(theta)
        k = math.sin(theta) / theta
        o0, o1, o2 = g[0] * c + v0 * k, g[1] * c + v1 * k, g[2] * c + v2 * k
    inv_n = 1.0 / math.sqrt(o0 * o0 + o1 * o1 + o2 * o2)
    out[0] = o0 * inv_n
    out[1] = o1 * inv_n
    out[2] = o2 * inv_n


@njit(cache=True)
def _iou(ca, wa, ha, cb, wb, hb, frame):
    """Spherical IoU of two angular boxes; mirrors ``spherical_iou_arrays``."""
    s0, s1, s2 = ca[0] + cb[0], ca[1] + cb[1], ca[2] + cb[2]
    d0, d1, d2 = ca[0] - cb[0], ca[1] - cb[1], ca[2] - cb[2]
    ns = math.sqrt(s0 * s0 + s1 * s1 + s2 * s2)
    if ns <= 2e-3:
        return 0.0
    chord = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    rho = math.hypot(s0, s1)
    if rho <= 1e-9 * ns:
        _tangent_basis(s0 / ns, s1 / ns, s2 / ns, frame)
        scale = 2.0 * math.atan2(chord, ns) / max(chord, 1e-300)
        dx = (d0 * frame[0, 0] + d1 * frame[1, 0] + d2 * frame[2, 0]) * scale
        dy = (d0 * frame[0, 1] + d1 * frame[1, 1] + d2 * frame[2, 1]) * scale
    else:
        k = 2.0 * math.atan2(chord, ns) / max(chord * rho, 1e-300)
        dx = (d1 * s0 - d0 * s1) * k
        dy = (d2 * rho * rho - s2 * (d0 * s0 + d1 * s1)) * (k / ns)
    ix = max(min(min(wa, wb), 0.5 * (wa + wb) - abs(dx)), 0.0)
    iy = max(min(min(ha, hb), 0.5 * (ha + hb) - abs(dy)), 0.0)
    inter = ix * iy
    return inter / (wa * ha + wb * hb - inter)


@njit(cache=True)
def _cholesky(S, n, L):
    """Lower Cholesky factor of the leading ``n x n`` block; False if not positive definite."""
    for i in range(n):
        for j in range(i + 1):
            acc = S[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                if not acc > 0.0:
                    return False
                L[i, i] = math.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    return True


@njit(cache=True)
def _cholesky_inverse(L, n, out):
    """``(L L^T)^-1`` of the leading ``n x n`` block."""
    Linv = np.zeros((n, n))
    for i in range(n):
        Linv[i, i] = 1.0 / L[i, i]
        for j in range(i):
            acc = 0.0
            for k in range(j, i):
                acc -= L[i, k] * Linv[k, j]
            Linv[i, j] = acc / L[i, i]
    for i in range(n):
        for j in range(i + 1):
            acc = 0.0
            for k in range(i, n):
                acc += Linv[k, i] * Linv[k, j]
            out[i, j] = acc
            out[j, i] = acc


@njit(cache=True)
def predict_kernel(x, P, dt, sigmas):
    """In-place constant-velocity prediction of stacked tracks.

    ``sigmas`` holds one acceleration std per (value, rate) pair; no process
    noise is added when ``dt`` is zero.
    """
    n = x.shape[0]
    dt2 = dt * dt
    for t in range(n):
        for p in range(_PAIRS.shape[0]):
            i, j = _PAIRS[p, 0], _PAIRS[p, 1]
            x[t, i] += dt * x[t, j]
        # F P F^T as row then column operations; rate rows are never modified
        for p in range(_PAIRS.shape[0]):
            i, j = _PAIRS[p, 0], _PAIRS[p, 1]
            for c in range(STATE_DIM):
                P[t, i, c] += dt * P[t, j, c]
        for p in range(_PAIRS.shape[0]):
            i, j = _PAIRS[p, 0], _PAIRS[p, 1]
            for r in range(STATE_DIM):
                P[t, r, i] += dt * P[t, r, j]
        if dt > 0.0:
            for p in range(_PAIRS.shape[0]):
                i, j = _PAIRS[p, 0], _PAIRS[p, 1]
                q = sigmas[p] * sigmas[p]
                P[t, i, i] += q * dt2 * dt2 / 4.0
                P[t, i, j] += q * dt2 * dt / 2.0
                P[t, j, i] += q * dt2 * dt / 2.0
                P[t, j, j] += q * dt2


@njit(cache=True)
def cost_kernel(x, P, g_ref, basis, h_est, h_var, g_det, aspect_det, box_h_det,
                f, img_h, h_px_min, sigma_px, var_dir, var_aspect, eps_antipodal,
                chi2, lam_maha, lam_iou, lam_depth, sigma_d_gate):
    """Gate distances, spherical IoU and composite cost for every pair.

    Returns ``cost, feasible, d2, iou, w, d_det, var_d`` with the layout of
    ``cost_arrays``.
    """
    n, m = x.shape[0], g_det.shape[0]
    cost = np.full((n, m), np.inf)
    feasible = np.zeros((n, m), dtype=np.bool_)
    d2 = np.zeros((n, m))
    iou = np.zeros((n, m))
    w = np.zeros((n, m, 2))
    d_det = np.zeros((n, m))
    var_d = np.zeros((n, m))

    valid = np.empty(m, dtype=np.bool_)
    inv_tan = np.empty(m)
    sd_unit = np.empty(m)
    det_w = np.empty(m)
    det_h = np.empty(m)
    for j in range(m):
        bh = box_h_det[j]
        valid[j] = bh > h_px_min and bh <= img_h
        half = 0.5 * (bh if valid[j] else img_h) / f
        inv_tan[j] = 1.0 / math.tan(half)
        sh = math.sin(half)
        sd_unit[j] = sigma_px / (4.0 * f * sh * sh)
        det_w[j] = aspect_det[j] * bh / f
        det_h[j] = bh / f

    g_pred = np.empty(3)
    frame = np.empty((3, 2))
    S = np.empty((4, 4))
    L = np.zeros((4, 4))
    y = np.empty(4)
    idx = (0, 1, ASPECT, DEPTH)
    for i in range(n):
        B = basis[i]
        _exp(g_ref[i], B, x[i, 0], x[i, 1], 1e-7, g_pred)
        bh_t = max(x[i, BOX_H], 1e-6) / f
        bw_t = max(x[i, ASPECT], 1e-6) * bh_t
        for a in range(4):
            for b in range(4):
                S[a, b] = P[i, idx[a], idx[b]]
        S[0, 0] += var_dir
        S[1, 1] += var_dir
        S[2, 2] += var_aspect
        s33 = S[3, 3]
        he = h_est[i]
        for j in range(m):
            gd = g_det[j]
            c = g_ref[i, 0] * gd[0] + g_ref[i, 1] * gd[1] + g_ref[i, 2] * gd[2]
            u0 = gd[0] * B[0, 0] + gd[1] * B[1, 0] + gd[2] * B[2, 0]
            u1 = gd[0] * B[0, 1] + gd[1] * B[1, 1] + gd[2] * B[2, 1]
            s = math.hypot(u0, u1)
            k = math.atan2(s, c) / max(s, 1e-300)
            w0, w1 = u0 * k, u1 * k
            w[i, j, 0] = w0
            w[i, j, 1] = w1
            dd = 0.5 * he * inv_tan[j]
            vd = (he * sd_unit[j]) ** 2 + 0.25 * h_var[i] * inv_tan[j] * inv_tan[j]
            d_det[i, j] = dd
            var_d[i, j] = vd
            y[0] = w0 - x[i, 0]
            y[1] = w1 - x[i, 1]
            y[2] = aspect_det[j] - x[i, ASPECT]
            y[3] = dd - x[i, DEPTH]
            S[3, 3] = s33 + vd
            if not _cholesky(S, 4, L):
                d2[i, j] = np.inf
                continue
            # D2 = |L^-1 y|^2
            acc2 = 0.0
            for a in range(4):
                v = y[a]
                for b in range(a):
                    v -= L[a, b] * y[b]
                y[a] = v / L[a, a]
                acc2 += y[a] * y[a]
            d2[i, j] = acc2
            if acc2 <= chi2 and c > -1.0 + eps_antipodal and valid[j]:
                feasible[i, j] = True
                o = _iou(g_pred, bw_t, bh_t, gd, det_w[j], det_h[j], frame)
                iou[i, j] = o
                cost[i, j] = (lam_maha * acc2 / chi2 + lam_iou * (1.0 - o)
                              + lam_depth * abs(dd - x[i, DEPTH]) / sigma_d_gate)
    return cost, feasible, d2, iou, w, d_det, var_d


@njit(cache=True)
def update_kernel(x, P, sel, z, rows, mask, r, lambda_floor):
    """In-place masked correction of tracks ``sel``; mirrors ``update_rows_arrays``.

    Row ``t`` of ``z``, ``mask`` and ``r`` belongs to track ``sel[t]``.

    Returns 0 on success and 1 when an innovation covariance is not finite.
    """
    n, k_all = mask.shape
    eye = np.eye(STATE_DIM)
    for t in range(n):
        tr = sel[t]
        act = np.empty(k_all, dtype=np.int64)
        m = 0
        for k in range(k_all):
            if mask[t, k]:
                act[m] = k
                m += 1
        if m == 0:
            continue
        PHt = np.empty((STATE_DIM, m))
        S = np.empty((m, m))
        y = np.empty(m)
        rv = np.empty(m)
        for a in range(m):
            ra = rows[act[a]]
            for c in range(STATE_DIM):
                PHt[c, a] = P[tr, c, ra]
            for b in range(m):
                S[a, b] = P[tr, ra, rows[act[b]]]
            rv[a] = r[t, act[a]]
            S[a, a] += rv[a]
            y[a] = z[t, act[a]] - x[tr, ra]
        for a in range(m):
            for b in range(m):
                if not math.isfinite(S[a, b]):
                    return 1
        S_inv = np.empty((m, m))
        L = np.zeros((m, m))
        shifted = S.copy()
        for a in range(m):
            shifted[a, a] -= lambda_floor
        if _cholesky(shifted, m, L) and _cholesky(S, m, L):
            _cholesky_inverse(L, m, S_inv)
        else:
            evals, evecs = np.linalg.eigh(S)
            for a in range(m):
                evals[a] = max(evals[a], lambda_floor)
            for a in range(m):
                for b in range(m):
                    acc = 0.0
                    for e in range(m):
                        acc += evecs[a, e] * evecs[b, e] / evals[e]
                    S_inv[a, b] = acc
        K = PHt @ S_inv
        for c in range(STATE_DIM):
            acc = 0.0
            for a in range(m):
                acc += K[c, a] * y[a]
            x[tr, c] += acc
        # Joseph form: (I - K H) P (I - K H)^T + K R K^T
        A = eye.copy()
        for a in range(m):
            ra = rows[act[a]]
            for c in range(STATE_DIM):
                A[c, ra] -= K[c, a]
        Pt = np.ascontiguousarray(P[tr])
        Pn = A @ Pt @ A.T
        for c in range(STATE_DIM):
            for e in range(STATE_DIM):
                acc = 0.0
                for a in range(m):
                    acc += K[c, a] * rv[a] * K[e, a]
                Pn[c, e] += acc
        for c in range(STATE_DIM):
            for e in range(c + 1):
                v = 0.5 * (Pn[c, e] + Pn[e, c])
                P[tr, c, e] = v
                P[tr, e, c] = v
        x[tr, DEPTH] = max(x[tr, DEPTH], DEPTH_MIN)
        x[tr, ASPECT] = max(x[tr, ASPECT], ASPECT_MIN)
    return 0


@njit(cache=True)
def finalize_kernel(x, P, g_ref, basis, eps_small):
    """In-place re-anchoring; mirrors ``finalize_arrays``.

    Returns the index of the first track whose chart offset is outside the
    injectivity radius (leaving that and later tracks untouched), or -1.
    """
    n = x.shape[0]
    g_new = np.empty(3)
    B_new = np.empty((3, 2))
    T = np.empty((2, 2))
    M = np.empty((4, 4))
    for t in range(n):
        w0, w1 = x[t, 0], x[t, 1]
        if math.hypot(w0, w1) >= math.pi:
            return t
        B = basis[t]
        _exp(g_ref[t], B, w0, w1, eps_small, g_new)
        _tangent_basis(g_new[0], g_new[1], g_new[2], B_new)
        for a in range(2):
            for b in range(2):
                T[a, b] = B_new[0, a] * B[0, b] + B_new[1, a] * B[1, b] + B_new[2, a] * B[2, b]
        v0, v1 = x[t, 2], x[t, 3]
        x[t, 0] = 0.0
        x[t, 1] = 0.0
        x[t, 2] = T[0, 0] * v0 + T[0, 1] * v1
        x[t, 3] = T[1, 0] * v0 + T[1, 1] * v1
        M[:, :] = 0.0
        M[0:2, 0:2] = T
        M[2:4, 2:4] = T
        # rows 0..3 by M, then columns 0..3 by M^T
        top = np.empty((4, STATE_DIM))
        for a in range(4):
            for c in range(STATE_DIM):
                acc = 0.0
                for b in range(4):
                    acc += M[a, b] * P[t, b, c]
                top[a, c] = acc
        P[t, 0:4, :] = top
        left = np.empty((STATE_DIM, 4))
        for c in range(STATE_DIM):
            for a in range(4):
                acc = 0.0
                for b in range(4):
                    acc += P[t, c, b] * M[a, b]
                left[c, a] = acc
        P[t, :, 0:4] = left
        for c in range(STATE_DIM):
            for e in range(c):
                v = 0.5 * (P[t, c, e] + P[t, e, c])
                P[t, c, e] = v
                P[t, e, c] = v
        g_ref[t, :] = g_new
        basis[t, :, :] = B_new
    return -1
