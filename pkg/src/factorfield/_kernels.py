"""Hot-path kernels for feature sampling and its adjoint.

Numba-fused versions run when numba imports; the numpy fallbacks compute the
same values (to float rounding) so the package works without it.  Both paths
are deterministic for a fixed thread count.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import get_num_threads, get_thread_id, njit, prange
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False


def _np_spatial_forward(m0, m1, m2, v0, v1, v2, u, out):
    from .field import LINE_AXES, PLANE_AXES, sample_line, sample_plane
    r = m0.shape[0]
    mats = (m0, m1, m2)
    vecs = (v0, v1, v2)
    for k, ((a, b), c) in enumerate(zip(PLANE_AXES, LINE_AXES)):
        m = sample_plane(mats[k], u[:, a], u[:, b])
        v = sample_line(vecs[k], u[:, c])
        np.multiply(m, v, out=out[:, k * r:(k + 1) * r])


def _np_spatial_backward(m0, m1, m2, v0, v1, v2, u, g, gm0, gm1, gm2, gv0, gv1, gv2):
    from .field import LINE_AXES, PLANE_AXES, _line_coords, sample_line, sample_plane
    r = m0.shape[0]
    mats = (m0, m1, m2)
    vecs = (v0, v1, v2)
    gmats = (gm0, gm1, gm2)
    gvecs = (gv0, gv1, gv2)
    for k, ((a, b), c) in enumerate(zip(PLANE_AXES, LINE_AXES)):
        mat, vec = mats[k], vecs[k]
        na, nb = mat.shape[1], mat.shape[2]
        m = sample_plane(mat, u[:, a], u[:, b])
        v = sample_line(vec, u[:, c])
        gk = g[:, k * r:(k + 1) * r]
        g_m = gk * v
        g_v = gk * m
        ia, fa = _line_coords(u[:, a], na)
        ib, fb = _line_coords(u[:, b], nb)
        base = ia * nb + ib
        idx = np.concatenate([base, base + 1, base + nb, base + nb + 1])
        w = np.concatenate([(1 - fa) * (1 - fb), (1 - fa) * fb, fa * (1 - fb), fa * fb])
        vals = np.concatenate([g_m, g_m, g_m, g_m]) * w[:, None]
        gm_flat = gmats[k].reshape(r, -1)
        for ch in range(r):
            gm_flat[ch] += np.bincount(idx, weights=vals[:, ch], minlength=na * nb).astype(mat.dtype)
        ic, fc = _line_coords(u[:, c], vec.shape[1])
        idx_v = np.concatenate([ic, ic + 1])
        vals_v = np.concatenate([g_v * (1 - fc)[:, None], g_v * fc[:, None]])
        for ch in range(r):
            gvecs[k][ch] += np.bincount(idx_v, weights=vals_v[:, ch],
                                        minlength=vec.shape[1]).astype(vec.dtype)


def _np_relu_backward(g_h, h):
    g_h *= h > 0


def _np_pe_forward(x, n_freq, out):
    out[:, :3] = x
    for j in range(n_freq):
        angle = (np.pi * 2.0**j) * x
        np.sin(angle, out=out[:, 3 + 6 * j:6 + 6 * j])
        np.cos(angle, out=out[:, 6 + 6 * j:9 + 6 * j])


def _np_bias_relu(z, b):
    z += b
    np.maximum(z, 0, out=z)


if HAVE_NUMBA:

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_spatial_forward(m0, m1, m2, v0, v1, v2, u, out):  # pragma: no cover
        s_total = u.shape[0]
        r = m0.shape[0]
        for s in prange(s_total):
            ux, uy, uz = u[s, 0], u[s, 1], u[s, 2]
            ia = min(max(int(ux), 0), m0.shape[1] - 2)
            ib = min(max(int(uy), 0), m0.shape[2] - 2)
            ic = min(max(int(uz), 0), v0.shape[1] - 2)
            fa, fb, fc = ux - ia, uy - ib, uz - ic
            for q in range(r):
                m = (m0[q, ia, ib] * (1 - fa) * (1 - fb) + m0[q, ia, ib + 1] * (1 - fa) * fb
                     + m0[q, ia + 1, ib] * fa * (1 - fb) + m0[q, ia + 1, ib + 1] * fa * fb)
                v = v0[q, ic] * (1 - fc) + v0[q, ic + 1] * fc
                out[s, q] = m * v
            ia = min(max(int(ux), 0), m1.shape[1] - 2)
            ib = min(max(int(uz), 0), m1.shape[2] - 2)
            ic = min(max(int(uy), 0), v1.shape[1] - 2)
            fa, fb, fc = ux - ia, uz - ib, uy - ic
            for q in range(r):
                m = (m1[q, ia, ib] * (1 - fa) * (1 - fb) + m1[q, ia, ib + 1] * (1 - fa) * fb
                     + m1[q, ia + 1, ib] * fa * (1 - fb) + m1[q, ia + 1, ib + 1] * fa * fb)
                v = v1[q, ic] * (1 - fc) + v1[q, ic + 1] * fc
                out[s, r + q] = m * v
            ia = min(max(int(uy), 0), m2.shape[1] - 2)
            ib = min(max(int(uz), 0), m2.shape[2] - 2)
            ic = min(max(int(ux), 0), v2.shape[1] - 2)
            fa, fb, fc = uy - ia, uz - ib, ux - ic
            for q in range(r):
                m = (m2[q, ia, ib] * (1 - fa) * (1 - fb) + m2[q, ia, ib + 1] * (1 - fa) * fb
                     + m2[q, ia + 1, ib] * fa * (1 - fb) + m2[q, ia + 1, ib + 1] * fa * fb)
                v = v2[q, ic] * (1 - fc) + v2[q, ic + 1] * fc
                out[s, 2 * r + q] = m * v

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_spatial_backward_threaded(m0, m1, m2, v0, v1, v2, u, g,
                                      pm0, pm1, pm2, pv0, pv1, pv2):  # pragma: no cover
        s_total = u.shape[0]
        r = m0.shape[0]
        for s in prange(s_total):
            t = get_thread_id()
            ux, uy, uz = u[s, 0], u[s, 1], u[s, 2]

            ia = min(max(int(ux), 0), m0.shape[1] - 2)
            ib = min(max(int(uy), 0), m0.shape[2] - 2)
            ic = min(max(int(uz), 0), v0.shape[1] - 2)
            fa, fb, fc = ux - ia, uy - ib, uz - ic
            for q in range(r):
                m = (m0[q, ia, ib] * (1 - fa) * (1 - fb) + m0[q, ia, ib + 1] * (1 - fa) * fb
                     + m0[q, ia + 1, ib] * fa * (1 - fb) + m0[q, ia + 1, ib + 1] * fa * fb)
                v = v0[q, ic] * (1 - fc) + v0[q, ic + 1] * fc
                gm = g[s, q] * v
                gv = g[s, q] * m
                pm0[t, q, ia, ib] += gm * (1 - fa) * (1 - fb)
                pm0[t, q, ia, ib + 1] += gm * (1 - fa) * fb
                pm0[t, q, ia + 1, ib] += gm * fa * (1 - fb)
                pm0[t, q, ia + 1, ib + 1] += gm * fa * fb
                pv0[t, q, ic] += gv * (1 - fc)
                pv0[t, q, ic + 1] += gv * fc

            ia = min(max(int(ux), 0), m1.shape[1] - 2)
            ib = min(max(int(uz), 0), m1.shape[2] - 2)
            ic = min(max(int(uy), 0), v1.shape[1] - 2)
            fa, fb, fc = ux - ia, uz - ib, uy - ic
            for q in range(r):
                m = (m1[q, ia, ib] * (1 - fa) * (1 - fb) + m1[q, ia, ib + 1] * (1 - fa) * fb
                     + m1[q, ia + 1, ib] * fa * (1 - fb) + m1[q, ia + 1, ib + 1] * fa * fb)
                v = v1[q, ic] * (1 - fc) + v1[q, ic + 1] * fc
                gm = g[s, r + q] * v
                gv = g[s, r + q] * m
                pm1[t, q, ia, ib] += gm * (1 - fa) * (1 - fb)
                pm1[t, q, ia, ib + 1] += gm * (1 - fa) * fb
                pm1[t, q, ia + 1, ib] += gm * fa * (1 - fb)
                pm1[t, q, ia + 1, ib + 1] += gm * fa * fb
                pv1[t, q, ic] += gv * (1 - fc)
                pv1[t, q, ic + 1] += gv * fc

            ia = min(max(int(uy), 0), m2.shape[1] - 2)
            ib = min(max(int(uz), 0), m2.shape[2] - 2)
            ic = min(max(int(ux), 0), v2.shape[1] - 2)
            fa, fb, fc = uy - ia, uz - ib, ux - ic
            for q in range(r):
                m = (m2[q, ia, ib] * (1 - fa) * (1 - fb) + m2[q, ia, ib + 1] * (1 - fa) * fb
                     + m2[q, ia + 1, ib] * fa * (1 - fb) + m2[q, ia + 1, ib + 1] * fa * fb)
                v = v2[q, ic] * (1 - fc) + v2[q, ic + 1] * fc
                gm = g[s, 2 * r + q] * v
                gv = g[s, 2 * r + q] * m
                pm2[t, q, ia, ib] += gm * (1 - fa) * (1 - fb)
                pm2[t, q, ia, ib + 1] += gm * (1 - fa) * fb
                pm2[t, q, ia + 1, ib] += gm * fa * (1 - fb)
                pm2[t, q, ia + 1, ib + 1] += gm * fa * fb
                pv2[t, q, ic] += gv * (1 - fc)
                pv2[t, q, ic + 1] += gv * fc

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_relu_backward(g_h, h):  # pragma: no cover
        rows, cols = g_h.shape
        for i in prange(rows):
            for j in range(cols):
                if h[i, j] <= 0:
                    g_h[i, j] = 0.0

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_pe_forward(x, n_freq, out):  # pragma: no cover
        # octaves are exact doublings: seed sin/cos once, then double-angle
        rows = x.shape[0]
        for i in prange(rows):
            for c in range(3):
                out[i, c] = x[i, c]
                if n_freq > 0:
                    a = np.pi * x[i, c]
                    s = np.sin(a)
                    co = np.cos(a)
                    out[i, 3 + c] = s
                    out[i, 6 + c] = co
                    for j in range(1, n_freq):
                        s, co = 2.0 * s * co, 1.0 - 2.0 * s * s
                        out[i, 3 + 6 * j + c] = s
                        out[i, 6 + 6 * j + c] = co

    @njit(parallel=True, fastmath=True, cache=True)
    def _nb_bias_relu(z, b):  # pragma: no cover
        rows, cols = z.shape
        for i in prange(rows):
            for j in range(cols):
                v = z[i, j] + b[j]
                z[i, j] = v if v > 0 else 0.0

    def spatial_forward(mats, vecs, u, out):
        _nb_spatial_forward(mats[0], mats[1], mats[2], vecs[0], vecs[1], vecs[2], u, out)

    def spatial_backward(mats, vecs, u, g, gmats, gvecs):
        nt = get_num_threads()
        partials_m = [np.zeros((nt,) + m.shape, dtype=m.dtype) for m in mats]
        partials_v = [np.zeros((nt,) + v.shape, dtype=v.dtype) for v in vecs]
        _nb_spatial_backward_threaded(mats[0], mats[1], mats[2],
                                      vecs[0], vecs[1], vecs[2], u, g,
                                      partials_m[0], partials_m[1], partials_m[2],
                                      partials_v[0], partials_v[1], partials_v[2])
        for k in range(3):
            gmats[k] += partials_m[k].sum(axis=0)
            gvecs[k] += partials_v[k].sum(axis=0)

    def relu_backward(g_h, h):
        _nb_relu_backward(g_h, h)

    def pe_forward(x, n_freq, out):
        _nb_pe_forward(x, n_freq, out)

    def bias_relu(z, b):
        _nb_bias_relu(z, b)

else:

    def spatial_forward(mats, vecs, u, out):
        _np_spatial_forward(mats[0], mats[1], mats[2], vecs[0], vecs[1], vecs[2], u, out)

    def spatial_backward(mats, vecs, u, g, gmats, gvecs):
        _np_spatial_backward(mats[0], mats[1], mats[2], vecs[0], vecs[1], vecs[2], u, g,
                             gmats[0], gmats[1], gmats[2], gvecs[0], gvecs[1], gvecs[2])

    def relu_backward(g_h, h):
        _np_relu_backward(g_h, h)

    def pe_forward(x, n_freq, out):
        _np_pe_forward(x, n_freq, out)

    def bias_relu(z, b):
        _np_bias_relu(z, b)
