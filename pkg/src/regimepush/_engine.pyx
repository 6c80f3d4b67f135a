# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch path engine: per-path Euler/projection loop in C.

Twin of `_engine_py.evolve_batch`: same pre-generated inputs, same arithmetic
in the same order (build keeps FP contraction off), so outputs agree bitwise
with the fallback.
"""

import numpy as np

from libc.math cimport floor, sqrt, isfinite

BACKEND_NAME = "compiled"

DEF MAXN = 16

FLAG_NAN = 1
FLAG_DZ_NEGATIVE = 2
FLAG_X_NEGATIVE = 4

FAM_CONSTANT = 0
FAM_GEOMETRIC = 1
FAM_SQRT = 2
FAM_AFFINE = 3

MODE_POLICY = 0
MODE_EXPLICIT = 1


cdef inline double _clamp0(double x) noexcept nogil:
    return x if x > 0.0 else 0.0


cdef inline void _eval_vec(int fam, const double* coef, const double* A,
                           const double* x, int alpha, int n, double* out) noexcept nogil:
    # coef laid out (m, n); A laid out (m, n, n)
    cdef int i, j
    cdef double xc
    cdef const double* c = coef + alpha * n
    cdef const double* Aa
    if fam == 0:
        for i in range(n):
            out[i] = c[i]
    elif fam == 1:
        for i in range(n):
            out[i] = c[i] * _clamp0(x[i])
    elif fam == 2:
        for i in range(n):
            out[i] = c[i] * sqrt(_clamp0(x[i]))
    else:
        Aa = A + alpha * n * n
        for i in range(n):
            out[i] = c[i]
        for j in range(n):
            xc = _clamp0(x[j])
            for i in range(n):
                out[i] = out[i] + Aa[i * n + j] * xc


cdef inline void _sigma_dot(int fam, const double* full, const double* coef,
                            const double* x, int alpha, const double* xi,
                            int n, int d, double* out) noexcept nogil:
    # full laid out (m, n, d); coef laid out (m, n)
    cdef int i, j
    cdef double diag
    cdef const double* s
    cdef const double* c
    if d == 0:
        for i in range(n):
            out[i] = 0.0
        return
    if fam == 0:
        s = full + alpha * n * d
        for i in range(n):
            out[i] = 0.0
        for j in range(d):
            for i in range(n):
                out[i] = out[i] + s[i * d + j] * xi[j]
    elif fam == 1:
        c = coef + alpha * n
        for i in range(n):
            diag = c[i] * _clamp0(x[i])
            out[i] = diag * xi[i]
    else:
        c = coef + alpha * n
        for i in range(n):
            diag = c[i] * sqrt(_clamp0(x[i]))
            out[i] = diag * xi[i]


cdef double _interp(const double* region_a, const long* dims, const long* strides,
                    const double* h, const double* upper, const double* x,
                    int n) noexcept nogil:
    """Multilinear indicator interpolation; mirrors _engine_py.region_interp."""
    cdef long idx[MAXN]
    cdef double frac[MAXN]
    cdef int k, corner
    cdef double xk, t, fi, w, acc
    cdef long flat
    for k in range(n):
        xk = x[k]
        if xk < 0.0:
            xk = 0.0
        if xk > upper[k]:
            xk = upper[k]
        t = xk / h[k]
        fi = floor(t)
        if fi > <double>(dims[k] - 2):
            fi = <double>(dims[k] - 2)
        if fi < 0.0:
            fi = 0.0
        idx[k] = <long>fi
        frac[k] = t - fi
    acc = 0.0
    for corner in range(1 << n):
        w = 1.0
        flat = 0
        for k in range(n):
            if corner >> k & 1:
                w = w * frac[k]
                flat += (idx[k] + 1) * strides[k]
            else:
                w = w * (1.0 - frac[k])
                flat += idx[k] * strides[k]
        acc += w * region_a[flat]
    return acc


cdef bint _scan_down(const double* region_a, const long* dims, const long* strides,
                     const double* h, const double* upper, double* x, int axis,
                     int n, double v_start, double* y_out) noexcept nogil:
    cdef double xa, t, p_prev, v_prev, pj, vj, keep
    cdef long j0, jj
    xa = x[axis]
    if xa < 0.0:
        xa = 0.0
    if xa > upper[axis]:
        xa = upper[axis]
    t = floor(xa / h[axis])
    if t > <double>(dims[axis] - 2):
        t = <double>(dims[axis] - 2)
    if t < 0.0:
        t = 0.0
    j0 = <long>t
    p_prev = xa
    v_prev = v_start
    keep = x[axis]
    for jj in range(j0, -1, -1):
        pj = jj * h[axis]
        x[axis] = pj
        vj = _interp(region_a, dims, strides, h, upper, x, n)
        x[axis] = keep
        if vj >= 0.5:
            y_out[0] = pj + (0.5 - vj) * (p_prev - pj) / (v_prev - vj)
            return True
        p_prev = pj
        v_prev = vj
    return False


cdef void _project(const double* region_a, const long* dims, const long* strides,
                   const double* h, const double* upper, double* x, int n,
                   double v) noexcept nogil:
    cdef int sweep, axis, i
    cdef bint progressed, ok
    cdef double y
    for sweep in range(n):
        if v >= 0.5:
            return
        progressed = False
        for axis in range(n):
            if v >= 0.5:
                break
            ok = _scan_down(region_a, dims, strides, h, upper, x, axis, n, v, &y)
            if ok and y < x[axis]:
                x[axis] = y
                progressed = True
                v = _interp(region_a, dims, strides, h, upper, x, n)
        if v < 0.5 and not progressed:
            for i in range(n):
                if x[i] >= 0.0:
                    x[i] = 0.0
            return
    if v < 0.5:
        for i in range(n):
            if x[i] >= 0.0:
                x[i] = 0.0


def evolve_batch(mode, pack, region_pack, normals, regimes, x0, dt, sqdt,
                 discounts, z0, dz, record=False):
    """Compiled twin of _engine_py.evolve_batch (same contract)."""
    if record:
        from . import _engine_py
        return _engine_py.evolve_batch(mode, pack, region_pack, normals, regimes,
                                       x0, dt, sqdt, discounts, z0, dz, record=True)
    bfam_, bcoef_, bA_, sfam_, sfull_, scoef_, ffam_, fcoef_, fA_ = pack
    cdef int bfam = bfam_, sfam = sfam_, ffam = ffam_
    cdef double[:, ::1] bcoef = np.ascontiguousarray(bcoef_)
    cdef double[:, :, ::1] bA = np.ascontiguousarray(bA_)
    cdef double[:, :, ::1] sfull = np.ascontiguousarray(sfull_)
    cdef double[:, ::1] scoef = np.ascontiguousarray(scoef_)
    cdef double[:, ::1] fcoef = np.ascontiguousarray(fcoef_)
    cdef double[:, :, ::1] fA = np.ascontiguousarray(fA_)

    cdef double[:, :, ::1] norm = np.ascontiguousarray(normals)
    cdef signed char[:, ::1] regs = np.ascontiguousarray(regimes, dtype=np.int8)
    cdef double[::1] start = np.ascontiguousarray(x0, dtype=float)
    cdef double[::1] disc = np.ascontiguousarray(discounts)
    cdef double[:, ::1] z0v = np.ascontiguousarray(z0)
    cdef double[:, :, ::1] dzv = np.ascontiguousarray(dz)

    cdef Py_ssize_t B = norm.shape[0]
    cdef Py_ssize_t K = norm.shape[1]
    cdef int d = <int>norm.shape[2]
    cdef int n = <int>start.shape[0]
    if n > MAXN or d > MAXN:
        raise ValueError(f"kernel supports up to {MAXN} state/noise dimensions")

    cdef int c_mode = mode
    cdef double c_dt = dt, c_sqdt = sqdt

    cdef double[:, ::1] region
    cdef long dims[MAXN]
    cdef long strides[MAXN]
    cdef double hh[MAXN]
    cdef double uu[MAXN]
    cdef int k
    if c_mode == 0:
        region_arr, shape, h_arr, up_arr = region_pack
        region = np.ascontiguousarray(region_arr)
        for k in range(n):
            dims[k] = shape[k]
            hh[k] = h_arr[k]
            uu[k] = up_arr[k]
        strides[n - 1] = 1
        for k in range(n - 2, -1, -1):
            strides[k] = strides[k + 1] * dims[k + 1]
    else:
        region = np.zeros((1, 1))

    pay_arr = np.zeros(B)
    xf_arr = np.empty((B, n))
    zt_arr = np.empty((B, n))
    jump_arr = np.empty((B, n))
    flags_arr = np.zeros(B, dtype=np.int64)
    cdef double[::1] pay = pay_arr
    cdef double[:, ::1] xf = xf_arr
    cdef double[:, ::1] zt = zt_arr
    cdef double[:, ::1] jump = jump_arr
    cdef long[::1] flags = flags_arr

    # raw pointers into the packed arrays for the hot loop
    cdef const double* bcoef_p = &bcoef[0, 0]
    cdef const double* bA_p = &bA[0, 0, 0]
    cdef const double* sfull_p = &sfull[0, 0, 0]
    cdef const double* scoef_p = &scoef[0, 0]
    cdef const double* fcoef_p = &fcoef[0, 0]
    cdef const double* fA_p = &fA[0, 0, 0]
    cdef const double* norm_p = &norm[0, 0, 0]
    cdef const signed char* regs_p = &regs[0, 0]
    cdef const double* disc_p = &disc[0]
    cdef const double* z0_p = &z0v[0, 0] if z0v.shape[0] * z0v.shape[1] else NULL
    cdef const double* dz_p = &dzv[0, 0, 0] if dzv.shape[0] * dzv.shape[1] * dzv.shape[2] else NULL
    cdef long dz_pstride = K * n if dzv.shape[0] > 1 else 0
    cdef const double* region_p = &region[0, 0]
    cdef long region_stride = region.shape[1]

    cdef double x[MAXN]
    cdef double xn[MAXN]
    cdef double z[MAXN]
    cdef double bv[MAXN]
    cdef double sv[MAXN]
    cdef double fv[MAXN]
    cdef double p, v, inc, dzi, dsc
    cdef int a0, ak, an, i
    cdef Py_ssize_t pidx, step
    cdef long flag
    cdef bint neg
    cdef const double* xi_p
    cdef const double* dzrow

    with nogil:
        for pidx in range(B):
            flag = 0
            p = 0.0
            for i in range(n):
                x[i] = start[i]
                z[i] = 0.0
            a0 = regs_p[pidx * (K + 1)]
            _eval_vec(ffam, fcoef_p, fA_p, x, a0, n, fv)
            if c_mode == 0:
                for i in range(n):
                    xn[i] = x[i]
                v = _interp(region_p + a0 * region_stride, dims, strides, hh, uu, xn, n)
                if v < 0.5:
                    _project(region_p + a0 * region_stride, dims, strides, hh, uu, xn, n, v)
                for i in range(n):
                    dzi = x[i] - xn[i]
                    p += fv[i] * dzi
                    z[i] += dzi
                    jump[pidx, i] = dzi
                    x[i] = xn[i]
            else:
                neg = False
                for i in range(n):
                    dzi = z0_p[pidx * n + i]
                    p += fv[i] * dzi
                    x[i] = x[i] - dzi
                    z[i] += dzi
                    jump[pidx, i] = dzi
                    if dzi < 0.0:
                        neg = True
                if neg:
                    flag |= 2

            for step in range(K):
                ak = regs_p[pidx * (K + 1) + step]
                an = regs_p[pidx * (K + 1) + step + 1]
                _eval_vec(bfam, bcoef_p, bA_p, x, ak, n, bv)
                xi_p = norm_p + (pidx * K + step) * d
                _sigma_dot(sfam, sfull_p, scoef_p, x, ak, xi_p, n, d, sv)
                for i in range(n):
                    xn[i] = x[i] + bv[i] * c_dt + sv[i] * c_sqdt
                dsc = disc_p[step + 1]
                _eval_vec(ffam, fcoef_p, fA_p, xn, an, n, fv)
                if c_mode == 0:
                    for i in range(n):
                        x[i] = xn[i]
                    v = _interp(region_p + an * region_stride, dims, strides, hh, uu, x, n)
                    if v < 0.5:
                        _project(region_p + an * region_stride, dims, strides, hh, uu, x, n, v)
                    inc = 0.0
                    for i in range(n):
                        dzi = xn[i] - x[i]
                        inc += fv[i] * dzi
                        z[i] += dzi
                    p += dsc * inc
                else:
                    inc = 0.0
                    neg = False
                    dzrow = dz_p + pidx * dz_pstride + step * n
                    for i in range(n):
                        dzi = dzrow[i]
                        inc += fv[i] * dzi
                        z[i] += dzi
                        if dzi < 0.0:
                            neg = True
                    p += dsc * inc
                    for i in range(n):
                        x[i] = xn[i] - dzrow[i]
                    if neg:
                        flag |= 2
                for i in range(n):
                    if x[i] < -1e-12:
                        flag |= 4
            for i in range(n):
                xf[pidx, i] = x[i]
                zt[pidx, i] = z[i]
            if not isfinite(p):
                flag |= 1
            for i in range(n):
                if not isfinite(x[i]):
                    flag |= 1
            pay[pidx] = p
            flags[pidx] = flag

    return pay_arr, xf_arr, zt_arr, jump_arr, flags_arr, None
