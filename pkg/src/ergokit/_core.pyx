# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: Philox4x32-10 streams and a fused polynomial-drift
Euler-Maruyama stepper. Arithmetic order matches ``_fallback.py``."""

import numpy as np
from libc.math cimport log, sqrt, cos, sin, NAN
from libc.stdint cimport uint32_t, uint64_t, int64_t, uint8_t
from libc.stdlib cimport malloc, free

cdef uint32_t M0 = 0xD2511F53
cdef uint32_t M1 = 0xCD9E8D57
cdef uint32_t W0 = 0x9E3779B9
cdef uint32_t W1 = 0xBB67AE85
cdef double TWO_PI = 6.283185307179586
cdef double INV53 = 1.0 / 9007199254740992.0
cdef double DIVERGE_SQ = 1e24
cdef uint32_t TAG_BROWNIAN = 1


cdef inline void philox(uint64_t seed, uint32_t c0, uint32_t c1, uint32_t c2,
                        uint32_t c3, uint32_t* out) noexcept nogil:
    cdef uint32_t k0 = <uint32_t>seed
    cdef uint32_t k1 = <uint32_t>(seed >> 32)
    cdef uint64_t p0, p1
    cdef int r
    for r in range(10):
        if r:
            k0 = k0 + W0
            k1 = k1 + W1
        p0 = <uint64_t>M0 * c0
        p1 = <uint64_t>M1 * c2
        c0 = (<uint32_t>(p1 >> 32)) ^ c1 ^ k0
        c1 = <uint32_t>p1
        c2 = (<uint32_t>(p0 >> 32)) ^ c3 ^ k1
        c3 = <uint32_t>p0
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3


cdef inline void uniform2(uint64_t seed, uint32_t c0, uint32_t c1, uint32_t c2,
                          uint32_t c3, double* u) noexcept nogil:
    cdef uint32_t w[4]
    philox(seed, c0, c1, c2, c3, w)
    u[0] = <double>(((<uint64_t>(w[0] >> 5)) << 26) + (w[1] >> 6)) * INV53
    u[1] = <double>(((<uint64_t>(w[2] >> 5)) << 26) + (w[3] >> 6)) * INV53


cdef inline void normal2(uint64_t seed, uint32_t c0, uint32_t c1, uint32_t c2,
                         uint32_t c3, double* z) noexcept nogil:
    cdef double u[2]
    cdef double r, th
    uniform2(seed, c0, c1, c2, c3, u)
    r = sqrt(-2.0 * log(1.0 - u[0]))
    th = TWO_PI * u[1]
    z[0] = r * cos(th)
    z[1] = r * sin(th)


def uniform_pairs(uint64_t seed, const uint32_t[::1] c0, const uint32_t[::1] c1,
                  const uint32_t[::1] c2, const uint32_t[::1] c3):
    cdef Py_ssize_t n = c0.shape[0], i
    out = np.empty((n, 2))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            uniform2(seed, c0[i], c1[i], c2[i], c3[i], &o[i, 0])
    return out


def normal_pairs(uint64_t seed, const uint32_t[::1] c0, const uint32_t[::1] c1,
                 const uint32_t[::1] c2, const uint32_t[::1] c3):
    cdef Py_ssize_t n = c0.shape[0], i
    out = np.empty((n, 2))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            normal2(seed, c0[i], c1[i], c2[i], c3[i], &o[i, 0])
    return out


def brownian_normals(uint64_t seed, uint32_t stream, const uint32_t[::1] paths,
                     uint32_t step, Py_ssize_t m):
    cdef Py_ssize_t n = paths.shape[0], i, b
    cdef Py_ssize_t nblk = (m + 1) // 2
    cdef double z[2]
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for b in range(nblk):
                normal2(seed, step, paths[i], <uint32_t>b | (TAG_BROWNIAN << 24), stream, z)
                o[i, 2 * b] = z[0]
                if 2 * b + 1 < m:
                    o[i, 2 * b + 1] = z[1]
    return out


cdef inline void poly_drift(const double* x, Py_ssize_t d, const double[::1] coef,
                            const int64_t[::1] comp, const int64_t[:, ::1] expo,
                            double* out) noexcept nogil:
    cdef Py_ssize_t t, j, e, i
    cdef double v
    for i in range(d):
        out[i] = 0.0
    for t in range(coef.shape[0]):
        v = coef[t]
        for j in range(d):
            for e in range(expo[t, j]):
                v = v * x[j]
        i = comp[t]
        out[i] = out[i] + v


def euler_poly(const double[:, ::1] x0, double dt, int64_t n_steps,
               const double[::1] coef, const int64_t[::1] comp,
               const int64_t[:, ::1] expo, const double[:, ::1] amat,
               uint64_t seed, uint32_t stream, int64_t path_offset,
               const int64_t[::1] jump_ptr, const double[::1] jump_t,
               const double[:, ::1] jump_v, const int64_t[::1] save_steps,
               double[:, :, ::1] out, uint8_t[::1] diverged):
    """Fused Euler-Maruyama loop for polynomial drift, one path at a time."""
    cdef Py_ssize_t n = x0.shape[0], d = x0.shape[1], m = amat.shape[1]
    cdef Py_ssize_t nsave = save_steps.shape[0]
    cdef Py_ssize_t nblk = (m + 1) // 2
    cdef Py_ssize_t p, i, j, b, si, k
    cdef int64_t step, jidx, jend, js
    cdef double sqdt = sqrt(dt)
    cdef double t_lo, t_hi, seg, h, hf, tau, s2
    cdef int jumped, bad
    cdef uint32_t path
    cdef double* x = <double*>malloc(d * sizeof(double))
    cdef double* dr = <double*>malloc(d * sizeof(double))
    cdef double* nv = <double*>malloc(d * sizeof(double))
    cdef int* started = <int*>malloc(d * sizeof(int))
    cdef double* dw = <double*>malloc((2 * nblk) * sizeof(double))
    cdef bint have_jumps = jump_ptr.shape[0] > 0
    try:
        with nogil:
            for p in range(n):
                path = <uint32_t>(path_offset + p)
                for i in range(d):
                    x[i] = x0[p, i]
                diverged[p] = 0
                si = 0
                while si < nsave and save_steps[si] == 0:
                    for i in range(d):
                        out[p, si, i] = x[i]
                    si += 1
                if have_jumps:
                    jidx = jump_ptr[p]
                    jend = jump_ptr[p + 1]
                else:
                    jidx = 0
                    jend = 0
                for step in range(n_steps):
                    jumped = 0
                    t_lo = step * dt
                    seg = t_lo
                    while jidx < jend:
                        tau = jump_t[jidx]
                        js = <int64_t>(tau / dt)
                        if js > n_steps - 1:
                            js = n_steps - 1
                        if js != step:
                            break
                        h = tau - seg
                        if not (h > 0.0):
                            h = 0.0
                        poly_drift(x, d, coef, comp, expo, dr)
                        for i in range(d):
                            x[i] = x[i] + dr[i] * h
                        for i in range(d):
                            x[i] = x[i] + jump_v[jidx, i]
                        seg = tau
                        jumped = 1
                        jidx += 1
                    if jumped:
                        t_hi = (step + 1) * dt
                        hf = t_hi - seg
                        if not (hf > 0.0):
                            hf = 0.0
                    else:
                        hf = dt
                    for b in range(nblk):
                        normal2(seed, <uint32_t>(step + 1), path,
                                <uint32_t>b | (TAG_BROWNIAN << 24), stream, &dw[2 * b])
                    for j in range(m):
                        dw[j] = dw[j] * sqdt
                    poly_drift(x, d, coef, comp, expo, dr)
                    for i in range(d):
                        x[i] = x[i] + dr[i] * hf
                    for i in range(d):
                        started[i] = 0
                        for j in range(m):
                            if amat[i, j] != 0.0:
                                if started[i]:
                                    nv[i] = nv[i] + amat[i, j] * dw[j]
                                else:
                                    nv[i] = amat[i, j] * dw[j]
                                    started[i] = 1
                    for i in range(d):
                        if started[i]:
                            x[i] = x[i] + nv[i]
                    s2 = 0.0
                    for i in range(d):
                        s2 = s2 + x[i] * x[i]
                    bad = not (s2 <= DIVERGE_SQ)
                    if bad:
                        diverged[p] = 1
                        for k in range(si, nsave):
                            for i in range(d):
                                out[p, k, i] = NAN
                        si = nsave
                        break
                    while si < nsave and save_steps[si] == step + 1:
                        for i in range(d):
                            out[p, si, i] = x[i]
                        si += 1
    finally:
        free(x)
        free(dr)
        free(nv)
        free(started)
        free(dw)
