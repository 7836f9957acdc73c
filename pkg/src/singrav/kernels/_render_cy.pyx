# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rendering kernels: trilinear sampling and ray compositing."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, floor, log1p

cnp.import_array()


cdef inline double _clampd(double x, double lo, double hi) nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef inline void _trilinear4(const float[:, :, :, ::1] v,
                             double ux, double uy, double uz,
                             double* out) nogil:
    cdef Py_ssize_t w = v.shape[0], h = v.shape[1], u = v.shape[2], c = v.shape[3]
    cdef Py_ssize_t x0, y0, z0, x1, y1, z1, k
    cdef double fx, fy, fz, c00, c10, c01, c11, c0, c1

    ux = _clampd(ux, 0.0, w - 1.0)
    uy = _clampd(uy, 0.0, h - 1.0)
    uz = _clampd(uz, 0.0, u - 1.0)
    x0 = <Py_ssize_t>floor(ux)
    y0 = <Py_ssize_t>floor(uy)
    z0 = <Py_ssize_t>floor(uz)
    if x0 > w - 2:
        x0 = w - 2
    if y0 > h - 2:
        y0 = h - 2
    if z0 > u - 2:
        z0 = u - 2
    if x0 < 0:
        x0 = 0
    if y0 < 0:
        y0 = 0
    if z0 < 0:
        z0 = 0
    x1 = x0 + 1 if x0 + 1 < w else w - 1
    y1 = y0 + 1 if y0 + 1 < h else h - 1
    z1 = z0 + 1 if z0 + 1 < u else u - 1
    fx = ux - x0
    fy = uy - y0
    fz = uz - z0
    for k in range(c):
        c00 = v[x0, y0, z0, k] * (1 - fx) + v[x1, y0, z0, k] * fx
        c10 = v[x0, y1, z0, k] * (1 - fx) + v[x1, y1, z0, k] * fx
        c01 = v[x0, y0, z1, k] * (1 - fx) + v[x1, y0, z1, k] * fx
        c11 = v[x0, y1, z1, k] * (1 - fx) + v[x1, y1, z1, k] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        out[k] = c0 * (1 - fz) + c1 * fz


cdef inline double _softplus(double x) nogil:
    if x > 20.0:
        return x
    return log1p(exp(x))


def sample_grid(const float[:, :, :, ::1] values, const double[:, ::1] u):
    """Trilinear gather at (P, 3) continuous index coordinates; float32 out."""
    cdef Py_ssize_t p = u.shape[0], c = values.shape[3], i, k
    out_arr = np.empty((p, c), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef double buf[8]
    if c > 8:
        raise ValueError("sample_grid supports at most 8 channels")
    with nogil:
        for i in range(p):
            _trilinear4(values, u[i, 0], u[i, 1], u[i, 2], buf)
            for k in range(c):
                out[i, k] = <float>buf[k]
    return out_arr


def composite_rays(const float[:, :, :, ::1] values,
                   const double[:, ::1] origins,
                   const double[:, ::1] dirs,
                   const double[::1] bmin,
                   const double[::1] bmax,
                   double t_near, double t_far, Py_ssize_t m):
    """March uniform midpoint samples per ray and alpha-composite front to back."""
    cdef Py_ssize_t r = origins.shape[0], i, j
    if values.shape[3] != 4:
        raise ValueError("composite_rays expects 4-channel volumes")
    color_arr = np.empty((r, 3), dtype=np.float32)
    depth_arr = np.empty(r, dtype=np.float32)
    opac_arr = np.empty(r, dtype=np.float32)
    cdef float[:, ::1] color = color_arr
    cdef float[::1] depth = depth_arr
    cdef float[::1] opac = opac_arr
    cdef double sx = (bmax[0] - bmin[0]) / values.shape[0]
    cdef double sy = (bmax[1] - bmin[1]) / values.shape[1]
    cdef double sz = (bmax[2] - bmin[2]) / values.shape[2]
    cdef double h = (t_far - t_near) / m
    cdef double t, px, py, pz, ux, uy, uz, sigma, alpha, w, trans
    cdef double cr, cg, cb, d
    cdef double raw[8]
    with nogil:
        for i in range(r):
            trans = 1.0
            cr = 0.0
            cg = 0.0
            cb = 0.0
            d = 0.0
            for j in range(m):
                t = t_near + (j + 0.5) * h
                px = origins[i, 0] + t * dirs[i, 0]
                py = origins[i, 1] + t * dirs[i, 1]
                pz = origins[i, 2] + t * dirs[i, 2]
                ux = (px - bmin[0]) / sx - 0.5
                uy = (py - bmin[1]) / sy - 0.5
                uz = (pz - bmin[2]) / sz - 0.5
                _trilinear4(values, ux, uy, uz, raw)
                sigma = _softplus(raw[3])
                alpha = 1.0 - exp(-sigma * h)
                w = trans * alpha
                cr += w / (1.0 + exp(-raw[0]))
                cg += w / (1.0 + exp(-raw[1]))
                cb += w / (1.0 + exp(-raw[2]))
                d += w * t
                trans *= exp(-sigma * h)
            d += trans * t_far
            color[i, 0] = <float>cr
            color[i, 1] = <float>cg
            color[i, 2] = <float>cb
            depth[i] = <float>d
            opac[i] = <float>(1.0 - trans)
    return color_arr, depth_arr, opac_arr
