# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled GRU recursion; same contract as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _sigmoid_inplace(double* a, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(n):
        a[i] = 1.0 / (1.0 + exp(-a[i]))


def gru_forward(double[:, :, ::1] xu, double[:, ::1] w, double[:, ::1] s0):
    cdef int T = xu.shape[0], B = xu.shape[1], H3 = xu.shape[2]
    cdef int H = H3 // 3, H2 = 2 * H
    states_a = np.empty((T, B, H))
    zs_a = np.empty((T, B, H))
    rs_a = np.empty((T, B, H))
    hs_a = np.empty((T, B, H))
    # pre[t] holds gate pre-activations, then activations in place
    pre_a = np.array(xu, copy=True)
    cdef double* states = <double*> cnp.PyArray_DATA(states_a)
    cdef double* zs = <double*> cnp.PyArray_DATA(zs_a)
    cdef double* rs = <double*> cnp.PyArray_DATA(rs_a)
    cdef double* hs = <double*> cnp.PyArray_DATA(hs_a)
    cdef double* pre = <double*> cnp.PyArray_DATA(pre_a)
    cdef double[::1] sr_v = np.empty(B * H)
    cdef double[::1] s_init = np.ascontiguousarray(s0).reshape(-1)
    cdef double* sr = &sr_v[0]
    cdef double* wp = &w[0, 0]
    cdef double* s
    cdef double* p
    cdef double* row
    cdef double one = 1.0
    cdef char n = b'N'
    cdef Py_ssize_t t, b, j, o
    cdef double z, h
    with nogil:
        s = &s_init[0]
        for t in range(T):
            p = pre + t * B * H3
            dgemm(&n, &n, &H2, &B, &H, &one, wp, &H3, s, &H, &one, p, &H3)
            for b in range(B):
                row = p + b * H3
                _sigmoid_inplace(row, H2)
                o = t * B * H + b * H
                for j in range(H):
                    sr[b * H + j] = s[b * H + j] * row[H + j]
                    zs[o + j] = row[j]
                    rs[o + j] = row[H + j]
            dgemm(&n, &n, &H, &B, &H, &one, wp + H2, &H3, sr, &H, &one, p + H2, &H3)
            for b in range(B):
                row = p + b * H3
                o = t * B * H + b * H
                for j in range(H):
                    h = tanh(row[H2 + j])
                    z = row[j]
                    hs[o + j] = h
                    states[o + j] = h + z * (s[b * H + j] - h)
            s = states + t * B * H
    return states_a, zs_a, rs_a, hs_a


def gru_backward(double[:, :, ::1] d_states, double[:, ::1] w, double[:, ::1] s0,
                 double[:, :, ::1] states, double[:, :, ::1] zs,
                 double[:, :, ::1] rs, double[:, :, ::1] hs):
    cdef int T = states.shape[0], B = states.shape[1], H = states.shape[2]
    cdef int H2 = 2 * H, H3 = 3 * H
    d_xu_a = np.empty((T, B, H3))
    cdef double* d_xu = <double*> cnp.PyArray_DATA(d_xu_a)
    cdef double[::1] ds_v = np.zeros(B * H)
    cdef double[::1] dsp_v = np.empty(B * H)
    cdef double[::1] dsr_v = np.empty(B * H)
    cdef double* ds = &ds_v[0]
    cdef double* ds_prev = &dsp_v[0]
    cdef double* d_sr = &dsr_v[0]
    cdef double* wp = &w[0, 0]
    cdef double* dst = &d_states[0, 0, 0]
    cdef double* st = &states[0, 0, 0]
    cdef double* zp = &zs[0, 0, 0]
    cdef double* rp = &rs[0, 0, 0]
    cdef double* hp = &hs[0, 0, 0]
    cdef double* s0p = &s0[0, 0]
    cdef double* sp
    cdef double* dx
    cdef double one = 1.0, zero = 0.0
    cdef char n = b'N', tr = b'T'
    cdef Py_ssize_t t, b, j, o, i
    cdef double g, z, r, h, dh
    with nogil:
        for t in range(T - 1, -1, -1):
            sp = st + (t - 1) * B * H if t > 0 else s0p
            dx = d_xu + t * B * H3
            for b in range(B):
                o = t * B * H + b * H
                for j in range(H):
                    i = b * H + j
                    g = ds[i] + dst[o + j]
                    z = zp[o + j]
                    h = hp[o + j]
                    dx[b * H3 + H2 + j] = g * (1.0 - z) * (1.0 - h * h)
                    dx[b * H3 + j] = g * (sp[i] - h) * z * (1.0 - z)
                    ds_prev[i] = g * z
            dgemm(&tr, &n, &H, &B, &H, &one, wp + H2, &H3, dx + H2, &H3,
                  &zero, d_sr, &H)
            for b in range(B):
                o = t * B * H + b * H
                for j in range(H):
                    i = b * H + j
                    r = rp[o + j]
                    dh = d_sr[i]
                    dx[b * H3 + H + j] = dh * sp[i] * r * (1.0 - r)
                    ds_prev[i] += dh * r
            dgemm(&tr, &n, &H, &B, &H2, &one, wp, &H3, dx, &H3, &one, ds_prev, &H)
            memcpy(ds, ds_prev, B * H * sizeof(double))
    states_np = np.asarray(states)
    s_prev_all = np.concatenate([np.asarray(s0)[None], states_np[:-1]], axis=0).reshape(T * B, H)
    flat = d_xu_a.reshape(T * B, H3)
    d_w = np.empty((H, H3))
    d_w[:, :H2] = s_prev_all.T @ flat[:, :H2]
    d_w[:, H2:] = (s_prev_all * np.asarray(rs).reshape(T * B, H)).T @ flat[:, H2:]
    return d_xu_a, d_w, np.asarray(ds_v).reshape(B, H).copy()
