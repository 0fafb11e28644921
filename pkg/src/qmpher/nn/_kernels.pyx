# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense-MLP kernels.

Matrix products go through the BLAS bundled with scipy; the element-wise
passes (bias, activations, masks, Adam, Polyak) are fused loops. Weights
are row-major ``(out, in)``; inputs are row-major ``(batch, in)``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _gemm_forward(double[:, ::1] w, double[:, ::1] x, double[:, ::1] z) noexcept nogil:
    # z (B, out) = x (B, in) @ w.T
    cdef int n_out = w.shape[0]
    cdef int n_in = w.shape[1]
    cdef int batch = x.shape[0]
    cdef double one = 1.0, zero = 0.0
    cdef char ta = b'T', tb = b'N'
    dgemm(&ta, &tb, &n_out, &batch, &n_in, &one, &w[0, 0], &n_in,
          &x[0, 0], &n_in, &zero, &z[0, 0], &n_out)


def forward(list weights, list biases, double[:, ::1] x, bint tanh_out):
    """Return ``(y, acts, pre_out)``; ``acts[i]`` is the input of layer i."""
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t batch = x.shape[0]
    cdef Py_ssize_t li, i, j, n_out
    cdef double[:, ::1] w
    cdef double[::1] b
    cdef double[:, ::1] z
    cdef double[:, ::1] yv
    cdef double v
    acts = [np.asarray(x)]
    cdef double[:, ::1] cur = x
    pre_out = None
    for li in range(n_layers):
        w = weights[li]
        b = biases[li]
        n_out = w.shape[0]
        z_arr = np.empty((batch, n_out), dtype=np.float64)
        z = z_arr
        if batch > 0 and n_out > 0 and w.shape[1] > 0:
            _gemm_forward(w, cur, z)
        elif batch > 0 and n_out > 0:
            z[:, :] = 0.0
        if li < n_layers - 1:
            for i in range(batch):
                for j in range(n_out):
                    v = z[i, j] + b[j]
                    z[i, j] = v if v > 0.0 else 0.0
            acts.append(z_arr)
            cur = z
        else:
            for i in range(batch):
                for j in range(n_out):
                    z[i, j] = z[i, j] + b[j]
            pre_out = z_arr
    if tanh_out:
        y_arr = np.empty_like(pre_out)
        z = pre_out
        yv = y_arr
        for i in range(batch):
            for j in range(z.shape[1]):
                yv[i, j] = tanh(z[i, j])
        return y_arr, acts, pre_out
    return pre_out, acts, pre_out


def backward(list weights, list acts, double[:, ::1] y, double[:, ::1] dy,
             bint tanh_out, dz_extra, list grad_weights, list grad_biases):
    """Write parameter gradients of ``sum(y * dy)`` into the grad views; return dx."""
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t batch = dy.shape[0]
    cdef Py_ssize_t n_out = dy.shape[1]
    cdef Py_ssize_t li, i, j
    cdef int m, n, k
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N', tt = b'T'
    cdef double[:, ::1] dz
    cdef double[:, ::1] extra
    cdef double[:, ::1] w
    cdef double[:, ::1] a
    cdef double[:, ::1] gw
    cdef double[::1] gb
    cdef double[:, ::1] dx
    cdef double s

    dz_arr = np.empty((batch, n_out), dtype=np.float64)
    dz = dz_arr
    for i in range(batch):
        for j in range(n_out):
            if tanh_out:
                dz[i, j] = dy[i, j] * (1.0 - y[i, j] * y[i, j])
            else:
                dz[i, j] = dy[i, j]
    if dz_extra is not None:
        extra = dz_extra
        for i in range(batch):
            for j in range(n_out):
                dz[i, j] += extra[i, j]

    for li in range(n_layers - 1, -1, -1):
        w = weights[li]
        a = acts[li]
        gw = grad_weights[li]
        gb = grad_biases[li]
        n_out = w.shape[0]
        m = <int>w.shape[1]
        for j in range(n_out):
            s = 0.0
            for i in range(batch):
                s += dz[i, j]
            gb[j] = s
        # gw (out, in) = dz.T @ a
        n = <int>n_out
        k = <int>batch
        if batch > 0 and m > 0 and n > 0:
            dgemm(&tn, &tt, &m, &n, &k, &one, &a[0, 0], &m, &dz[0, 0], &n,
                  &zero, &gw[0, 0], &m)
        else:
            gw[:, :] = 0.0
        # dx (B, in) = dz @ w
        dx_arr = np.zeros((batch, m), dtype=np.float64)
        dx = dx_arr
        if batch > 0 and m > 0 and n > 0:
            k = <int>batch
            dgemm(&tn, &tn, &m, &k, &n, &one, &w[0, 0], &m, &dz[0, 0], &n,
                  &zero, &dx[0, 0], &m)
        if li > 0:
            for i in range(batch):
                for j in range(m):
                    if a[i, j] <= 0.0:
                        dx[i, j] = 0.0
        dz = dx
        dz_arr = dx_arr
    return dz_arr


def adam(double[::1] params, double[::1] grads, double[::1] m, double[::1] v,
         double lr, double beta1, double beta2, double eps, long step):
    cdef Py_ssize_t i, n = params.shape[0]
    cdef double c1 = 1.0 - beta1 ** step
    cdef double c2 = 1.0 - beta2 ** step
    cdef double g, mh, vh
    for i in range(n):
        g = grads[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        mh = m[i] / c1
        vh = v[i] / c2
        params[i] -= lr * mh / (sqrt(vh) + eps)


def polyak(double[::1] target, double[::1] online, double tau):
    cdef Py_ssize_t i, n = target.shape[0]
    for i in range(n):
        target[i] = (1.0 - tau) * target[i] + tau * online[i]
