# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU scan and LCS kernels. Mirrors ``_fallback`` exactly in math."""
import numpy as np

from libc.math cimport exp, tanh


cdef inline double _sigmoid(double a) noexcept nogil:
    cdef double e
    if a >= 0:
        return 1.0 / (1.0 + exp(-a))
    e = exp(a)
    return e / (1.0 + e)


def gru_scan_forward(const double[:, :, ::1] X,
                     const double[:, ::1] Wz, const double[:, ::1] Wr, const double[:, ::1] Wh,
                     const double[:, ::1] Uz, const double[:, ::1] Ur, const double[:, ::1] Uh,
                     const double[::1] bz, const double[::1] br, const double[::1] bh,
                     bint reverse):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], D = X.shape[2], H = Wz.shape[0]
    cdef Py_ssize_t b, s, t, i, j, d
    cdef double az, ar, ac, zi

    Hs_arr = np.empty((B, T, H))
    Z_arr = np.empty((B, T, H))
    R_arr = np.empty((B, T, H))
    C_arr = np.empty((B, T, H))
    P_arr = np.empty((B, T, H))
    cdef double[:, :, ::1] hs = Hs_arr
    cdef double[:, :, ::1] zz = Z_arr
    cdef double[:, :, ::1] rr = R_arr
    cdef double[:, :, ::1] cc = C_arr
    cdef double[:, :, ::1] hp = P_arr
    cdef double[::1] h = np.zeros(H)
    cdef double[::1] rh = np.zeros(H)

    with nogil:
        for b in range(B):
            for i in range(H):
                h[i] = 0.0
            for s in range(T):
                t = T - 1 - s if reverse else s
                for i in range(H):
                    hp[b, t, i] = h[i]
                for i in range(H):
                    az = bz[i]
                    ar = br[i]
                    for d in range(D):
                        az = az + Wz[i, d] * X[b, t, d]
                        ar = ar + Wr[i, d] * X[b, t, d]
                    for j in range(H):
                        az = az + Uz[i, j] * h[j]
                        ar = ar + Ur[i, j] * h[j]
                    zz[b, t, i] = _sigmoid(az)
                    rr[b, t, i] = _sigmoid(ar)
                for j in range(H):
                    rh[j] = rr[b, t, j] * h[j]
                for i in range(H):
                    ac = bh[i]
                    for d in range(D):
                        ac = ac + Wh[i, d] * X[b, t, d]
                    for j in range(H):
                        ac = ac + Uh[i, j] * rh[j]
                    cc[b, t, i] = tanh(ac)
                for i in range(H):
                    zi = zz[b, t, i]
                    h[i] = (1.0 - zi) * h[i] + zi * cc[b, t, i]
                    hs[b, t, i] = h[i]
    return Hs_arr, Z_arr, R_arr, C_arr, P_arr


def gru_scan_backward(const double[:, :, ::1] dHs, const double[:, :, ::1] X,
                      const double[:, ::1] Wz, const double[:, ::1] Wr, const double[:, ::1] Wh,
                      const double[:, ::1] Uz, const double[:, ::1] Ur, const double[:, ::1] Uh,
                      const double[:, :, ::1] Z, const double[:, :, ::1] R,
                      const double[:, :, ::1] C, const double[:, :, ::1] P,
                      bint reverse):
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], D = X.shape[2], H = Wz.shape[0]
    cdef Py_ssize_t b, s, t, i, j, d
    cdef double g, z, r, c, hprev, acc

    dX_arr = np.zeros((B, T, D))
    grads = [np.zeros((H, D)) for _ in range(3)] + [np.zeros((H, H)) for _ in range(3)] \
        + [np.zeros(H) for _ in range(3)]
    cdef double[:, :, ::1] dX = dX_arr
    cdef double[:, ::1] dWz = grads[0]
    cdef double[:, ::1] dWr = grads[1]
    cdef double[:, ::1] dWh = grads[2]
    cdef double[:, ::1] dUz = grads[3]
    cdef double[:, ::1] dUr = grads[4]
    cdef double[:, ::1] dUh = grads[5]
    cdef double[::1] dbz = grads[6]
    cdef double[::1] dbr = grads[7]
    cdef double[::1] dbh = grads[8]
    cdef double[::1] dnext = np.zeros(H)
    cdef double[::1] dh = np.zeros(H)
    cdef double[::1] daz = np.zeros(H)
    cdef double[::1] dar = np.zeros(H)
    cdef double[::1] dah = np.zeros(H)
    cdef double[::1] drh = np.zeros(H)

    with nogil:
        for b in range(B):
            for i in range(H):
                dnext[i] = 0.0
            for s in range(T - 1, -1, -1):
                t = T - 1 - s if reverse else s
                for i in range(H):
                    g = dHs[b, t, i] + dnext[i]
                    z = Z[b, t, i]
                    c = C[b, t, i]
                    hprev = P[b, t, i]
                    dh[i] = g * (1.0 - z)
                    dah[i] = g * z * (1.0 - c * c)
                    daz[i] = g * (c - hprev) * z * (1.0 - z)
                for j in range(H):
                    acc = 0.0
                    for i in range(H):
                        acc = acc + dah[i] * Uh[i, j]
                    drh[j] = acc
                for j in range(H):
                    r = R[b, t, j]
                    hprev = P[b, t, j]
                    dar[j] = drh[j] * hprev * r * (1.0 - r)
                    dh[j] = dh[j] + drh[j] * r
                for i in range(H):
                    dbz[i] += daz[i]
                    dbr[i] += dar[i]
                    dbh[i] += dah[i]
                    for d in range(D):
                        dWz[i, d] += daz[i] * X[b, t, d]
                        dWr[i, d] += dar[i] * X[b, t, d]
                        dWh[i, d] += dah[i] * X[b, t, d]
                    for j in range(H):
                        hprev = P[b, t, j]
                        dUz[i, j] += daz[i] * hprev
                        dUr[i, j] += dar[i] * hprev
                        dUh[i, j] += dah[i] * R[b, t, j] * hprev
                for d in range(D):
                    acc = 0.0
                    for i in range(H):
                        acc = acc + dah[i] * Wh[i, d] + daz[i] * Wz[i, d] + dar[i] * Wr[i, d]
                    dX[b, t, d] = acc
                for j in range(H):
                    acc = dh[j]
                    for i in range(H):
                        acc = acc + daz[i] * Uz[i, j] + dar[i] * Ur[i, j]
                    dnext[j] = acc
    return (dX_arr,) + tuple(grads)


def lcs_length(const long long[::1] a, const long long[::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    cdef long long[::1] prev = np.zeros(m + 1, dtype=np.int64)
    cdef long long[::1] cur = np.zeros(m + 1, dtype=np.int64)
    cdef long long[::1] tmp
    with nogil:
        for i in range(n):
            cur[0] = 0
            for j in range(m):
                if a[i] == b[j]:
                    cur[j + 1] = prev[j] + 1
                elif prev[j + 1] >= cur[j]:
                    cur[j + 1] = prev[j + 1]
                else:
                    cur[j + 1] = cur[j]
            tmp = prev
            prev = cur
            cur = tmp
    return int(prev[m])
