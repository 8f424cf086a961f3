"""Pure numpy / Python versions of the compiled kernels."""
import numpy as np


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def gru_scan_forward(X, Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh, reverse):
    B, T, _ = X.shape
    H = Wz.shape[0]
    Hs, Z, R, C, P = (np.empty((B, T, H)) for _ in range(5))
    h = np.zeros((B, H))
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        x = X[:, t]
        P[:, t] = h
        z = _sigmoid(x @ Wz.T + h @ Uz.T + bz)
        r = _sigmoid(x @ Wr.T + h @ Ur.T + br)
        c = np.tanh(x @ Wh.T + (r * h) @ Uh.T + bh)
        h = (1.0 - z) * h + z * c
        Z[:, t], R[:, t], C[:, t], Hs[:, t] = z, r, c, h
    return Hs, Z, R, C, P


def gru_scan_backward(dHs, X, Wz, Wr, Wh, Uz, Ur, Uh, Z, R, C, P, reverse):
    B, T, D = X.shape
    H = Wz.shape[0]
    dX = np.zeros((B, T, D))
    dWz, dWr, dWh = (np.zeros((H, D)) for _ in range(3))
    dUz, dUr, dUh = (np.zeros((H, H)) for _ in range(3))
    dbz, dbr, dbh = (np.zeros(H) for _ in range(3))
    dnext = np.zeros((B, H))
    order = range(T) if reverse else range(T - 1, -1, -1)
    for t in order:
        x, z, r, c, hprev = X[:, t], Z[:, t], R[:, t], C[:, t], P[:, t]
        g = dHs[:, t] + dnext
        dh = g * (1.0 - z)
        dah = g * z * (1.0 - c * c)
        daz = g * (c - hprev) * z * (1.0 - z)
        drh = dah @ Uh
        dar = drh * hprev * r * (1.0 - r)
        dh = dh + drh * r
        dWz += daz.T @ x
        dWr += dar.T @ x
        dWh += dah.T @ x
        dUz += daz.T @ hprev
        dUr += dar.T @ hprev
        dUh += dah.T @ (r * hprev)
        dbz += daz.sum(axis=0)
        dbr += dar.sum(axis=0)
        dbh += dah.sum(axis=0)
        dX[:, t] = dah @ Wh + daz @ Wz + dar @ Wr
        dnext = dh + daz @ Uz + dar @ Ur
    return dX, dWz, dWr, dWh, dUz, dUr, dUh, dbz, dbr, dbh


def lcs_length(a, b):
    m = len(b)
    prev = [0] * (m + 1)
    for x in a:
        cur = [0] * (m + 1)
        for j in range(m):
            if x == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = prev[j + 1] if prev[j + 1] >= cur[j] else cur[j]
        prev = cur
    return prev[m]
