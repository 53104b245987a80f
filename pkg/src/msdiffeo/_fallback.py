"""Pure numpy versions of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same floating-point operation order. Query points are given in
grid-index units, i.e. ``(x - origin) / h``.
"""
import numpy as np


def _cell(u, n):
    i0 = np.floor(u).astype(np.intp)
    np.clip(i0, 0, n - 2, out=i0)
    return i0, u - i0


def _blend(values, i0, j0, a, b):
    f00 = values[i0, j0]
    f10 = values[i0 + 1, j0]
    f01 = values[i0, j0 + 1]
    f11 = values[i0 + 1, j0 + 1]
    if values.ndim == 3:
        a = a[:, None]
        b = b[:, None]
    return ((1.0 - a) * (1.0 - b)) * f00 + (a * (1.0 - b)) * f10 + ((1.0 - a) * b) * f01 + (a * b) * f11


def interp_scalar(values, pts):
    """Bilinear interpolation with the query clamped into the grid."""
    nx, ny = values.shape[:2]
    u = np.clip(pts[:, 0], 0.0, nx - 1.0)
    w = np.clip(pts[:, 1], 0.0, ny - 1.0)
    i0, a = _cell(u, nx)
    j0, b = _cell(w, ny)
    return _blend(values, i0, j0, a, b)


def interp_vector(values, pts):
    """Bilinear interpolation of a vector field, faded to zero one cell outside."""
    nx, ny = values.shape[:2]
    u = pts[:, 0]
    w = pts[:, 1]
    du = np.maximum(np.maximum(-u, u - (nx - 1.0)), 0.0)
    dw = np.maximum(np.maximum(-w, w - (ny - 1.0)), 0.0)
    fade = np.maximum(1.0 - du, 0.0) * np.maximum(1.0 - dw, 0.0)
    i0, a = _cell(np.clip(u, 0.0, nx - 1.0), nx)
    j0, b = _cell(np.clip(w, 0.0, ny - 1.0), ny)
    return _blend(values, i0, j0, a, b) * fade[:, None]


def interp_map(values, pts):
    """Bilinear interpolation of a map; linear extrapolation outside the grid."""
    nx, ny = values.shape[:2]
    i0, a = _cell(pts[:, 0], nx)
    j0, b = _cell(pts[:, 1], ny)
    return _blend(values, i0, j0, a, b)


def gauss_apply(x, centers, mom, sig2, weights):
    """Sum over terms t of w_t exp(-|x - c|^2 / (2 sig2_t)) mom[t], accumulated in term order."""
    d = x[:, None, :] - centers[None, :, :]
    r2 = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1]
    out = np.zeros((x.shape[0], 2))
    for t in range(len(weights)):
        e = weights[t] * np.exp(r2 * (-0.5 / sig2[t]))
        out += e @ mom[t]
    return out
