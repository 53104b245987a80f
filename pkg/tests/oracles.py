"""Independent reference computations shared by the tests."""
import numpy as np
import scipy.linalg


def gauss_gram(points, sigma, weight=1.0):
    d = points[:, None, :] - points[None, :, :]
    return weight * np.exp(-np.sum(d * d, -1) / (2 * sigma * sigma))


def min_norm_split_qp(points, components, v):
    """argmin sum_i c_i' G_i c_i subject to sum_i G_i c_i = v, by null-space elimination.

    Returns the per-scale velocities G_i c_i at the points.
    """
    n = len(points)
    Gs = [gauss_gram(points, s, w) for s, w in components]
    A = np.hstack(Gs)                       # n x (k n)
    H = scipy.linalg.block_diag(*Gs)        # objective Hessian / 2
    Z = scipy.linalg.null_space(A)
    out = np.zeros((len(Gs), n, 2))
    for a in range(2):
        c0 = np.linalg.lstsq(A, v[:, a], rcond=None)[0]
        if Z.size:
            # minimise (c0 + Z y)' H (c0 + Z y)
            y = np.linalg.solve(Z.T @ H @ Z, -Z.T @ H @ c0)
            c = c0 + Z @ y
        else:
            c = c0
        for i, G in enumerate(Gs):
            out[i, :, a] = G @ c[i * n:(i + 1) * n]
    return list(out)
