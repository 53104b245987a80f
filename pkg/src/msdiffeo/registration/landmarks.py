"""Landmark matching: forward RK4 in time and its exact reverse pass.

Momenta are piecewise constant on the M time intervals and sit on the moving
landmarks, so every velocity and norm is a finite Gram form. Kernel sums run
over the elementary kernel terms in order, which makes a continuum kernel and
its binned finite version produce bit-identical energies.
"""
from __future__ import annotations

import numpy as np

from ..flows import FlowBlowUpError


def _terms(spec, q):
    """E[t, a, b] = w_t exp(-|q_a - q_b|^2 / 2 sigma_t^2) and the differences q_a - q_b."""
    d = q[:, None, :] - q[None, :, :]
    r2 = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1]
    E = spec.weights[:, None, None] * np.exp(r2[None] * (-0.5 / spec.sig2)[:, None, None])
    return E, d


def _expand(spec, P, per_scale):
    """Momentum per kernel term, shape (T, n, 2)."""
    if per_scale:
        return P[spec.term_group]
    return np.broadcast_to(P[0], (len(spec.terms),) + P.shape[1:])


def velocity(spec, q, P, per_scale):
    """dq/dt at the landmarks for group momenta P (G, n, 2)."""
    E, _ = _terms(spec, q)
    if per_scale:
        Pt = _expand(spec, P, True)
        acc = np.zeros_like(q)
        for t in range(len(E)):
            acc = acc + E[t] @ Pt[t]
        return acc
    G = np.zeros(E.shape[1:])
    for t in range(len(E)):
        G = G + E[t]
    return G @ P[0]


def regularizer(spec, q, P, per_scale):
    """Squared norm of the generated field: p^T G p, or sum over groups of p_k^T G_k p_k.

    Returns the total and the per-group contributions.
    """
    E, _ = _terms(spec, q)
    ng = P.shape[0]
    groups = np.zeros(ng)
    if per_scale:
        total = 0.0
        for t in range(len(E)):
            pt = P[spec.term_group[t]]
            c = float(np.sum(E[t] * (pt @ pt.T)))
            total = total + c
            groups[spec.term_group[t]] += c
        return total, groups
    G = np.zeros(E.shape[1:])
    for t in range(len(E)):
        G = G + E[t]
    total = float(np.sum(G * (P[0] @ P[0].T)))
    groups[0] = total
    return total, groups


def velocity_vjp(spec, q, P, per_scale, lam):
    """Pullback of a covector lam on dq/dt to (q, P)."""
    E, d = _terms(spec, q)
    Pt = _expand(spec, P, per_scale)
    # S[t, a, b] = lam_a . P_b + lam_b . P_a
    LP = np.einsum("ai,tbi->tab", lam, Pt)
    S = LP + LP.transpose(0, 2, 1)
    W = E * S / spec.sig2[:, None, None]
    gq = -np.einsum("tab,abi->ai", W, d)
    gPt = np.einsum("tab,bi->tai", E, lam)
    return gq, _collect(spec, gPt, P.shape, per_scale)


def regularizer_grad(spec, q, P, per_scale):
    """Gradient of :func:`regularizer` with respect to (q, P)."""
    E, d = _terms(spec, q)
    Pt = _expand(spec, P, per_scale)
    PP = np.einsum("tai,tbi->tab", Pt, Pt)
    W = E * (2.0 * PP) / spec.sig2[:, None, None]
    gq = -np.einsum("tab,abi->ai", W, d)
    gPt = 2.0 * np.einsum("tab,tbi->tai", E, Pt)
    return gq, _collect(spec, gPt, P.shape, per_scale)


def _collect(spec, gPt, shape, per_scale):
    out = np.zeros(shape)
    if per_scale:
        np.add.at(out, spec.term_group, gPt)
    else:
        out[0] = gPt.sum(axis=0)
    return out


def _rk4(spec, q, P, per_scale, h):
    k1 = velocity(spec, q, P, per_scale)
    k2 = velocity(spec, q + (0.5 * h) * k1, P, per_scale)
    k3 = velocity(spec, q + (0.5 * h) * k2, P, per_scale)
    k4 = velocity(spec, q + h * k3, P, per_scale)
    return q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), (k1, k2, k3)


def _euler(spec, q, P, per_scale, h):
    k1 = velocity(spec, q, P, per_scale)
    return q + h * k1, (k1,)


def shoot(spec, q0, momenta, per_scale, integrator, keep_stages=False):
    """Landmark positions at every time node (M+1, n, 2)."""
    M = momenta.shape[0]
    sub = integrator.substeps
    h = 1.0 / (M * sub)
    step = _rk4 if integrator.scheme == "rk4" else _euler
    q = np.array(q0, dtype=float)
    traj = [q]
    stages = []
    for m in range(M):
        for _ in range(sub):
            qn, st = step(spec, q, momenta[m], per_scale, h)
            if keep_stages:
                stages.append((q, st))
            q = qn
        if not np.all(np.isfinite(q)):
            raise FlowBlowUpError()
        traj.append(q)
    return np.stack(traj), stages


def energy_parts(spec, q0, qt, momenta, per_scale, integrator):
    """(regularisation, per-group regularisation, data, trajectory)."""
    M = momenta.shape[0]
    traj, _ = shoot(spec, q0, momenta, per_scale, integrator)
    reg = 0.0
    groups = np.zeros(momenta.shape[1])
    for m in range(M):
        r, g = regularizer(spec, traj[m], momenta[m], per_scale)
        reg = reg + r / M
        groups = groups + g / M
    diff = traj[-1] - qt
    data = float(np.sum(diff * diff))
    return reg, groups, data, traj


def gradient(spec, q0, qt, momenta, per_scale, integrator, data_weight):
    """Exact gradient of reg + data_weight * data for the discrete forward model."""
    M = momenta.shape[0]
    sub = integrator.substeps
    h = 1.0 / (M * sub)
    traj, stages = shoot(spec, q0, momenta, per_scale, integrator, keep_stages=True)
    gP = np.zeros_like(momenta)
    lam = 2.0 * data_weight * (traj[-1] - qt)
    dt = 1.0 / M
    for m in range(M - 1, -1, -1):
        P = momenta[m]
        for j in range(sub - 1, -1, -1):
            q, st = stages[m * sub + j]
            if integrator.scheme == "euler":
                gq, gp = velocity_vjp(spec, q, P, per_scale, h * lam)
                gP[m] += gp
                lam = lam + gq
                continue
            k1, k2, k3 = st
            dk4 = (h / 6.0) * lam
            dk3 = (h / 3.0) * lam
            dk2 = (h / 3.0) * lam
            dk1 = (h / 6.0) * lam
            dq = lam.copy()
            g, gp = velocity_vjp(spec, q + h * k3, P, per_scale, dk4)
            dq += g
            dk3 = dk3 + h * g
            gP[m] += gp
            g, gp = velocity_vjp(spec, q + (0.5 * h) * k2, P, per_scale, dk3)
            dq += g
            dk2 = dk2 + (0.5 * h) * g
            gP[m] += gp
            g, gp = velocity_vjp(spec, q + (0.5 * h) * k1, P, per_scale, dk2)
            dq += g
            dk1 = dk1 + (0.5 * h) * g
            gP[m] += gp
            g, gp = velocity_vjp(spec, q, P, per_scale, dk1)
            dq += g
            gP[m] += gp
            lam = dq
        # regularisation is evaluated at the interval start
        rq, rp = regularizer_grad(spec, traj[m], P, per_scale)
        gP[m] += dt * rp
        lam = lam + dt * rq
    return gP


def positions_at(spec, traj, momenta, per_scale, integrator, t):
    """Landmark positions at an arbitrary time t (partial step inside its interval)."""
    M = momenta.shape[0]
    m = min(int(np.floor(t * M)), M - 1)
    tau = t - m / M
    q = traj[m]
    if tau <= 0:
        return q
    step = _rk4 if integrator.scheme == "rk4" else _euler
    sub = integrator.substeps
    for _ in range(sub):
        q, _ = step(spec, q, momenta[m], per_scale, tau / sub)
    return q
