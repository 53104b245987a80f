"""Iterated semidirect products over a chain of groups.

Tuples carry an ordering tag:

* ``coarse_last``: chain G_1 ⊇ ... ⊇ G_n, product
  (g·h)_k = g_k c_{g_{k+1}...g_n}(h_k), with c_a(b) = a b a^{-1}.
* ``coarse_first``: chain G_1 ⊆ ... ⊆ G_n, product
  (g·h)_k = c_{(h_1...h_{k-1})^{-1}}(g_k) h_k.

Elements may be 3x3 matrices (the exact oracle) or grid diffeomorphisms; the
operations only need multiplication and inversion.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ..flows import Diffeomorphism, compose
from .reconstruct import COARSE_FIRST, COARSE_LAST

# chain levels for the matrix oracle, largest group first
GL = 0
UPPER = 1
UNIPOTENT = 2
CENTER = 3
LEVEL_NAMES = ("GL3", "upper-triangular", "unipotent", "unipotent-center")


@dataclass(frozen=True, eq=False)
class MatrixGroupElement:
    chain_level: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float).reshape(3, 3)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if not in_level(m, self.chain_level):
            raise ValueError(f"matrix is not in {LEVEL_NAMES[self.chain_level]}")

    def __matmul__(self, other):
        return MatrixGroupElement(min(self.chain_level, other.chain_level), self.matrix @ other.matrix)

    def inv(self):
        return MatrixGroupElement(self.chain_level, _inv(self.matrix, self.chain_level))


def _inv(m, level):
    if level >= UPPER:
        return scipy.linalg.solve_triangular(m, np.eye(3), lower=False)
    if abs(np.linalg.det(m)) < 1e-12:
        raise np.linalg.LinAlgError("singular element")
    return np.linalg.inv(m)


def in_level(m, level) -> bool:
    if level == GL:
        return bool(np.all(np.isfinite(m))) and abs(np.linalg.det(m)) > 0
    if m[1, 0] != 0 or m[2, 0] != 0 or m[2, 1] != 0 or np.any(np.diag(m) == 0):
        return False
    if level >= UNIPOTENT and np.any(np.diag(m) != 1):
        return False
    if level >= CENTER and (m[0, 1] != 0 or m[1, 2] != 0):
        return False
    return True


def random_element(rng, level, scale=0.5) -> MatrixGroupElement:
    """Well-conditioned random member of the given chain level."""
    a = scale * rng.standard_normal((3, 3))
    if level == GL:
        m = np.eye(3) + a
        while abs(np.linalg.det(m)) < 0.2:
            m = np.eye(3) + scale * rng.standard_normal((3, 3))
    else:
        m = np.triu(a)
        if level == UPPER:
            d = rng.uniform(0.5, 1.5, 3) * rng.choice([-1.0, 1.0], 3)
            m[np.diag_indices(3)] = d
        else:
            m[np.diag_indices(3)] = 1.0
            if level == CENTER:
                m[0, 1] = m[1, 2] = 0.0
    return MatrixGroupElement(level, m)


def chain_levels(n, ordering):
    """Chain level of each slot: largest group first for coarse_last, last for coarse_first."""
    levels = [min(k, CENTER) for k in range(n)]
    return levels if ordering == COARSE_LAST else levels[::-1]


def _mul(a, b):
    if isinstance(a, Diffeomorphism):
        return compose(a, b)
    return a @ b


def _inverse(a):
    if isinstance(a, Diffeomorphism):
        return a.inverse()
    if isinstance(a, MatrixGroupElement):
        return a.inv()
    return np.linalg.inv(a)


def random_batch(rng, batch, n, ordering, scale=0.5):
    """``batch`` random tuples as a tuple of n arrays of shape (batch, 3, 3)."""
    out = []
    for level in chain_levels(n, ordering):
        a = scale * rng.standard_normal((batch, 3, 3))
        if level == GL:
            m = np.eye(3) + a
            bad = np.abs(np.linalg.det(m)) < 0.2
            while np.any(bad):
                m[bad] = np.eye(3) + scale * rng.standard_normal((int(bad.sum()), 3, 3))
                bad = np.abs(np.linalg.det(m)) < 0.2
        else:
            m = np.triu(a)
            d = np.ones((batch, 3))
            if level == UPPER:
                d = rng.uniform(0.5, 1.5, (batch, 3)) * rng.choice([-1.0, 1.0], (batch, 3))
            m[:, np.arange(3), np.arange(3)] = d
            if level == CENTER:
                m[:, 0, 1] = m[:, 1, 2] = 0.0
        out.append(m)
    return SdpTuple(tuple(out), ordering)


def identity_batch(batch, n, ordering):
    return SdpTuple(tuple(np.broadcast_to(np.eye(3), (batch, 3, 3)).copy() for _ in range(n)), ordering)


def batch_in_chain(a: "SdpTuple") -> bool:
    """Exact structural membership of every slot of a batched tuple."""
    for m, level in zip(a.elements, chain_levels(a.n, a.ordering)):
        if level == GL:
            if not np.all(np.abs(np.linalg.det(m)) > 0):
                return False
            continue
        if np.any(m[:, 1, 0] != 0) or np.any(m[:, 2, 0] != 0) or np.any(m[:, 2, 1] != 0):
            return False
        if level >= UNIPOTENT and np.any(m[:, np.arange(3), np.arange(3)] != 1):
            return False
        if level >= CENTER and (np.any(m[:, 0, 1] != 0) or np.any(m[:, 1, 2] != 0)):
            return False
    return True


def _conj(g, h):
    return _mul(_mul(g, h), _inverse(g))


def _prod(items):
    out = items[0]
    for x in items[1:]:
        out = _mul(out, x)
    return out


@dataclass(frozen=True)
class SdpTuple:
    elements: tuple
    ordering: str

    def __post_init__(self):
        if self.ordering not in (COARSE_LAST, COARSE_FIRST):
            raise ValueError(f"unknown ordering {self.ordering!r}")
        object.__setattr__(self, "elements", tuple(self.elements))

    @property
    def n(self):
        return len(self.elements)

    def matrices(self):
        return np.stack([getattr(e, "matrix", e) for e in self.elements])

    @classmethod
    def identity(cls, n, ordering):
        levels = chain_levels(n, ordering)
        return cls(tuple(MatrixGroupElement(lv, np.eye(3)) for lv in levels), ordering)

    @classmethod
    def random(cls, rng, n, ordering):
        return cls(tuple(random_element(rng, lv) for lv in chain_levels(n, ordering)), ordering)


def _check(a, b):
    if a.ordering != b.ordering:
        raise ValueError("ordering mismatch")
    if a.n != b.n:
        raise ValueError("tuple length mismatch")


def sdp_multiply(a: SdpTuple, b: SdpTuple) -> SdpTuple:
    _check(a, b)
    g, h, n = a.elements, b.elements, a.n
    out = []
    if a.ordering == COARSE_LAST:
        for k in range(n):
            if k == n - 1:
                out.append(_mul(g[k], h[k]))
            else:
                out.append(_mul(g[k], _conj(_prod(g[k + 1:]), h[k])))
    else:
        for k in range(n):
            if k == 0:
                out.append(_mul(g[0], h[0]))
            else:
                out.append(_mul(_conj(_inverse(_prod(h[:k])), g[k]), h[k]))
    return SdpTuple(tuple(out), a.ordering)


def sdp_inverse(a: SdpTuple) -> SdpTuple:
    g, n = a.elements, a.n
    if a.ordering == COARSE_LAST:
        out = [
            _inverse(g[k]) if k == n - 1 else _conj(_inverse(_prod(g[k + 1:])), _inverse(g[k]))
            for k in range(n)
        ]
    else:
        out = []
        for k in range(n):
            if k == 0:
                out.append(_inverse(g[0]))
            else:
                out.append(_conj(_inverse(_prod(out[:k])), _inverse(g[k])))
    return SdpTuple(tuple(out), a.ordering)


def reorder_hom(a: SdpTuple) -> SdpTuple:
    """Phi: coarse_last tuple -> coarse_first tuple, (g_1..g_n) -> (g_n, ..., c_{(g_2...g_n)^{-1}} g_1)."""
    if a.ordering != COARSE_LAST:
        raise ValueError("reorder_hom maps coarse_last tuples")
    g, n = a.elements, a.n
    out = []
    for k in range(1, n + 1):
        j = n - k  # 0-based index of g_{n+1-k}
        out.append(g[j] if j == n - 1 else _conj(_inverse(_prod(g[j + 1:])), g[j]))
    return SdpTuple(tuple(out), COARSE_FIRST)


def reorder_hom_inverse(f: SdpTuple) -> SdpTuple:
    if f.ordering != COARSE_FIRST:
        raise ValueError("inverse reorder map takes coarse_first tuples")
    n = f.n
    g = [None] * n
    g[n - 1] = f.elements[0]
    for j in range(n - 2, -1, -1):
        g[j] = _conj(_prod(g[j + 1:]), f.elements[n - 1 - j])
    return SdpTuple(tuple(g), COARSE_LAST)


def trivialize(a: SdpTuple, which=None) -> tuple:
    """Homomorphism into the direct product G_1 x ... x G_n (largest factor first).

    T1 (coarse_last): (g_1...g_n, g_2...g_n, ..., g_n).
    T2 (coarse_first): (f_1...f_n, f_1...f_{n-1}, ..., f_1).
    """
    which = which or ("T1" if a.ordering == COARSE_LAST else "T2")
    e = a.elements
    if which == "T1":
        if a.ordering != COARSE_LAST:
            raise ValueError("T1 is defined on coarse_last tuples")
        return tuple(_prod(e[k:]) for k in range(a.n))
    if which == "T2":
        if a.ordering != COARSE_FIRST:
            raise ValueError("T2 is defined on coarse_first tuples")
        return tuple(_prod(e[: a.n - k]) for k in range(a.n))
    raise ValueError(f"unknown trivialization {which!r}")


def direct_multiply(a, b):
    return tuple(_mul(x, y) for x, y in zip(a, b))


def max_entry_error(a, b) -> float:
    """Largest entrywise gap between two tuples of matrix elements."""
    def mats(t):
        t = t.elements if isinstance(t, SdpTuple) else t
        return np.stack([getattr(x, "matrix", x) for x in t])

    return float(np.max(np.abs(mats(a) - mats(b))))


# ---- Lie algebra side (matrices) ----


def matrix_bracket(a, b):
    return a @ b - b @ a


def ad_matrix(g, u):
    return g @ u @ np.linalg.inv(g)


def sdp_velocity(g: SdpTuple, v) -> list:
    """Right-invariant reconstruction velocities dg_k/dt for algebra tuple v (matrices)."""
    mats = [x.matrix for x in g.elements]
    n = len(mats)
    out = []
    if g.ordering == COARSE_LAST:
        for k in range(n):
            tail = sum((v[i] for i in range(k + 1, n)), np.zeros((3, 3)))
            out.append((v[k] + tail - ad_matrix(mats[k], tail)) @ mats[k])
    else:
        for k in range(n):
            head = np.eye(3)
            for i in range(k):
                head = head @ mats[i]
            out.append(ad_matrix(np.linalg.inv(head), v[k]) @ mats[k])
    return out


def semidirect_bracket_matrices(u, v):
    """Bracket of the coarse_first semidirect algebra on matrix tuples."""
    out = []
    su = np.zeros((3, 3))
    sv = np.zeros((3, 3))
    for uk, vk in zip(u, v):
        out.append(matrix_bracket(uk, sv) + matrix_bracket(su, vk) + matrix_bracket(uk, vk))
        su = su + uk
        sv = sv + vk
    return out
