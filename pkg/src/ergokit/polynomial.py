"""Sparse multivariate polynomials with float coefficients.

Used for polynomial drift tables (which the compiled stepper consumes) and for
exact evaluation of the bracket recursion on polynomial drifts.
"""

from __future__ import annotations

import numpy as np


class Poly:
    """Polynomial in ``dim`` variables stored as ``{exponent tuple: coef}``."""

    __slots__ = ("dim", "terms")

    def __init__(self, dim: int, terms=None):
        self.dim = dim
        self.terms = {}
        for e, c in (terms or {}).items():
            e = tuple(int(v) for v in e)
            if len(e) != dim:
                raise ValueError(f"exponent {e} does not match dim {dim}")
            if c != 0.0:
                self.terms[e] = self.terms.get(e, 0.0) + float(c)

    @classmethod
    def const(cls, dim, c):
        return cls(dim, {(0,) * dim: c})

    @classmethod
    def var(cls, dim, j, c=1.0):
        e = [0] * dim
        e[j] = 1
        return cls(dim, {tuple(e): c})

    def _clean(self):
        self.terms = {e: c for e, c in self.terms.items() if c != 0.0}
        return self

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(self.dim, other)
        out = Poly(self.dim, self.terms)
        for e, c in other.terms.items():
            out.terms[e] = out.terms.get(e, 0.0) + c
        return out._clean()

    __radd__ = __add__

    def __neg__(self):
        return Poly(self.dim, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other if isinstance(other, Poly) else -float(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Poly):
            return Poly(self.dim, {e: c * float(other) for e, c in self.terms.items()})
        out = Poly(self.dim)
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out.terms[e] = out.terms.get(e, 0.0) + c1 * c2
        return out._clean()

    __rmul__ = __mul__

    def deriv(self, j: int) -> Poly:
        out = Poly(self.dim)
        for e, c in self.terms.items():
            if e[j]:
                e2 = list(e)
                e2[j] -= 1
                e2 = tuple(e2)
                out.terms[e2] = out.terms.get(e2, 0.0) + c * e[j]
        return out._clean()

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for e, c in self.terms.items():
            v = np.full(x.shape[:-1], c)
            for j, p in enumerate(e):
                if p:
                    v = v * x[..., j] ** p
            out = out + v
        return out

    def degree(self):
        return max((sum(e) for e in self.terms), default=0)

    def is_zero(self):
        return not self.terms

    def __repr__(self):
        return f"Poly({self.dim}, {self.terms!r})"


def table_from_polys(polys):
    """Flatten a list of component polynomials into ``(coef, comp, expo)`` arrays.

    Term order is deterministic (component, then sorted exponent) since the
    steppers sum terms in table order.
    """
    coef, comp, expo = [], [], []
    for i, p in enumerate(polys):
        for e in sorted(p.terms):
            coef.append(p.terms[e])
            comp.append(i)
            expo.append(e)
    d = polys[0].dim if polys else 0
    return (np.asarray(coef, dtype=np.float64),
            np.asarray(comp, dtype=np.int64),
            np.asarray(expo, dtype=np.int64).reshape(len(coef), d))


def polys_from_table(coef, comp, expo, dim):
    polys = [Poly(dim) for _ in range(dim)]
    for c, i, e in zip(coef, comp, expo):
        polys[int(i)] = polys[int(i)] + Poly(dim, {tuple(e): c})
    return polys


def matmul(a, b):
    """Product of two matrices of polynomials given as nested lists."""
    n, k, m = len(a), len(b), len(b[0])
    dim = a[0][0].dim
    out = [[Poly(dim) for _ in range(m)] for _ in range(n)]
    for i in range(n):
        for j in range(m):
            acc = Poly(dim)
            for l in range(k):
                if not a[i][l].is_zero() and not b[l][j].is_zero():
                    acc = acc + a[i][l] * b[l][j]
            out[i][j] = acc
    return out


def evaluate_matrix(mat, x):
    return np.array([[p(x) for p in row] for row in mat], dtype=float)
