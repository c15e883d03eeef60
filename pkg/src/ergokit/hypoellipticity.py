"""The B_n(x) matrix recursion, the rank condition on the assembled columns,
and the Kalman controllability rank as an oracle for linear drifts.

B_0 = I and
    B_n = b . grad B_{n-1} - (grad b) B_{n-1} + 1/2 sum_{pq} (A1 A1^T)_{pq} d_p d_q B_{n-1}.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, EvaluationError
from .model import SdeModel
from .polynomial import Poly, evaluate_matrix, matmul

SV_TOL = 1e-8
FD_STEP = 1e-4
FD_WARN_DEPTH = 4


@dataclass
class BracketChain:
    x: np.ndarray
    depth: int
    matrices: list
    assembled: np.ndarray
    labels: list
    rank: int
    sv_tol: float
    singular_values: np.ndarray
    mode: str


@dataclass
class RankResult:
    satisfied: bool
    rank: int
    singular_values: np.ndarray


def numeric_rank(m, sv_tol=SV_TOL):
    """Rank and singular values with a threshold relative to the largest one."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        return 0, np.zeros(0)
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0, s
    return int(np.count_nonzero(s > sv_tol * s[0])), s


# ------------------------------------------------------------ exact recursion

def _poly_chain(model: SdeModel, depth):
    polys = model.drift.polys()
    d = model.dim
    q = model.a1 @ model.a1.T
    pairs = [(p, r, q[p, r]) for p in range(d) for r in range(d) if q[p, r] != 0.0]
    jac = [[polys[i].deriv(j) for j in range(d)] for i in range(d)]
    cur = [[Poly.const(d, 1.0 if i == j else 0.0) for j in range(d)] for i in range(d)]
    chain = [cur]
    for _ in range(depth):
        adv = [[Poly(d) for _ in range(d)] for _ in range(d)]
        for i in range(d):
            for j in range(d):
                m = cur[i][j]
                if m.is_zero():
                    continue
                acc = Poly(d)
                for l in range(d):
                    dm = m.deriv(l)
                    if not dm.is_zero() and not polys[l].is_zero():
                        acc = acc + polys[l] * dm
                for p, r, c in pairs:
                    acc = acc + m.deriv(p).deriv(r) * (0.5 * c)
                adv[i][j] = acc
        jb = matmul(jac, cur)
        cur = [[adv[i][j] - jb[i][j] for j in range(d)] for i in range(d)]
        chain.append(cur)
    return chain


def _exact_matrices(model: SdeModel, x, depth):
    if model.drift.poly is not None:
        return [evaluate_matrix(m, x) for m in _poly_chain(model, depth)]
    if model.drift.exact_jacobian is not None and depth == 1:
        return [np.eye(model.dim), -np.asarray(model.drift.exact_jacobian(x), dtype=float)]
    raise ConfigurationError("exact_supplied mode needs a polynomial drift (or depth 1 with an "
                             "exact Jacobian); use finite_difference")


# ------------------------------------------------------------ finite differences

class _FdChain:
    """B_n at lattice points x + h*offset, memoised on (n, offset)."""

    def __init__(self, model: SdeModel, x, h):
        self.model = model
        self.d = model.dim
        self.x = np.asarray(x, dtype=float)
        self.h = h * np.maximum(1.0, np.abs(self.x))
        q = model.a1 @ model.a1.T
        self.pairs = [(p, r, q[p, r]) for p in range(self.d) for r in range(self.d)
                      if q[p, r] != 0.0]
        self.memo = {}
        self.drift_memo = {}

    def point(self, off):
        return self.x + self.h * np.asarray(off, dtype=float)

    def drift(self, off):
        if off not in self.drift_memo:
            self.drift_memo[off] = np.asarray(self.model.drift.eval(self.point(off)), dtype=float)
        return self.drift_memo[off]

    def jac(self, off):
        # the drift's own derivative supplier when present; only the chain
        # itself is differenced, which keeps constant blocks free of rounding noise
        if self.model.drift.exact_jacobian is not None:
            return np.asarray(self.model.drift.exact_jacobian(self.point(off)), dtype=float)
        d = self.d
        cols = []
        for l in range(d):
            cols.append((self.drift(_shift(off, l, 1)) - self.drift(_shift(off, l, -1)))
                        / (2.0 * self.h[l]))
        return np.array(cols).T

    def B(self, n, off):
        key = (n, off)
        if key in self.memo:
            return self.memo[key]
        d = self.d
        if n == 0:
            val = np.eye(d)
        else:
            prev = self.B(n - 1, off)
            b = self.drift(off)
            adv = np.zeros((d, d))
            for l in range(d):
                if b[l] != 0.0:
                    dl = (self.B(n - 1, _shift(off, l, 1)) - self.B(n - 1, _shift(off, l, -1))) \
                        / (2.0 * self.h[l])
                    adv = adv + b[l] * dl
            hess = np.zeros((d, d))
            for p, r, c in self.pairs:
                if p == r:
                    d2 = (self.B(n - 1, _shift(off, p, 1)) - 2.0 * prev
                          + self.B(n - 1, _shift(off, p, -1))) / self.h[p] ** 2
                else:
                    d2 = (self.B(n - 1, _shift2(off, p, 1, r, 1))
                          - self.B(n - 1, _shift2(off, p, 1, r, -1))
                          - self.B(n - 1, _shift2(off, p, -1, r, 1))
                          + self.B(n - 1, _shift2(off, p, -1, r, -1))) / (4.0 * self.h[p] * self.h[r])
                hess = hess + 0.5 * c * d2
            val = adv - self.jac(off) @ prev + hess
        self.memo[key] = val
        return val


def _shift(off, i, s):
    o = list(off)
    o[i] += s
    return tuple(o)


def _shift2(off, i, si, j, sj):
    return _shift(_shift(off, i, si), j, sj)


# ------------------------------------------------------------ public API

def bn_chain(model: SdeModel, x, depth, derivative_mode="exact_supplied", sv_tol=SV_TOL,
             strict_paper_columns=False, fd_step=FD_STEP) -> BracketChain:
    """Evaluate B_0..B_depth at ``x`` and assemble the rank-condition columns.

    Columns are [A1, B1 A1, ..., Bn A1] followed, when the model carries a
    Levy spec, by [A2, B1 A2, ..., Bn A2]; ``strict_paper_columns`` drops the
    B1 A2 block.

    In ``finite_difference`` mode grad b comes from the drift's exact Jacobian
    when one is supplied (central differences otherwise) and the derivatives
    of B_{n-1} are central differences on a memoised lattice with step
    ``fd_step * max(1, |x_i|)``.  Rounding error grows by about h^-2 per
    level for nonlinear drifts, so depths beyond two are rough and beyond
    four trigger a warning.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise ConfigurationError(f"point has shape {x.shape}, expected ({model.dim},)")
    depth = int(depth)
    if depth < 1:
        raise ConfigurationError("depth must be >= 1")
    if derivative_mode == "exact_supplied":
        mats = _exact_matrices(model, x, depth)
    elif derivative_mode == "finite_difference":
        if depth > FD_WARN_DEPTH:
            warnings.warn(f"finite-difference depth {depth} > {FD_WARN_DEPTH}: rounding error is "
                          f"amplified by roughly h^-2 per level", stacklevel=2)
        fd = _FdChain(model, x, fd_step)
        zero = (0,) * model.dim
        mats = [fd.B(n, zero) for n in range(depth + 1)]
    else:
        raise ConfigurationError(f"unknown derivative_mode {derivative_mode!r}")
    for n, m in enumerate(mats):
        bad = np.argwhere(~np.isfinite(m))
        if bad.size:
            i, j = bad[0]
            raise EvaluationError(f"B_{n} entry ({i}, {j}) is not finite")
    blocks, labels = [], []
    for n, m in enumerate(mats):
        blocks.append(m @ model.a1)
        labels += [f"B{n}A1[:,{j}]" for j in range(model.a1.shape[1])]
    if model.levy is not None:
        for n, m in enumerate(mats):
            if strict_paper_columns and n == 1:
                continue
            blocks.append(m @ model.a2)
            labels += [f"B{n}A2[:,{j}]" for j in range(model.a2.shape[1])]
    assembled = np.concatenate(blocks, axis=1)
    rank, s = numeric_rank(assembled, sv_tol)
    return BracketChain(x, depth, mats, assembled, labels, rank, float(sv_tol), s,
                        derivative_mode)


def rank_condition(chain: BracketChain, d: Optional[int] = None) -> RankResult:
    """Rank of the assembled columns; satisfied iff it equals d."""
    d = chain.assembled.shape[0] if d is None else int(d)
    rank, s = numeric_rank(chain.assembled, chain.sv_tol)
    return RankResult(rank == d, rank, s)


def kalman_rank_oracle(B, A, sv_tol=SV_TOL):
    """Rank of the controllability matrix [A, BA, ..., B^{d-1} A]."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    d = B.shape[0]
    if B.shape != (d, d) or A.shape[0] != d:
        raise ConfigurationError("B must be d x d and A must have d rows")
    blocks = [A]
    for _ in range(d - 1):
        blocks.append(B @ blocks[-1])
    return numeric_rank(np.concatenate(blocks, axis=1), sv_tol)[0]


def rank_grid(model: SdeModel, points, depth, derivative_mode="exact_supplied",
              sv_tol=SV_TOL, strict_paper_columns=False):
    """Per-point ``(point, depth, rank, satisfied)`` rows over a state grid."""
    rows = []
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        ch = bn_chain(model, x, depth, derivative_mode, sv_tol, strict_paper_columns)
        r = rank_condition(ch, model.dim)
        rows.append((x, depth, r.rank, r.satisfied))
    return rows
