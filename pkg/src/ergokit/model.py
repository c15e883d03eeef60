"""SDE model definitions: drift fields, noise coefficients, Lyapunov functions.

Models describe ``dX = b(X) dt + A1 dW + A2 dL`` on R^d with constant ``A1``,
``A2``. Drift maps are vectorised over leading axes: ``eval`` accepts an array
whose last axis has length ``dim``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from . import _fallback
from .errors import ConfigurationError, EvaluationError, InputError
from .polynomial import Poly, polys_from_table, table_from_polys


@dataclass(frozen=True, eq=False)
class DriftField:
    """Drift vector field with optional exact Jacobian.

    ``poly`` holds a ``(coef, comp, expo)`` term table when the field is
    polynomial; such fields get the compiled stepper and exact brackets.
    """

    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    exact_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    fd_step: float = 1e-5
    poly: Optional[tuple] = None

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ConfigurationError("drift dim must be a positive integer")
        if not self.fd_step > 0:
            raise ConfigurationError("fd_step must be positive")

    def polys(self):
        if self.poly is None:
            return None
        return polys_from_table(*self.poly, self.dim)


def polynomial_drift(components, fd_step=1e-5) -> DriftField:
    """Build a drift from per-component polynomials.

    ``components`` is a list (one entry per output coordinate) of either
    :class:`Poly` objects or mappings ``{exponent tuple: coefficient}``.
    """
    dim = len(components)
    polys = [c if isinstance(c, Poly) else Poly(dim, c) for c in components]
    table = table_from_polys(polys)
    coef, comp, expo = table
    jac = [[p.deriv(j) for j in range(dim)] for p in polys]

    def ev(x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, dim)
        return _fallback.poly_eval(flat, coef, comp, expo).reshape(x.shape)

    def exact_jacobian(x):
        x = np.asarray(x, dtype=float)
        return np.array([[q(x) for q in row] for row in jac], dtype=float)

    return DriftField(dim, ev, exact_jacobian, fd_step, table)


def linear_drift(B) -> DriftField:
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d = B.shape[0]
    comps = []
    for i in range(d):
        terms = {}
        for j in range(d):
            e = [0] * d
            e[j] = 1
            terms[tuple(e)] = B[i, j]
        comps.append(terms)
    return polynomial_drift(comps)


@dataclass(frozen=True, eq=False)
class SdeModel:
    """``dX = b(X) dt + A1 dW + A2 dL``.

    ``gaussian_marginal(x0, t, coords)`` may return ``(mean, cov)`` of the
    selected coordinates of X_t(x0) when that marginal is exactly Gaussian,
    else ``None``.
    """

    drift: DriftField
    a1: np.ndarray
    a2: np.ndarray
    levy: Optional[object] = None
    dissipativity_k: Optional[float] = None
    name: str = "custom"
    gaussian_marginal: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.drift.dim
        a1 = np.atleast_2d(np.asarray(self.a1, dtype=float))
        a2 = np.atleast_2d(np.asarray(self.a2, dtype=float))
        if a1.shape != (d, d) or a2.shape != (d, d):
            raise ConfigurationError(
                f"a1 {a1.shape} and a2 {a2.shape} must both be {d}x{d}")
        if self.levy is not None and getattr(self.levy, "dim", d) != d:
            raise ConfigurationError("levy spec dimension does not match the drift")
        if self.dissipativity_k is not None and not self.dissipativity_k > 0:
            raise ConfigurationError("dissipativity_k must be positive")
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)

    @property
    def dim(self):
        return self.drift.dim


@dataclass(frozen=True, eq=False)
class LyapunovSpec:
    v_eval: Callable[[np.ndarray], np.ndarray]
    t_star: float
    description: str = ""

    def __post_init__(self):
        if not self.t_star > 0:
            raise ConfigurationError("t_star must be positive")


def lifted(v, t_star, description=""):
    """Lyapunov spec for ``1 + v``; keeps the drift inequality with a shifted beta."""
    return LyapunovSpec(lambda x: 1.0 + np.asarray(v(x)), t_star, description or "1 + V")


def quadratic_lyapunov(t_star=1.0):
    return LyapunovSpec(lambda x: 1.0 + np.sum(np.asarray(x) ** 2, axis=-1), t_star, "1 + |x|^2")


def e1_lyapunov(t_star=2.0):
    """``1 + |x| + |y|^2`` for the two-dimensional example model."""
    def v(z):
        z = np.asarray(z)
        return 1.0 + np.abs(z[..., 0]) + z[..., 1] ** 2
    return LyapunovSpec(v, t_star, "1 + |x| + |y|^2")


# ---------------------------------------------------------------- operations

def _as_point(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise ConfigurationError(f"point has shape {x.shape}, expected ({model.dim},)")
    if not np.all(np.isfinite(x)):
        raise InputError("point must be finite")
    return x


def _check_finite(values, what):
    bad = np.flatnonzero(~np.isfinite(np.ravel(values)))
    if bad.size:
        raise EvaluationError(f"{what} is non-finite at coordinate {int(bad[0])}")


def eval_drift(model: SdeModel, x) -> np.ndarray:
    x = _as_point(model, x)
    out = np.asarray(model.drift.eval(x), dtype=float)
    if out.shape != (model.dim,):
        raise ConfigurationError(f"drift returned shape {out.shape}")
    _check_finite(out, "drift")
    return out


def fd_jacobian(f, x, step):
    """Central differences with per-coordinate step ``step * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    d = x.size
    h = step * np.maximum(1.0, np.abs(x))
    pts = np.repeat(x[None, :], 2 * d, axis=0)
    idx = np.arange(d)
    pts[idx, idx] += h
    pts[d + idx, idx] -= h
    vals = np.asarray(f(pts), dtype=float)
    return ((vals[:d] - vals[d:]) / (2.0 * h)[:, None]).T


def jacobian(model: SdeModel, x, force_fd=False) -> np.ndarray:
    """(nabla b)_{ij} = d b_i / d x_j at ``x``."""
    x = _as_point(model, x)
    if model.drift.exact_jacobian is not None and not force_fd:
        J = np.asarray(model.drift.exact_jacobian(x), dtype=float)
    else:
        J = fd_jacobian(model.drift.eval, x, model.drift.fd_step)
    if J.shape != (model.dim, model.dim):
        raise ConfigurationError(f"jacobian has shape {J.shape}")
    _check_finite(J, "jacobian")
    return J


@dataclass
class DissipativityReport:
    passed: bool
    worst_ratio: float
    worst_pair: Optional[tuple]
    k_declared: float
    tolerance: float


def check_dissipativity(model: SdeModel, sample_pairs, k_declared, tolerance=1e-9):
    """Check <x-y, b(x)-b(y)> <= -k |x-y|^2 on the supplied pairs.

    The report's ``worst_pair`` is the pair maximising the ratio; it is set
    whether or not the check passes.
    """
    pairs = list(sample_pairs)
    if not pairs:
        raise InputError("no sample pairs supplied")
    X = np.array([np.asarray(p[0], dtype=float).reshape(model.dim) for p in pairs])
    Y = np.array([np.asarray(p[1], dtype=float).reshape(model.dim) for p in pairs])
    diff = X - Y
    n2 = np.sum(diff * diff, axis=1)
    if np.any(n2 == 0):
        i = int(np.flatnonzero(n2 == 0)[0])
        raise InputError(f"pair {i} has x == y")
    bx = np.asarray(model.drift.eval(X), dtype=float)
    by = np.asarray(model.drift.eval(Y), dtype=float)
    _check_finite(bx, "drift")
    _check_finite(by, "drift")
    ratio = np.sum(diff * (bx - by), axis=1) / n2
    i = int(np.argmax(ratio))
    worst = float(ratio[i])
    return DissipativityReport(worst <= -k_declared + tolerance, worst,
                               (X[i].copy(), Y[i].copy()), float(k_declared), tolerance)


# ---------------------------------------------------------------- built-ins

def example_e1(k=1.0, sigma=1.0) -> SdeModel:
    """dX = (Y^2 - kX) dt, dY = -kY dt + sigma dW (noise on Y only)."""
    if not k > 0:
        raise ConfigurationError("k must be positive")
    if sigma == 0:
        raise ConfigurationError("sigma must be nonzero")
    drift = polynomial_drift([{(0, 2): 1.0, (1, 0): -k}, {(0, 1): -k}])
    a1 = np.array([[0.0, 0.0], [0.0, sigma]])

    def marginal(x0, t, coords):
        if tuple(coords) != (1,):
            return None
        from .integrate import ou_moments
        m, v = ou_moments(k, sigma, float(np.asarray(x0)[1]), t)
        return np.array([m]), np.array([[v]])

    return SdeModel(drift, a1, np.zeros((2, 2)), None, None, "example-e1", marginal,
                    {"k": float(k), "sigma": float(sigma)})


def _linear_gaussian(B, a1):
    B = np.asarray(B, dtype=float)
    Q = a1 @ a1.T
    d = B.shape[0]

    def marginal(x0, t, coords):
        coords = list(range(d)) if coords is None else list(coords)
        # Van Loan: covariance of the linear SDE at time t
        M = np.zeros((2 * d, 2 * d))
        M[:d, :d] = -B
        M[:d, d:] = Q
        M[d:, d:] = B.T
        E = linalg.expm(M * t)
        Phi = E[d:, d:].T
        cov = Phi @ E[:d, d:]
        cov = 0.5 * (cov + cov.T)
        mean = Phi @ np.asarray(x0, dtype=float)
        return mean[coords], cov[np.ix_(coords, coords)]

    return marginal


def linear(B, a1=None, a2=None, levy=None) -> SdeModel:
    """b(x) = Bx with constant diffusion ``a1`` (identity by default)."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d = B.shape[0]
    a1 = np.eye(d) if a1 is None else np.atleast_2d(np.asarray(a1, dtype=float))
    a2 = np.zeros((d, d)) if a2 is None else np.atleast_2d(np.asarray(a2, dtype=float))
    lam = float(np.max(np.linalg.eigvalsh(0.5 * (B + B.T))))
    k = -lam if lam < 0 else None
    marginal = _linear_gaussian(B, a1) if levy is None else None
    return SdeModel(linear_drift(B), a1, a2, levy, k, "linear", marginal, {"B": B.tolist()})


def ornstein_uhlenbeck(k=1.0, sigma=1.0) -> SdeModel:
    return linear([[-k]], [[sigma]])


def brownian(dim=1) -> SdeModel:
    return linear(np.zeros((dim, dim)))


def levy_dissipative(k=1.0, sigma=1.0, alpha=0.5, rho=0.01, scale=0.1,
                     large_jump_rate=0.5, large_jump_radius=2.0, cubic=1.0,
                     small_jump_mode="drop") -> SdeModel:
    """Two-dimensional dissipative model driven by degenerate Brownian noise
    and power-law jumps.

    b(x) = Bx - cubic*|x|^2 x with B = [[-k, 1], [-1, -k]], so that
    <x-y, b(x)-b(y)> <= -k|x-y|^2.  Brownian noise acts on the second
    coordinate only; jumps act on both.
    """
    from .noise import power_law_levy

    comps = [
        {(1, 0): -k, (0, 1): 1.0, (3, 0): -cubic, (1, 2): -cubic},
        {(1, 0): -1.0, (0, 1): -k, (2, 1): -cubic, (0, 3): -cubic},
    ]
    levy = power_law_levy(2, alpha, scale=scale, rho=rho, large_jump_rate=large_jump_rate,
                          large_jump_radius=large_jump_radius, small_jump_mode=small_jump_mode)
    return SdeModel(polynomial_drift(comps), np.array([[0.0, 0.0], [0.0, sigma]]), np.eye(2),
                    levy, float(k), "levy-dissipative", None,
                    {"k": k, "sigma": sigma, "cubic": cubic})
