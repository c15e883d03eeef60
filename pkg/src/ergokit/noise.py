"""Seeded Brownian increments, Poisson jump measures and the Orey diagnostic.

All randomness is drawn from counter-based streams (see :mod:`ergokit.rng`),
so every sample is a pure function of ``(seed, stream, path, index)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate, stats

from . import parallel, rng
from .errors import ConfigurationError, EnvelopeError, InputError, NumericError

SMALL_JUMP_MODES = ("drop", "gaussian_substitute")
MIN_ACCEPTANCE = 1e-3


def sphere_area(d):
    """Surface measure of the unit sphere in R^d (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@dataclass(frozen=True, eq=False)
class LevyMeasureSpec:
    """Levy measure: density ``kappa`` on the punctured unit ball plus a finite
    large-jump part of total mass ``large_jump_rate``.

    ``kappa`` maps an ``(n, dim)`` array to ``(n,)`` densities.  When the
    density is radial, ``radial_profile(r)`` enables exact 1-d quadrature.
    ``large_jump_sampler(u)`` maps an ``(n, 2*dim)`` array of uniforms to
    ``(n, dim)`` jumps with norm >= 1.  ``envelope_alpha`` sets the power law
    ``|z|^(-dim-envelope_alpha)`` used as rejection envelope (defaults to
    ``alpha_index``).
    """

    dim: int
    kappa: Callable[[np.ndarray], np.ndarray]
    alpha_index: float
    large_jump_rate: float = 0.0
    large_jump_sampler: Optional[Callable[[np.ndarray], np.ndarray]] = None
    truncation_rho: float = 0.01
    small_jump_mode: str = "drop"
    radial_profile: Optional[Callable[[np.ndarray], np.ndarray]] = None
    envelope_alpha: Optional[float] = None
    name: str = "custom"

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ConfigurationError("levy dim must be a positive integer")
        if not 0.0 < self.alpha_index < 2.0:
            raise ConfigurationError(f"alpha_index={self.alpha_index} outside (0, 2)")
        if not 0.0 < self.truncation_rho < 1.0:
            raise ConfigurationError(f"truncation_rho={self.truncation_rho} outside (0, 1)")
        if self.large_jump_rate < 0:
            raise ConfigurationError("large_jump_rate must be nonnegative")
        if self.large_jump_rate > 0 and self.large_jump_sampler is None:
            raise ConfigurationError("large_jump_rate > 0 requires a large_jump_sampler")
        if self.small_jump_mode not in SMALL_JUMP_MODES:
            raise ConfigurationError(f"small_jump_mode must be one of {SMALL_JUMP_MODES}")
        if self.envelope_alpha is not None and not 0.0 < self.envelope_alpha < 2.0:
            raise ConfigurationError("envelope_alpha outside (0, 2)")

    @property
    def env_alpha(self):
        return self.alpha_index if self.envelope_alpha is None else self.envelope_alpha


@dataclass
class JumpRecord:
    times: np.ndarray
    sizes: np.ndarray
    compensator_drift: np.ndarray
    substitute_cov: Optional[np.ndarray] = None


# ----------------------------------------------------------------- families

def shell_sampler(dim, r_max):
    """Large jumps uniform in radius on [1, r_max] with uniform direction."""
    if not r_max >= 1.0:
        raise ConfigurationError("large jump radius must be >= 1")

    def sample(u):
        u = np.asarray(u)
        r = 1.0 + (r_max - 1.0) * u[:, 0]
        return r[:, None] * _directions(u[:, 1:], dim)

    return sample


def _directions(u, dim):
    """Uniform unit vectors from uniforms; needs ``2*ceil(dim/2)`` columns
    (``dim == 1`` uses one column as a sign)."""
    n = u.shape[0]
    if dim == 1:
        return np.where(u[:, 0] < 0.5, -1.0, 1.0)[:, None]
    nb = (dim + 1) // 2
    g = np.empty((n, 2 * nb))
    for b in range(nb):
        u1, u2 = u[:, 2 * b], u[:, 2 * b + 1]
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        g[:, 2 * b] = r * np.cos(2.0 * np.pi * u2)
        g[:, 2 * b + 1] = r * np.sin(2.0 * np.pi * u2)
    g = g[:, :dim]
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def power_law_levy(dim, alpha, scale=1.0, rho=0.01, large_jump_rate=0.0,
                   large_jump_radius=2.0, small_jump_mode="drop") -> LevyMeasureSpec:
    """kappa(z) = scale * |z|^(-dim-alpha) on the punctured unit ball."""
    if not 0.0 < alpha < 2.0:
        raise ConfigurationError(f"alpha_index={alpha} outside (0, 2)")

    def profile(r):
        return scale * np.asarray(r, dtype=float) ** (-dim - alpha)

    def kappa(z):
        return profile(np.linalg.norm(np.asarray(z, dtype=float), axis=-1))

    sampler = shell_sampler(dim, large_jump_radius) if large_jump_rate > 0 else None
    return LevyMeasureSpec(dim, kappa, alpha, large_jump_rate, sampler, rho,
                           small_jump_mode, profile, None, "power-law")


def radial_table_levy(r_table, kappa_table, alpha, dim=1, rho=0.01, large_jump_rate=0.0,
                      large_jump_radius=2.0, small_jump_mode="drop") -> LevyMeasureSpec:
    """Radial density interpolated log-log from a table, extrapolated linearly
    in log-log beyond the table ends."""
    r_table = np.asarray(r_table, dtype=float)
    k_table = np.asarray(kappa_table, dtype=float)
    if r_table.ndim != 1 or r_table.shape != k_table.shape or len(r_table) < 2:
        raise ConfigurationError("radial table needs matching 1-d r and kappa arrays")
    if np.any(np.diff(r_table) <= 0) or np.any(r_table <= 0) or np.any(k_table <= 0):
        raise ConfigurationError("radial table must be increasing and positive")
    lr, lk = np.log(r_table), np.log(k_table)
    s_lo = (lk[1] - lk[0]) / (lr[1] - lr[0])
    s_hi = (lk[-1] - lk[-2]) / (lr[-1] - lr[-2])

    def profile(r):
        x = np.log(np.asarray(r, dtype=float))
        y = np.interp(x, lr, lk)
        y = np.where(x < lr[0], lk[0] + s_lo * (x - lr[0]), y)
        y = np.where(x > lr[-1], lk[-1] + s_hi * (x - lr[-1]), y)
        return np.exp(y)

    def kappa(z):
        return profile(np.linalg.norm(np.asarray(z, dtype=float), axis=-1))

    sampler = shell_sampler(dim, large_jump_radius) if large_jump_rate > 0 else None
    return LevyMeasureSpec(dim, kappa, alpha, large_jump_rate, sampler, rho,
                           small_jump_mode, profile, None, "radial-table")


def check_symmetry(spec: LevyMeasureSpec, n=256, seed=0, rtol=1e-12):
    """True when kappa(-z) == kappa(z) on random test points of the unit ball."""
    z = _ball_points(spec.dim, 0.0, 1.0, n, seed, 11)
    a = np.asarray(spec.kappa(z), dtype=float)
    b = np.asarray(spec.kappa(-z), dtype=float)
    return bool(np.allclose(a, b, rtol=rtol, atol=0.0))


def _ball_points(d, r_lo, r_hi, n, seed, key):
    """Uniform points of the shell r_lo <= |z| < r_hi from counter streams."""
    idx = np.arange(n)
    u = rng.uniforms(seed, rng.GENERIC, idx, key)[:, 0]
    r = (r_lo ** d + u * (r_hi ** d - r_lo ** d)) ** (1.0 / d)
    nb = (d + 1) // 2
    uu = rng.uniforms(seed, rng.GENERIC, idx[:, None], key + 1, np.arange(nb)[None, :])
    return r[:, None] * _directions(uu.reshape(n, 2 * nb), d)


# --------------------------------------------------------------- quadrature

def _quad(f, a, b, tol, what):
    val, err, info = integrate.quad(f, a, b, epsabs=tol, epsrel=1e-12, limit=500,
                                    full_output=1)[:3]
    if not np.isfinite(val) or err > max(tol, 1e-9 * abs(val)) * 10:
        raise NumericError(f"quadrature for {what} did not converge "
                           f"(achieved abs error {err:.3g}, target {tol:.3g})")
    return val, err


def _kappa_scalar(spec, z):
    return float(np.asarray(spec.kappa(np.asarray(z, dtype=float).reshape(1, spec.dim)))[0])


def _ball_mc(spec, f_of_z, r_lo, r_hi, n, seed):
    """Monte Carlo integral of f over the shell r_lo <= |z| < r_hi."""
    d = spec.dim
    z = _ball_points(d, r_lo, r_hi, n, seed, 2)
    vol = sphere_area(d) / d * (r_hi ** d - r_lo ** d)
    vals = np.asarray(f_of_z(z), dtype=float) * vol
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


def _radial_moment(spec, power, lo, hi, tol):
    """S_{d-1} * int_lo^hi r^(d-1+power) kappa_r(r) dr."""
    d = spec.dim
    prof = spec.radial_profile
    val, err = _quad(lambda r: r ** (d - 1 + power) * float(prof(r)), lo, hi, tol,
                     f"radial moment {power}")
    s = sphere_area(d)
    return s * val, s * err


def shell_rate(spec: LevyMeasureSpec, tol=1e-10, n_mc=200_000, seed=12345):
    """Total mass of kappa on ``rho <= |z| < 1``."""
    rho = spec.truncation_rho
    if spec.radial_profile is not None:
        return _radial_moment(spec, 0, rho, 1.0, tol)[0]
    if spec.dim == 1:
        return _quad(lambda z: _kappa_scalar(spec, z) + _kappa_scalar(spec, -z), rho, 1.0, tol,
                     "shell rate")[0]
    return _ball_mc(spec, spec.kappa, rho, 1.0, n_mc, seed)[0]


def shell_second_moment(spec: LevyMeasureSpec, tol=1e-10, n_mc=200_000, seed=12345):
    """int_{rho <= |z| < 1} |z|^2 kappa(z) dz."""
    rho = spec.truncation_rho
    if spec.radial_profile is not None:
        return _radial_moment(spec, 2, rho, 1.0, tol)[0]
    if spec.dim == 1:
        return _quad(lambda z: z * z * (_kappa_scalar(spec, z) + _kappa_scalar(spec, -z)),
                     rho, 1.0, tol, "shell second moment")[0]
    return _ball_mc(spec, lambda z: np.sum(z * z, axis=1) * spec.kappa(z), rho, 1.0, n_mc, seed)[0]


def small_jump_covariance(spec: LevyMeasureSpec, tol=1e-12, n_mc=200_000, seed=12345):
    """int_{|z| < rho} z z^T kappa(z) dz, the variance carried by dropped jumps."""
    d, rho = spec.dim, spec.truncation_rho
    if spec.radial_profile is not None:
        total = _radial_moment(spec, 2, 0.0, rho, tol)[0]
        return np.eye(d) * total / d
    if d == 1:
        v = _quad(lambda z: z * z * (_kappa_scalar(spec, z) + _kappa_scalar(spec, -z)),
                  0.0, rho, tol, "small jump variance")[0]
        return np.array([[v]])
    n = n_mc
    z = _ball_points(d, 0.0, rho, n, seed, 4)
    w = np.asarray(spec.kappa(z), dtype=float) * (sphere_area(d) / d * rho ** d)
    return (z * w[:, None]).T @ z / n


# --------------------------------------------------------------- sampling

def brownian_increments(n_steps, dt, dim, seed, path=0, stream=0, workers=None):
    """Wiener increments for one path, shape ``(n_steps, dim)``.

    Row ``i`` is the increment over step ``i + 1`` of the integrator, so these
    are exactly the increments :func:`ergokit.integrate.euler_batch` uses for
    ``path`` (scaled by ``sqrt(dt)``).
    """
    if n_steps < 1 or not dt > 0 or dim < 1:
        raise InputError("need n_steps >= 1, dt > 0, dim >= 1")
    nb = (dim + 1) // 2
    sq = math.sqrt(dt)

    def work(lo, hi):
        steps = np.arange(lo + 1, hi + 1)
        z = rng.normals(seed, rng.BROWNIAN, steps[:, None], path, np.arange(nb)[None, :], stream)
        return z.reshape(hi - lo, 2 * nb)[:, :dim] * sq

    parts = parallel.map_blocks(work, n_steps, threads=workers)
    return np.concatenate(parts, axis=0)


def _envelope_bound(spec):
    """sup of kappa(z) |z|^(d + a_env) over the shell, from a dense probe."""
    d, rho, ae = spec.dim, spec.truncation_rho, spec.env_alpha
    r = np.geomspace(rho, 1.0, 4001)
    if spec.radial_profile is not None:
        vals = np.asarray(spec.radial_profile(r), dtype=float) * r ** (d + ae)
    else:
        if d == 1:
            dirs = np.array([[1.0], [-1.0]])
        else:
            g = rng.normals(987, rng.GENERIC, np.arange(64)[:, None], 9,
                            np.arange((d + 1) // 2)[None, :]).reshape(64, -1)[:, :d]
            dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
        z = (r[:, None, None] * dirs[None, :, :]).reshape(-1, d)
        vals = np.asarray(spec.kappa(z), dtype=float) * np.linalg.norm(z, axis=1) ** (d + ae)
    m = float(np.max(vals))
    if not np.isfinite(m):
        raise EnvelopeError("kappa is not finite on the jump shell")
    return m * (1.0 + 1e-9)


def _shell_sizes(spec, owner, jidx, stream, seed, bound, max_rounds=100_000):
    """Rejection-sample one shell jump for every (owner path, jump index)."""
    d, rho, ae = spec.dim, spec.truncation_rho, spec.env_alpha
    n = len(owner)
    out = np.empty((n, d))
    pending = np.arange(n)
    nb = (d + 1) // 2
    per_attempt = 1 + nb
    a_lo = rho ** (-ae)
    tries = 0
    attempt = 0
    while pending.size:
        if attempt >= max_rounds:
            raise EnvelopeError("rejection sampling exceeded its round budget; "
                                "supply a tighter envelope_alpha")
        c2 = attempt * per_attempt + np.arange(per_attempt)
        u = rng.uniforms(seed, rng.JUMP_SIZE, jidx[pending][:, None], owner[pending][:, None],
                         c2[None, :], stream)
        u = u.reshape(len(pending), 2 * per_attempt)
        r = (a_lo + u[:, 0] * (1.0 - a_lo)) ** (-1.0 / ae)
        z = r[:, None] * _directions(u[:, 2:], d)
        ratio = np.asarray(spec.kappa(z), dtype=float) * r ** (d + ae)
        if np.any(ratio > bound):
            raise EnvelopeError("kappa exceeds the power-law envelope; "
                                "supply a custom envelope_alpha")
        acc = u[:, 1] * bound < ratio
        out[pending[acc]] = z[acc]
        tries += len(pending)
        pending = pending[~acc]
        attempt += 1
        if tries >= 1000 and (n - pending.size) / tries < MIN_ACCEPTANCE:
            raise EnvelopeError(f"rejection acceptance rate {(n - pending.size) / tries:.2e} "
                                f"below {MIN_ACCEPTANCE}; supply a custom envelope_alpha")
    if n and n / max(tries, 1) < MIN_ACCEPTANCE:
        raise EnvelopeError(f"rejection acceptance rate {n / tries:.2e} below {MIN_ACCEPTANCE}")
    return out


def sample_jump_batch(spec: LevyMeasureSpec, horizon, seed, paths, stream=0, rate=None,
                      bound=None):
    """Jumps on ``[0, horizon)`` for each path index in ``paths``.

    Returns CSR arrays ``(ptr, times, sizes)`` with jumps time-sorted within
    each path; ``sizes`` are raw Levy jumps z (not yet multiplied by A2).
    """
    if not horizon > 0:
        raise InputError("horizon must be positive")
    paths = np.asarray(paths, dtype=np.int64)
    n, d = len(paths), spec.dim
    lam_small = shell_rate(spec) if rate is None else rate
    lam_large = spec.large_jump_rate
    uc = rng.uniforms(seed, rng.JUMP_COUNT, 0, paths, 0, stream)
    n_small = np.maximum(stats.poisson.ppf(uc[:, 0], lam_small * horizon), 0).astype(np.int64) \
        if lam_small > 0 else np.zeros(n, dtype=np.int64)
    n_large = np.maximum(stats.poisson.ppf(uc[:, 1], lam_large * horizon), 0).astype(np.int64) \
        if lam_large > 0 else np.zeros(n, dtype=np.int64)

    def expand(counts):
        owner = np.repeat(paths, counts)
        start = np.repeat(np.cumsum(counts) - counts, counts)
        return owner, np.arange(counts.sum()) - start, np.repeat(np.arange(n), counts)

    o_s, j_s, loc_s = expand(n_small)
    o_l, j_l, loc_l = expand(n_large)
    t_s = rng.uniforms(seed, rng.JUMP_TIME, j_s, o_s, 0, stream)[:, 0] * horizon
    t_l = rng.uniforms(seed, rng.JUMP_TIME, j_l, o_l, 1, stream)[:, 0] * horizon
    if bound is None and len(o_s):
        bound = _envelope_bound(spec)
    z_s = _shell_sizes(spec, o_s, j_s, stream, seed, bound) if len(o_s) \
        else np.empty((0, d))
    if len(o_l):
        ul = rng.uniforms(seed, rng.JUMP_LARGE, j_l[:, None], o_l[:, None],
                          np.arange(d)[None, :], stream).reshape(len(o_l), 2 * d)
        z_l = np.asarray(spec.large_jump_sampler(ul), dtype=float).reshape(len(o_l), d)
    else:
        z_l = np.empty((0, d))

    loc = np.concatenate([loc_s, loc_l])
    times = np.concatenate([t_s, t_l])
    sizes = np.concatenate([z_s, z_l], axis=0)
    order = np.lexsort((times, loc))
    ptr = np.zeros(n + 1, dtype=np.int64)
    ptr[1:] = np.cumsum(np.bincount(loc, minlength=n))
    return ptr, np.ascontiguousarray(times[order]), np.ascontiguousarray(sizes[order])


def sample_jumps(spec: LevyMeasureSpec, horizon, seed, path=0, stream=0) -> JumpRecord:
    """Jump record for a single path over ``[0, horizon)``."""
    ptr, times, sizes = sample_jump_batch(spec, horizon, seed, [path], stream)
    cov = small_jump_covariance(spec) if spec.small_jump_mode == "gaussian_substitute" else None
    return JumpRecord(times, sizes, np.zeros(spec.dim), cov)


def large_jump_second_moment(spec: LevyMeasureSpec, n=100_000, seed=0):
    """Sample mean of |z|^2 for large jumps, and the same over the first half.

    A finite second moment shows up as agreement of the two; heavy tails do
    not.  This is evidence, not proof.
    """
    if spec.large_jump_sampler is None:
        return 0.0, 0.0
    d = spec.dim
    idx = np.arange(n)
    u = rng.uniforms(seed, rng.JUMP_LARGE, idx[:, None], 0, np.arange(d)[None, :], 77)
    u = u.reshape(n, 2 * d)
    z = np.asarray(spec.large_jump_sampler(u), dtype=float).reshape(n, d)
    m2 = np.sum(z * z, axis=1)
    return float(m2.mean()), float(m2[: n // 2].mean())


# --------------------------------------------------------------- Orey ratio

@dataclass
class OreyResult:
    eps: list
    ratios: list
    errors: list
    converging: bool
    floor: float


def orey_ratio(spec: LevyMeasureSpec, eps_list, tol=1e-10, floor=1e-6, n_mc=400_000,
               seed=2024) -> OreyResult:
    """eps^(alpha-2) * int_{|z| <= eps} |z|^2 kappa(z) dz for each eps.

    Radial and one-dimensional densities use adaptive quadrature after the
    substitution z = eps*s; other densities use Monte Carlo over the ball.
    The verdict is "converging" when successive ratios agree within 1% and
    the last one exceeds ``floor``.
    """
    eps = [float(e) for e in eps_list]
    if not eps or any(not 0.0 < e < 1.0 for e in eps):
        raise InputError("eps values must lie in (0, 1)")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise InputError("eps_list must be strictly decreasing")
    a, d = spec.alpha_index, spec.dim
    ratios, errors = [], []
    for e in eps:
        if spec.radial_profile is not None:
            prof = spec.radial_profile
            val, err = _quad(lambda s: s ** (d + 1) * float(prof(e * s)) * e ** (d + 2), 0.0, 1.0,
                             tol * e ** (2 - a), f"Orey integral at eps={e}")
            s = sphere_area(d)
            val, err = s * val, s * err
        elif d == 1:
            def f(s, e=e):
                return e ** 3 * s * s * (_kappa_scalar(spec, e * s) + _kappa_scalar(spec, -e * s))
            val, err = _quad(f, 0.0, 1.0, tol * e ** (2 - a), f"Orey integral at eps={e}")
        else:
            val, err = _ball_mc(spec, lambda z: np.sum(z * z, axis=1) * spec.kappa(z), 0.0, e,
                                n_mc, seed)
        scale = e ** (a - 2)
        ratios.append(val * scale)
        errors.append(err * scale)
    rel_ok = all(abs(r1 - r0) < 0.01 * max(abs(r0), abs(r1), 1e-300)
                 for r0, r1 in zip(ratios, ratios[1:]))
    converging = bool(rel_ok and ratios[-1] > floor)
    return OreyResult(eps, ratios, errors, converging, floor)
