"""Path simulation: Euler-Maruyama with in-step jumps, and the exact OU-based
sampler for the two-dimensional example model."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from . import _backend, _fallback, parallel, rng
from .errors import ConfigurationError, InputError
from .model import SdeModel
from .noise import _envelope_bound, sample_jump_batch, shell_rate, small_jump_covariance


@dataclass
class PathBatch:
    """Ensemble of simulated states.

    ``states`` has shape ``(n_paths, len(t_grid), dim)``, or ``(n_paths, dim)``
    when ``terminal_only``.  Diverged paths are NaN from the blow-up onward and
    flagged in ``diverged``.
    """

    dim: int
    n_paths: int
    t_grid: np.ndarray
    terminal_only: bool
    states: np.ndarray
    seed: int
    scheme: str
    diverged: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.diverged is None:
            self.diverged = np.zeros(self.n_paths, dtype=bool)

    @property
    def n_diverged(self):
        return int(np.count_nonzero(self.diverged))

    def terminal(self, include_diverged=False):
        """Terminal states, excluding diverged paths unless asked."""
        x = self.states if self.terminal_only else self.states[:, -1, :]
        return x if include_diverged else x[~self.diverged]

    def at(self, i, include_diverged=False):
        """States at grid index ``i``."""
        if self.terminal_only:
            raise InputError("terminal-only batch has a single time")
        x = self.states[:, i, :]
        return x if include_diverged else x[~self.diverged]

    def to_csv(self, dest=None):
        """Write ``path,t,x1..xd`` rows (no ``t`` column if terminal-only).

        Returns the text when ``dest`` is None.
        """
        cols = [f"x{i + 1}" for i in range(self.dim)]
        buf = io.StringIO()
        if self.terminal_only:
            buf.write(",".join(["path"] + cols) + "\n")
            for p in range(self.n_paths):
                buf.write(f"{p}," + ",".join(_fmt(v) for v in self.states[p]) + "\n")
        else:
            buf.write(",".join(["path", "t"] + cols) + "\n")
            ts = [_fmt(t) for t in self.t_grid]
            for p in range(self.n_paths):
                for i, t in enumerate(ts):
                    buf.write(f"{p},{t}," + ",".join(_fmt(v) for v in self.states[p, i]) + "\n")
        text = buf.getvalue()
        if dest is None:
            return text
        with open(dest, "w", newline="") as fh:
            fh.write(text)
        return None


def _fmt(v):
    return repr(float(v))


def n_steps_for(horizon, dt):
    if not dt > 0 or not horizon > 0:
        raise ConfigurationError("horizon and dt must be positive")
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ConfigurationError(f"dt={dt} does not divide horizon={horizon}")
    return n


def _save_steps(n_steps, dt, terminal_only, t_save):
    if terminal_only:
        return np.array([n_steps], dtype=np.int64)
    if t_save is None:
        return np.arange(n_steps + 1, dtype=np.int64)
    steps = []
    for t in t_save:
        s = int(round(t / dt))
        if s < 0 or s > n_steps or abs(s * dt - t) > 1e-9 * max(1.0, t):
            raise ConfigurationError(f"save time {t} is not on the dt grid")
        steps.append(s)
    steps = np.asarray(steps, dtype=np.int64)
    if np.any(np.diff(steps) <= 0):
        raise ConfigurationError("save times must be strictly increasing")
    return steps


def psd_sqrt(m):
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def effective_diffusion(model: SdeModel):
    """A1, or the PSD square root of A1 A1^T + A2 S A2^T when dropped small
    jumps (covariance S) are replaced by a Gaussian term."""
    a1 = model.a1
    levy = model.levy
    if levy is None or levy.small_jump_mode != "gaussian_substitute":
        return np.ascontiguousarray(a1)
    s = small_jump_covariance(levy)
    return np.ascontiguousarray(psd_sqrt(a1 @ a1.T + model.a2 @ s @ model.a2.T))


def _use_compiled(model, backend):
    if model.drift.poly is None:
        return False
    if backend == "python":
        return False
    if backend == "compiled":
        _backend.get("compiled")
        return True
    return _backend.NAME == "compiled"


def euler_batch(model: SdeModel, x0, horizon, dt, n_paths, seed, terminal_only=False,
                t_save=None, stream=0, path_offset=0, backend=None, threads=None) -> PathBatch:
    """Euler-Maruyama ensemble.

    ``x0`` is a single point or an ``(n_paths, d)`` array of per-path starts.
    Path ``p`` is driven by the counter stream ``(seed, stream, path_offset + p)``
    so any subset of paths can be regenerated independently.
    """
    d = model.dim
    n_paths = int(n_paths)
    if n_paths < 1:
        raise InputError("n_paths must be >= 1")
    n_steps = n_steps_for(horizon, dt)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape == (d,):
        x0 = np.broadcast_to(x0, (n_paths, d))
    elif x0.shape != (n_paths, d):
        raise ConfigurationError(f"x0 has shape {x0.shape}, expected ({d},) or ({n_paths}, {d})")
    if not np.all(np.isfinite(x0)):
        raise InputError("x0 must be finite")
    save = _save_steps(n_steps, dt, terminal_only, t_save)
    amat = effective_diffusion(model)
    levy = model.levy
    jumps = levy is not None and np.any(model.a2 != 0)
    if jumps:
        lam = shell_rate(levy)
        bound = _envelope_bound(levy)
    compiled = _use_compiled(model, backend)
    kern = _backend.get("compiled") if compiled else None

    def work(lo, hi):
        m = hi - lo
        xb = np.ascontiguousarray(x0[lo:hi])
        off = int(path_offset) + lo
        if jumps:
            ptr, jt, jz = sample_jump_batch(levy, horizon, seed, np.arange(off, off + m), stream,
                                            rate=lam, bound=bound)
            jv = np.ascontiguousarray(jz @ model.a2.T)
        else:
            ptr, jt, jv = None, np.empty(0), np.empty((0, d))
        if compiled:
            coef, comp, expo = model.drift.poly
            out = np.empty((m, len(save), d))
            div = np.zeros(m, dtype=np.uint8)
            kern.euler_poly(xb, float(dt), n_steps, coef, comp, np.ascontiguousarray(expo), amat,
                            int(seed) & (2 ** 64 - 1), int(stream), off,
                            np.empty(0, dtype=np.int64) if ptr is None else ptr,
                            jt, jv, save, out, div)
            return out, div.astype(bool)
        return _fallback.euler_paths(xb, model.drift.eval, amat, float(dt), n_steps, seed,
                                     stream, off, ptr, jt, jv, save)

    parts = parallel.map_blocks(work, n_paths, threads=threads)
    states = np.concatenate([p[0] for p in parts], axis=0)
    div = np.concatenate([p[1] for p in parts])
    if terminal_only:
        states = states[:, 0, :]
    return PathBatch(d, n_paths, save * dt, terminal_only, states, int(seed), "euler", div)


# ------------------------------------------------------------ exact sampler

def ou_moments(k, sigma, y0, t):
    """Mean and variance of the OU coordinate dY = -kY dt + sigma dW at time t."""
    if not k > 0:
        raise ConfigurationError("k must be positive")
    if t < 0:
        raise InputError("t must be nonnegative")
    e = math.exp(-k * t)
    return e * y0, sigma * sigma * (1.0 - e * e) / (2.0 * k)


def e1_x_mean(k, sigma, x, y, t):
    """E X_t for the example model, from the closed-form integral of E Y_s^2."""
    e = math.exp(-k * t)
    return e * x + (1.0 - e) / k * (y * y * e + sigma * sigma / (2.0 * k) * (1.0 - e))


def exact_e1_batch(k, sigma, x0, horizon, grid_n, n_paths, seed, stream=0,
                   terminal_only=False, threads=None) -> PathBatch:
    """Example-model paths with Y sampled exactly on a grid of ``grid_n``
    intervals and X by trapezoidal quadrature over the exact Y path.

    Uses the same standard normals as :func:`euler_batch` on the example
    model with ``dt = horizon / grid_n``, so the two schemes are coupled.
    """
    if not k > 0:
        raise ConfigurationError("k must be positive")
    if sigma == 0:
        raise ConfigurationError("sigma must be nonzero")
    if int(grid_n) < 2:
        raise ConfigurationError("grid_n must be >= 2")
    if not horizon > 0:
        raise ConfigurationError("horizon must be positive")
    grid_n = int(grid_n)
    x0 = np.asarray(x0, dtype=float).reshape(2)
    delta = horizon / grid_n
    a = math.exp(-k * delta)
    sd = math.sqrt(sigma * sigma * (1.0 - a * a) / (2.0 * k))

    def work(lo, hi):
        m = hi - lo
        paths = np.arange(lo, hi)
        x = np.full(m, x0[0])
        y = np.full(m, x0[1])
        out = np.empty((m, 1 if terminal_only else grid_n + 1, 2))
        if not terminal_only:
            out[:, 0, 0], out[:, 0, 1] = x, y
        for n in range(grid_n):
            z = rng.brownian_normals(seed, stream, paths, n + 1, 2)[:, 1]
            y_new = a * y + sd * z
            x = a * x + 0.5 * delta * (a * y * y + y_new * y_new)
            y = y_new
            if not terminal_only:
                out[:, n + 1, 0], out[:, n + 1, 1] = x, y
        if terminal_only:
            out[:, 0, 0], out[:, 0, 1] = x, y
        return out

    parts = parallel.map_blocks(work, int(n_paths), threads=threads)
    states = np.concatenate(parts, axis=0)
    if terminal_only:
        states = states[:, 0, :]
        grid = np.array([horizon])
    else:
        grid = np.arange(grid_n + 1) * delta
    return PathBatch(2, int(n_paths), grid, terminal_only, states, int(seed), "exact_e1")


def linear_gaussian_marginal(B, a1, x0, t):
    """Exact mean and covariance of dX = BX dt + a1 dW (Van Loan)."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d = B.shape[0]
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = -B
    M[:d, d:] = a1 @ a1.T
    M[d:, d:] = B.T
    E = linalg.expm(M * t)
    phi = E[d:, d:].T
    cov = phi @ E[:d, d:]
    return phi @ np.asarray(x0, dtype=float), 0.5 * (cov + cov.T)
