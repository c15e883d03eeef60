"""Lyapunov drift fits, total-variation estimates and mixing-rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from . import rng
from .errors import ConfigurationError, FitError, InputError, NumericError, SampleSizeError
from .integrate import euler_batch
from .model import LyapunovSpec, SdeModel

MAX_HIST_DIM = 3
MIN_SAMPLES = 100
N_BOOT = 200


# ------------------------------------------------------------ drift fit

@dataclass
class DriftFit:
    alpha_hat: float
    beta_hat: float
    t_star: float
    grid: np.ndarray
    v0: np.ndarray             # V at each grid point
    estimate: np.ndarray       # Monte Carlo E V(X_{t*}(x))
    se: np.ndarray
    split_radius: float
    large: np.ndarray          # mask of the held-out large-|x| subset
    alpha_upper: float         # alpha_hat plus three worst-case standard errors
    passed: bool
    dt: float
    n_diverged: np.ndarray = field(default=None)

    @property
    def per_point(self):
        return list(zip(self.grid, self.v0, self.estimate, self.se))

    def to_csv(self, dest=None):
        d = self.grid.shape[1]
        cols = [f"x{i + 1}" for i in range(d)]
        lines = [",".join(cols + ["V", "estimate", "se", "large"])]
        for g, v, e, s, l in zip(self.grid, self.v0, self.estimate, self.se, self.large):
            lines.append(",".join([repr(float(c)) for c in g]
                                  + [repr(float(v)), repr(float(e)), repr(float(s)), str(int(l))]))
        text = "\n".join(lines) + "\n"
        if dest is None:
            return text
        with open(dest, "w", newline="") as fh:
            fh.write(text)
        return None


def drift_fit(model: SdeModel, lyap: LyapunovSpec, grid, n_paths, dt, seed,
              split_radius=None, threads=None) -> DriftFit:
    """Fit P_{t*} V <= alpha V + beta from Monte Carlo estimates on a grid.

    alpha_hat is the largest ratio E V(X_{t*}(x)) / V(x) over grid points with
    |x| above the split radius (median |x| by default); beta_hat is the
    smallest beta making the envelope hold at every grid point.  The verdict
    passes when alpha_hat plus three standard errors (relative to V) is
    below one.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise InputError("grid is empty")
    if grid.shape[1] != model.dim:
        raise ConfigurationError(f"grid points have dimension {grid.shape[1]}, "
                                 f"expected {model.dim}")
    v0 = np.asarray(lyap.v_eval(grid), dtype=float)
    if np.any(v0 < 1.0):
        raise InputError("V must be >= 1 on the grid")
    est = np.empty(len(grid))
    se = np.empty(len(grid))
    ndiv = np.zeros(len(grid), dtype=np.int64)
    for i, x in enumerate(grid):
        b = euler_batch(model, x, lyap.t_star, dt, n_paths, rng.derive_seed(seed, i),
                        terminal_only=True, threads=threads)
        ndiv[i] = b.n_diverged
        vals = np.asarray(lyap.v_eval(b.terminal()), dtype=float)
        if len(vals) < 2 or not np.all(np.isfinite(vals)):
            raise NumericError(f"estimate at grid point {x.tolist()} is not finite "
                               f"({b.n_diverged} of {n_paths} paths diverged)")
        est[i] = vals.mean()
        se[i] = vals.std(ddof=1) / math.sqrt(len(vals))
    radius = np.linalg.norm(grid, axis=1)
    split = float(np.median(radius)) if split_radius is None else float(split_radius)
    large = radius > split
    if not large.any():
        large = radius >= radius.max()
    ratio = est / v0
    j = int(np.flatnonzero(large)[np.argmax(ratio[large])])
    alpha = float(ratio[j])
    alpha_up = float(np.max((est[large] + 3.0 * se[large]) / v0[large]))
    beta = float(max(np.max(est - alpha * v0), 0.0))
    return DriftFit(alpha, beta, float(lyap.t_star), grid, v0, est, se, split, large, alpha_up,
                    alpha_up < 1.0, float(dt), ndiv)


def explicit_bound_constant(fit: DriftFit, bound):
    """Smallest C with estimate <= bound(x) + C at every grid point.

    ``bound`` maps the grid array to the C-free part of a bound.  Returns
    ``(C, slack)`` where ``slack = bound + C - estimate`` (all >= 0).
    """
    b = np.asarray(bound(fit.grid), dtype=float)
    c = float(np.max(fit.estimate - b))
    return c, b + c - fit.estimate


def e1_explicit_bound(k, t):
    """x-y part of the simplified closed-form E V(X_t) bound for the example
    model: e^{-kt}|x| + (2e^{-2kt} + (2/k)e^{-2kt}) |y|^2."""
    def f(z):
        z = np.asarray(z, dtype=float)
        return (math.exp(-k * t) * np.abs(z[..., 0])
                + (2 * math.exp(-2 * k * t) + 2 / k * math.exp(-2 * k * t)) * z[..., 1] ** 2)
    return f


def e1_sharp_bound(k, t):
    """The same bound one step earlier, before the y^2 coefficient is
    simplified: e^{-kt}|x| + (2e^{-2kt} + (2/k)e^{-kt}(1 - e^{-kt})) |y|^2.

    The simplified form uses (1 - e^{-kt}) <= e^{-kt}, which fails for
    kt > ln 2; this form holds for all t.
    """
    def f(z):
        z = np.asarray(z, dtype=float)
        e = math.exp(-k * t)
        return e * np.abs(z[..., 0]) + (2 * e * e + 2 / k * e * (1 - e)) * z[..., 1] ** 2
    return f


@dataclass
class IterateCheck:
    steps: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    bound: np.ndarray
    passed: bool


def lyapunov_iterate_check(fit: DriftFit, model: SdeModel, lyap: LyapunovSpec, x, k_steps,
                           n_paths, seed, threads=None) -> IterateCheck:
    """Compare E V(X_{j t*}(x)) with alpha^j V(x) + beta/(1-alpha), j = 0..k_steps."""
    if not fit.alpha_hat < 1.0:
        raise InputError("iterate check needs a drift fit with alpha_hat < 1")
    x = np.asarray(x, dtype=float)
    steps = np.arange(int(k_steps) + 1)
    times = steps * fit.t_star
    v_x = float(np.asarray(lyap.v_eval(x[None, :]))[0])
    bound = fit.alpha_hat ** steps * v_x + fit.beta_hat / (1.0 - fit.alpha_hat)
    if k_steps < 1:
        return IterateCheck(steps, np.array([v_x]), np.zeros(1), bound, bool(v_x <= bound[0]))
    b = euler_batch(model, x, times[-1], fit.dt, n_paths, seed, t_save=times, threads=threads)
    ok = ~b.diverged
    vals = np.asarray(lyap.v_eval(b.states[ok]), dtype=float)
    est = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(vals.shape[0])
    passed = bool(np.all(est <= bound + 3.0 * se))
    return IterateCheck(steps, est, se, bound, passed)


# ------------------------------------------------------------ TV estimators

def _check_samples(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InputError(f"{name} must be a 1-d or 2-d array of points")
    if len(a) < MIN_SAMPLES:
        raise SampleSizeError(f"{name} has {len(a)} samples (need >= {MIN_SAMPLES})")
    if a.shape[1] > MAX_HIST_DIM:
        raise InputError(f"histogram TV needs dimension <= {MAX_HIST_DIM}; "
                         "project to fewer coordinates")
    return a


def histogram_cells(points, lo, hi, bins):
    """Flat cell index of each point on the box [lo, hi] with ``bins`` cells per
    coordinate.  Points outside the box share one overflow cell."""
    d = points.shape[1]
    nb = np.broadcast_to(np.asarray(bins, dtype=np.int64), (d,))
    width = np.where(hi > lo, (hi - lo) / nb, 1.0)
    idx = np.floor((points - lo) / width).astype(np.int64)
    # the upper edge belongs to the last cell
    idx = np.where(points == hi, nb - 1, idx)
    inside = np.all((idx >= 0) & (idx < nb), axis=1)
    flat = np.zeros(len(points), dtype=np.int64)
    for c in range(d):
        flat = flat * nb[c] + np.clip(idx[:, c], 0, nb[c] - 1)
    total = int(np.prod(nb))
    flat[~inside] = total
    return flat, total + 1


def tv_histogram(samples_p, samples_q, bins=40, box=None, paired=False, n_boot=N_BOOT, seed=0):
    """Half-L1 distance between histograms of two sample sets, with a
    bootstrap standard error.

    The box defaults to the joint bounding box.  ``paired`` resamples
    (p_i, q_i) pairs jointly, appropriate when the two sets share noise.
    """
    a = _check_samples(samples_p, "samples_p")
    b = _check_samples(samples_q, "samples_q")
    if a.shape[1] != b.shape[1]:
        raise InputError("sample sets have different dimensions")
    if paired and len(a) != len(b):
        raise InputError("paired samples must have equal sizes")
    if box is None:
        both = np.concatenate([a, b])
        lo, hi = both.min(axis=0), both.max(axis=0)
    else:
        lo = np.broadcast_to(np.asarray(box[0], dtype=float), (a.shape[1],))
        hi = np.broadcast_to(np.asarray(box[1], dtype=float), (a.shape[1],))
    ca, ncell = histogram_cells(a, lo, hi, bins)
    cb, _ = histogram_cells(b, lo, hi, bins)
    na, nb_ = len(a), len(b)
    pa = np.bincount(ca, minlength=ncell) / na
    pb = np.bincount(cb, minlength=ncell) / nb_
    tv = 0.5 * float(np.abs(pa - pb).sum())
    if n_boot <= 0:
        return tv, float("nan")
    gen = rng.generator(seed, 0x7476)
    reps = np.empty(n_boot)
    if paired:
        codes, counts = np.unique(ca * ncell + cb, return_counts=True)
        ia, ib = codes // ncell, codes % ncell
        probs = counts / na
        for r in range(n_boot):
            c = gen.multinomial(na, probs)
            reps[r] = 0.5 * np.abs(np.bincount(ia, c, ncell) - np.bincount(ib, c, ncell)).sum() / na
    else:
        for r in range(n_boot):
            xa = gen.multinomial(na, pa) / na
            xb = gen.multinomial(nb_, pb) / nb_
            reps[r] = 0.5 * np.abs(xa - xb).sum()
    return tv, float(reps.std(ddof=1))


def tv_gaussian_exact(m1, m2, s):
    """TV between N(m1, s^2) and N(m2, s^2): 2 Phi(|m1 - m2| / (2s)) - 1."""
    if not s > 0:
        raise InputError("s must be positive")
    return float(special.erf(abs(m1 - m2) / (2.0 * s * math.sqrt(2.0))))


def tv_gaussian_equal_cov(m1, m2, cov):
    """TV between two Gaussians sharing a covariance matrix."""
    m1, m2 = np.atleast_1d(m1), np.atleast_1d(m2)
    cov = np.atleast_2d(cov)
    diff = m1 - m2
    maha = float(np.sqrt(diff @ np.linalg.solve(cov, diff)))
    return float(special.erf(maha / (2.0 * math.sqrt(2.0))))


@dataclass
class TvCurve:
    times: np.ndarray
    tv_hat: np.ndarray
    se: np.ndarray
    method: str

    def to_csv(self, dest=None):
        lines = ["t,tv_hat,se"]
        for t, v, s in zip(self.times, self.tv_hat, self.se):
            lines.append(f"{float(t)!r},{float(v)!r},{float(s)!r}")
        text = "\n".join(lines) + "\n"
        if dest is None:
            return text
        with open(dest, "w", newline="") as fh:
            fh.write(text)
        return None


def fit_decay(times, tv, se=None, window=(0.02, 0.98), weights="uniform"):
    """Least squares of log tv against t on the fit window.

    Returns ``(theta_hat, c_hat, mask)``.  ``weights="inverse_variance"`` uses
    (tv/se)^2 when all standard errors are positive; the uniform default
    avoids overweighting near-saturated points, where the curve is still
    bending toward its exponential tail.
    """
    times = np.asarray(times, dtype=float)
    tv = np.asarray(tv, dtype=float)
    use = (tv >= window[0]) & (tv <= window[1])
    if np.count_nonzero(use) < 3:
        listing = ", ".join(f"({t:g}, {v:.4g})" for t, v in zip(times, tv))
        raise FitError(f"fewer than 3 points with tv in [{window[0]}, {window[1]}]: {listing}")
    x, y = times[use], np.log(tv[use])
    if weights not in ("uniform", "inverse_variance"):
        raise ConfigurationError(f"unknown weights {weights!r}")
    if weights == "inverse_variance" and se is not None and np.all(np.asarray(se)[use] > 0):
        w = (tv[use] / np.asarray(se)[use]) ** 2
    else:
        w = np.ones(len(x))
    W = w.sum()
    xm, ym = (w * x).sum() / W, (w * y).sum() / W
    slope = (w * (x - xm) * (y - ym)).sum() / (w * (x - xm) ** 2).sum()
    c = math.exp(ym - slope * xm)
    return float(-slope), float(c), use


def _project(states, projection):
    if projection is None:
        return states
    return states[..., list(projection)]


def tv_curve(model: SdeModel, x0, y0, times, n_paths=100_000, dt=0.01, bins=60, seed=0,
             projection=None, method="auto", threads=None) -> TvCurve:
    """TV between the laws of X_t(x0) and X_t(y0) at each time."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 3 or np.any(np.diff(times) <= 0) or times[0] < 0:
        raise InputError("times must be increasing, nonnegative, with at least 3 entries")
    coords = tuple(range(model.dim)) if projection is None else tuple(projection)
    if method == "auto":
        method = "exact_gaussian" if _gaussian_available(model, x0, coords) else "histogram"
    if method == "exact_gaussian":
        tv = np.empty(len(times))
        for i, t in enumerate(times):
            g1 = model.gaussian_marginal(np.asarray(x0, float), t, coords) \
                if model.gaussian_marginal else None
            g2 = model.gaussian_marginal(np.asarray(y0, float), t, coords) \
                if model.gaussian_marginal else None
            if g1 is None or g2 is None:
                raise ConfigurationError("exact_gaussian needs an analytically Gaussian marginal")
            (m1, c1), (m2, c2) = g1, g2
            if not np.allclose(c1, c2, rtol=1e-12, atol=0):
                raise ConfigurationError("exact_gaussian needs equal covariances")
            if t == 0 or np.all(np.asarray(c1) == 0):
                tv[i] = 0.0 if np.allclose(m1, m2) else 1.0
            else:
                tv[i] = tv_gaussian_equal_cov(m1, m2, c1)
        return TvCurve(times, tv, np.zeros(len(times)), "exact_gaussian")
    if method != "histogram":
        raise ConfigurationError(f"unknown TV method {method!r}")
    if len(coords) > MAX_HIST_DIM:
        raise InputError(f"histogram TV needs a projection to <= {MAX_HIST_DIM} coordinates")
    # common random numbers: both ensembles use the same seed
    horizon = times[-1]
    bx = euler_batch(model, x0, horizon, dt, n_paths, seed, t_save=times, threads=threads)
    by = euler_batch(model, y0, horizon, dt, n_paths, seed, t_save=times, threads=threads)
    ok = ~(bx.diverged | by.diverged)
    tv = np.empty(len(times))
    se = np.empty(len(times))
    for i in range(len(times)):
        a = _project(bx.states[ok, i], coords)
        b = _project(by.states[ok, i], coords)
        tv[i], se[i] = tv_histogram(a, b, bins, paired=True, seed=rng.derive_seed(seed, i))
    return TvCurve(times, tv, se, "histogram")


def _gaussian_available(model, x0, coords):
    if model.gaussian_marginal is None:
        return False
    return model.gaussian_marginal(np.asarray(x0, float), 1.0, coords) is not None


def tv_curve_and_fit(model: SdeModel, x0, y0, times, n_paths=100_000, dt=0.01, bins=60,
                     seed=0, projection=None, method="auto", window=(0.02, 0.98),
                     weights="uniform", threads=None):
    """TV curve plus fitted ``(theta_hat, c_hat)`` for tv ~ C exp(-theta t)."""
    curve = tv_curve(model, x0, y0, times, n_paths, dt, bins, seed, projection, method, threads)
    se = curve.se if curve.method == "histogram" else None
    theta, c, _ = fit_decay(curve.times, curve.tv_hat, se, window, weights)
    return curve, theta, c


# ------------------------------------------------------------ invariant law

@dataclass
class InvariantReport:
    starts: np.ndarray
    tv: np.ndarray
    se: np.ndarray
    tol: float
    passed: bool


def invariant_agreement(model: SdeModel, x0_list, t_burn, n_samples, dt, bins=40, seed=0,
                        projection=None, tol=0.05, common_noise=True,
                        threads=None) -> InvariantReport:
    """Pairwise histogram TV between terminal laws from several starts."""
    starts = np.atleast_2d(np.asarray(x0_list, dtype=float))
    if len(starts) < 2:
        raise InputError("need at least two starting points")
    finals = []
    for i, x in enumerate(starts):
        s = seed if common_noise else rng.derive_seed(seed, i)
        b = euler_batch(model, x, t_burn, dt, n_samples, s, terminal_only=True, threads=threads)
        finals.append(b)
    ok = np.ones(n_samples, dtype=bool)
    for b in finals:
        ok &= ~b.diverged
    n = len(starts)
    tv = np.zeros((n, n))
    se = np.zeros((n, n))
    coords = tuple(range(model.dim)) if projection is None else tuple(projection)
    for i in range(n):
        for j in range(i + 1, n):
            a = _project(finals[i].states[ok], coords)
            b = _project(finals[j].states[ok], coords)
            tv[i, j], se[i, j] = tv_histogram(a, b, bins, paired=common_noise,
                                              seed=rng.derive_seed(seed, i, j))
            tv[j, i], se[j, i] = tv[i, j], se[i, j]
    passed = bool(np.all(tv <= tol + se))
    return InvariantReport(starts, tv, se, tol, passed)


# ------------------------------------------------------------ H2 probe

@dataclass
class ContinuityProbe:
    deltas: np.ndarray
    tv: np.ndarray
    se: np.ndarray
    monotone: bool
    final_below: bool
    passed: bool


def continuity_probe(model: SdeModel, x, deltas: Sequence[float], t=1.0, n_paths=100_000,
                     dt=0.01, bins=40, seed=0, direction=0, floor=0.05,
                     threads=None) -> ContinuityProbe:
    """TV between X_t(x) and X_t(x + delta e_direction) for decreasing deltas.

    Passes when the sequence is non-increasing up to two bootstrap standard
    errors and the last value is below ``floor``.
    """
    x = np.asarray(x, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    if np.any(np.diff(deltas) >= 0) or np.any(deltas <= 0):
        raise InputError("deltas must be positive and strictly decreasing")
    base = euler_batch(model, x, t, dt, n_paths, seed, terminal_only=True, threads=threads)
    tv = np.empty(len(deltas))
    se = np.empty(len(deltas))
    for i, dlt in enumerate(deltas):
        y = x.copy()
        y[direction] += dlt
        other = euler_batch(model, y, t, dt, n_paths, seed, terminal_only=True, threads=threads)
        ok = ~(base.diverged | other.diverged)
        tv[i], se[i] = tv_histogram(base.states[ok], other.states[ok], bins, paired=True,
                                    seed=rng.derive_seed(seed, i))
    mono = bool(np.all(tv[1:] <= tv[:-1] + 2.0 * np.hypot(se[1:], se[:-1])))
    below = bool(tv[-1] < floor)
    return ContinuityProbe(deltas, tv, se, mono, below, mono and below)


# ------------------------------------------------------------ moment bound

@dataclass
class MomentBound:
    times: np.ndarray
    second_moment: np.ndarray
    se: np.ndarray
    excess: np.ndarray         # second moment minus |x0|^2 e^{-kt}
    c_hat: float
    middle_mean: float
    last_mean: float
    passed: bool


def moment_bound_check(model: SdeModel, x0, times, n_paths, dt, seed, k=None,
                       trend_factor=1.1, threads=None) -> MomentBound:
    """E|X_t|^2 against |x0|^2 e^{-kt} + C: fits C as the largest excess and
    checks that the excess shows no upward trend (last-quarter mean at most
    ``trend_factor`` times the middle-quarter mean)."""
    k = model.dissipativity_k if k is None else k
    if k is None:
        raise ConfigurationError("moment bound needs the dissipativity rate k")
    times = np.asarray(times, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    b = euler_batch(model, x0, times[-1], dt, n_paths, seed, t_save=times, threads=threads)
    ok = ~b.diverged
    sq = np.sum(b.states[ok] ** 2, axis=2)
    m2 = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(sq.shape[0])
    excess = m2 - float(x0 @ x0) * np.exp(-k * times)
    n = len(times)
    q = max(n // 4, 1)
    mid = float(excess[n // 2 - q // 2: n // 2 - q // 2 + q].mean()) if n >= 4 else float(excess.mean())
    last = float(excess[-q:].mean())
    passed = bool(last <= trend_factor * mid)
    return MomentBound(times, m2, se, excess, float(excess.max()), mid, last, passed)
