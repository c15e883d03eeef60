"""Couplings: synchronous pairs, maximal coupling of explicit laws, the coupled
chain on R^d x R^d and coupling-time tail fits."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng
from .errors import (ConfigurationError, DiagnosticError, FitError, InputError, NumericError,
                     SampleSizeError)
from .integrate import PathBatch, euler_batch
from .model import SdeModel

MAX_PROPOSALS = 1_000_000

# purposes for derived seeds
_SYNC, _KERNEL, _CHOICE, _FINITE = 1, 2, 3, 4


# ------------------------------------------------------------ synchronous

@dataclass
class SyncReport:
    statistic: float           # max over paths and times of |D_t|^2 e^{kt} / |D_0|^2
    per_time: np.ndarray       # the same maximum at each grid time
    k: float
    bound: float
    passed: bool
    observed_rate: Optional[float]  # fitted decay rate of mean |D_t|^2
    degenerate: bool = False


def synchronous_pair_batch(model: SdeModel, x0, y0, horizon, dt, n_paths, seed, k=None,
                           t_save=None, slack=None, threads=None):
    """Simulate both starts under identical noise and report the contraction
    statistic against ``exp(-k t)``.

    Returns ``(batch_x, batch_y, report)``.  ``slack`` defaults to ``10*dt``.
    """
    k = model.dissipativity_k if k is None else k
    if k is None or not k > 0:
        raise ConfigurationError("synchronous coupling needs a declared dissipativity_k")
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    slack = 10.0 * dt if slack is None else slack
    bx = euler_batch(model, x0, horizon, dt, n_paths, seed, t_save=t_save, threads=threads)
    by = euler_batch(model, y0, horizon, dt, n_paths, seed, t_save=t_save, threads=threads)
    d0 = float(np.sum((x0 - y0) ** 2))
    if d0 == 0.0:
        warnings.warn("x0 == y0: contraction ratio undefined, returning a trivial pass",
                      stacklevel=2)
        rep = SyncReport(0.0, np.zeros(len(bx.t_grid)), float(k), 1.0 + slack, True, None, True)
        return bx, by, rep
    ok = ~(bx.diverged | by.diverged)
    diff = bx.states[ok] - by.states[ok]
    sq = np.sum(diff * diff, axis=2)
    norm = sq * np.exp(k * bx.t_grid)[None, :] / d0
    per_time = norm.max(axis=0)
    stat = float(per_time.max())
    mean_sq = sq.mean(axis=0)
    pos = (mean_sq > 0) & (bx.t_grid > 0)
    rate = None
    if np.count_nonzero(pos) >= 2:
        slope = np.polyfit(bx.t_grid[pos], np.log(mean_sq[pos] / d0), 1)[0]
        rate = float(-slope)
    rep = SyncReport(stat, per_time, float(k), 1.0 + slack, stat <= 1.0 + slack, rate)
    return bx, by, rep


# ------------------------------------------------------------ maximal coupling

def _as_rows(z):
    z = np.asarray(z, dtype=float)
    return z


def maximal_coupling_batch(density_p, sampler_p, density_q, sampler_q, n, seed):
    """n independent draws of the gamma-coupling of p and q.

    ``sampler(gen, n)`` draws n points from a numpy Generator; densities are
    evaluated on the sampler's output array.  Returns ``(z1, z2, coupled)``.
    """
    gen = rng.generator(seed, 0x6D61)
    z1 = _as_rows(sampler_p(gen, n))
    u = gen.random(n)
    p1 = np.asarray(density_p(z1), dtype=float)
    q1 = np.asarray(density_q(z1), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        coupled = u * p1 <= q1
    z2 = z1.copy()
    pending = np.flatnonzero(~coupled)
    proposals = 0
    accepted = 0
    while pending.size:
        m = max(4 * pending.size, 256)
        w = _as_rows(sampler_q(gen, m))
        pw = np.asarray(density_p(w), dtype=float)
        qw = np.asarray(density_q(w), dtype=float)
        uu = gen.random(m)
        acc = np.flatnonzero(uu * qw < qw - pw)
        proposals += m
        take = acc[: pending.size]
        z2[pending[: take.size]] = w[take]
        accepted += take.size
        pending = pending[take.size:]
        if proposals > MAX_PROPOSALS and accepted < proposals / MAX_PROPOSALS:
            raise NumericError(f"residual rejection needed more than {MAX_PROPOSALS} proposals "
                               "per draw; the laws are nearly identical, treat as coupled")
    return z1, z2, coupled


def maximal_coupling_sample(density_p, sampler_p, density_q, sampler_q, seed):
    """Single draw ``(z1, z2, coupled)`` of the maximal coupling."""
    z1, z2, c = maximal_coupling_batch(density_p, sampler_p, density_q, sampler_q, 1, seed)
    return z1[0], z2[0], bool(c[0])


def maximal_coupling_discrete(p, q, u):
    """Maximal coupling of two finite distributions.

    ``u`` is an ``(n, 3)`` array of uniforms.  Returns index arrays
    ``(i, j, coupled)`` with ``i ~ p``, ``j ~ q`` and P(i == j) = sum min(p, q).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    u = np.atleast_2d(u)
    o = np.minimum(p, q)
    w = float(o.sum())
    rp = np.clip(p - o, 0.0, None)
    rq = np.clip(q - o, 0.0, None)
    # rounding can leave w just below 1 with no residual mass to draw from
    coupled = u[:, 0] < w if rp.sum() > 0 and rq.sum() > 0 else np.ones(len(u), dtype=bool)
    i = np.empty(len(u), dtype=np.int64)
    j = np.empty(len(u), dtype=np.int64)
    if w > 0:
        c = _pick(o / w, u[coupled, 1])
        i[coupled] = c
        j[coupled] = c
    if not coupled.all():
        i[~coupled] = _pick(rp / rp.sum(), u[~coupled, 1])
        j[~coupled] = _pick(rq / rq.sum(), u[~coupled, 2])
    return i, j, coupled


def _pick(probs, u):
    cdf = np.cumsum(probs)
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, len(probs) - 1)


# ------------------------------------------------------------ coupled chain

@dataclass
class CouplingRun:
    trials: int
    tau_samples: np.ndarray        # chain steps to coupling; equals cap when censored
    censored: np.ndarray
    tau1_samples: np.ndarray       # first entry time into the joint ball (model time), NaN if none
    r_star: float
    t_chain: float
    p_hat: float
    cap: int
    attempts: int = 0
    successes: int = 0
    bins: int = 0
    n_kernel: int = 0
    states: Optional[np.ndarray] = field(default=None, repr=False)  # (trials, steps+1, 2, d)
    coupled_at: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def censored_fraction(self):
        return float(np.mean(self.censored)) if self.trials else 0.0

    @property
    def coupled_fraction(self):
        return 1.0 - self.censored_fraction

    def to_csv(self, dest=None):
        lines = ["trial,tau_chain_steps,tau1_time,censored"]
        for t in range(self.trials):
            t1 = self.tau1_samples[t]
            lines.append(f"{t},{int(self.tau_samples[t])},"
                         f"{'' if np.isnan(t1) else repr(float(t1))},{int(self.censored[t])}")
        text = "\n".join(lines) + "\n"
        if dest is None:
            return text
        with open(dest, "w", newline="") as fh:
            fh.write(text)
        return None


def _bin_index(pts, lo, width, nb):
    idx = np.floor((pts - lo) / width).astype(np.int64)
    idx = np.clip(idx, 0, nb - 1)
    flat = np.zeros(len(pts), dtype=np.int64)
    for c in range(pts.shape[1]):
        flat = flat * nb + idx[:, c]
    return flat


def _pick_in_cell(cells, target, u):
    members = np.flatnonzero(cells == target)
    return members[min(int(u * len(members)), len(members) - 1)]


def _default_t_chain(model):
    k = model.dissipativity_k or model.params.get("k")
    if not k:
        raise ConfigurationError("t_chain is required when the model declares no rate k")
    return 3.0 / float(k)


def coupled_chain_run(model: SdeModel, x0, y0, t_chain=None, r_star=6.0, delta=0.5,
                      max_steps=50, n_trials=200, dt=0.02, seed=0, bins=40, n_kernel=2000,
                      record=True, threads=None) -> CouplingRun:
    """Run the coupled chain S(m) = (u_m, v_m) for ``n_trials`` trials.

    Each chain step lasts ``t_chain``.  Pairs inside the joint ball
    ``|(u, v)| <= r_star`` with ``|u - v| <= delta`` attempt a merge: both
    one-step kernels are estimated from ``n_kernel`` auxiliary paths (common
    random numbers), binned on a shared box with ``bins`` cells per
    coordinate, and the bin indices are maximally coupled.  The new states are
    auxiliary samples drawn from the chosen bins.  Other pairs move
    synchronously.  Coupled pairs stay equal.
    """
    d = model.dim
    t_chain = _default_t_chain(model) if t_chain is None else float(t_chain)
    if not t_chain > 0 or not r_star > 0 or not delta > 0:
        raise ConfigurationError("t_chain, r_star and delta must be positive")
    if max_steps < 1 or n_trials < 1 or n_kernel < 2 or bins < 1:
        raise ConfigurationError("max_steps, n_trials, n_kernel and bins must be positive")
    x0 = np.asarray(x0, dtype=float).reshape(d)
    y0 = np.asarray(y0, dtype=float).reshape(d)
    U = np.repeat(x0[None, :], n_trials, axis=0)
    V = np.repeat(y0[None, :], n_trials, axis=0)
    coupled = np.all(U == V, axis=1)
    tau = np.where(coupled, 0, max_steps).astype(np.int64)
    tau1 = np.full(n_trials, np.nan)
    states = np.empty((n_trials, max_steps + 1, 2, d)) if record else None
    if record:
        states[:, 0, 0], states[:, 0, 1] = U, V
    attempts = successes = 0
    trial_ids = np.arange(n_trials)
    for step in range(max_steps):
        if coupled.all() and not record:
            break
        joint = np.sqrt(np.sum(U * U, axis=1) + np.sum(V * V, axis=1))
        gap = np.sqrt(np.sum((U - V) ** 2, axis=1))
        merge = (~coupled) & (joint <= r_star) & (gap <= delta)

        s_sync = rng.derive_seed(seed, _SYNC, step)
        bu = euler_batch(model, U, t_chain, dt, n_trials, s_sync, terminal_only=True,
                         threads=threads)
        bv = euler_batch(model, V, t_chain, dt, n_trials, s_sync, terminal_only=True,
                         threads=threads)
        U_new, V_new = bu.states.copy(), bv.states.copy()

        for t in trial_ids[merge]:
            attempts += 1
            s_k = rng.derive_seed(seed, _KERNEL, int(t), step)
            su = euler_batch(model, U[t], t_chain, dt, n_kernel, s_k, terminal_only=True,
                             threads=threads)
            sv = euler_batch(model, V[t], t_chain, dt, n_kernel, s_k, terminal_only=True,
                             threads=threads)
            ok = ~(su.diverged | sv.diverged)
            a, b = su.states[ok], sv.states[ok]
            if len(a) == 0:
                continue
            both = np.concatenate([a, b])
            lo, hi = both.min(axis=0), both.max(axis=0)
            width = np.where(hi > lo, (hi - lo) / bins, 1.0) * (1.0 + 1e-12)
            ca, cb = _bin_index(a, lo, width, bins), _bin_index(b, lo, width, bins)
            ncell = bins ** d
            p = np.bincount(ca, minlength=ncell) / len(a)
            q = np.bincount(cb, minlength=ncell) / len(b)
            uu = rng.uniforms(seed, rng.CHOICE, int(t), step, np.arange(3)).reshape(6)
            i, j, c = maximal_coupling_discrete(p, q, uu[None, :3])
            U_new[t] = a[_pick_in_cell(ca, i[0], uu[3])]
            if c[0]:
                V_new[t] = U_new[t]
                successes += 1
                coupled[t] = True
                tau[t] = step + 1
            else:
                V_new[t] = b[_pick_in_cell(cb, j[0], uu[4])]

        V_new[coupled] = U_new[coupled]
        U, V = U_new, V_new
        bad = ~(np.all(np.isfinite(U), axis=1) & np.all(np.isfinite(V), axis=1))
        joint = np.sqrt(np.sum(U * U, axis=1) + np.sum(V * V, axis=1))
        enter = np.isnan(tau1) & ~bad & (joint <= r_star)
        tau1[enter] = (step + 1) * t_chain
        if record:
            states[:, step + 1, 0], states[:, step + 1, 1] = U, V
    if successes == 0 and not np.all(tau == 0):
        raise DiagnosticError("no merge attempt succeeded in any trial; "
                              "try a larger t_chain or coarser bins")
    censored = ~coupled
    p_hat = (attempts - successes) / attempts if attempts else float("nan")
    return CouplingRun(n_trials, tau, censored, tau1, float(r_star), t_chain, float(p_hat),
                       int(max_steps), attempts, successes, int(bins), int(n_kernel), states)


# ------------------------------------------------------------ finite chains

def finite_chain_run(P, x0, y0, max_steps=50, n_trials=10_000, seed=0) -> CouplingRun:
    """Coupled run of a finite Markov chain whose rows are maximally coupled
    at every step.  ``tau`` counts steps until the two states coincide."""
    P = np.asarray(P, dtype=float)
    n_states = P.shape[0]
    if P.shape != (n_states, n_states) or np.any(P < 0) or not np.allclose(P.sum(1), 1.0):
        raise InputError("P must be a row-stochastic square matrix")
    u = np.full(n_trials, int(x0))
    v = np.full(n_trials, int(y0))
    tau = np.where(u == v, 0, max_steps).astype(np.int64)
    done = u == v
    attempts = successes = 0
    for step in range(max_steps):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        uu = rng.uniforms(seed, rng.CHOICE, act[:, None], step, np.arange(2)[None, :], _FINITE)
        uu = uu.reshape(len(act), 4)
        for a in range(n_states):
            for b in range(n_states):
                sel = (u[act] == a) & (v[act] == b)
                if not sel.any():
                    continue
                i, j, c = maximal_coupling_discrete(P[a], P[b], uu[sel, :3])
                idx = act[sel]
                u[idx], v[idx] = i, j
                attempts += len(idx)
                successes += int(c.sum())
        newly = (~done) & (u == v)
        tau[newly] = step + 1
        done |= newly
    p_hat = (attempts - successes) / attempts if attempts else float("nan")
    return CouplingRun(n_trials, tau, ~done, np.full(n_trials, np.nan), 0.0, 1.0, p_hat,
                       int(max_steps), attempts, successes)


def coupled_kernel(P):
    """Transition matrix of the maximally coupled product chain on pairs
    (a, b), indexed ``a * n + b``."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    K = np.zeros((n * n, n * n))
    for a in range(n):
        for b in range(n):
            row = a * n + b
            if a == b:
                for i in range(n):
                    K[row, i * n + i] = P[a, i]
                continue
            o = np.minimum(P[a], P[b])
            w = o.sum()
            for i in range(n):
                K[row, i * n + i] += o[i]
            if w < 1:
                rp = P[a] - o
                rq = P[b] - o
                K[row] += np.outer(rp, rq).ravel() / (1.0 - w)
    return K


def meeting_survival_exact(P, x0, y0, n_max):
    """P(tau > n) for n = 0..n_max by powers of the coupled product kernel."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    K = coupled_kernel(P)
    off = np.array([a != b for a in range(n) for b in range(n)])
    Koff = K[np.ix_(off, off)]
    start = np.zeros(n * n)
    start[int(x0) * n + int(y0)] = 1.0
    vec = start[off]
    out = []
    for _ in range(n_max + 1):
        out.append(float(vec.sum()))
        vec = vec @ Koff
    return np.array(out)


# ------------------------------------------------------------ tail fit

@dataclass
class TailFit:
    p_fit: Optional[float]
    slope: Optional[float]
    slope_ci: Optional[tuple]
    theta: Optional[float]
    exp_moment: Optional[float]
    exp_moment_se: Optional[float]
    finite: Optional[bool]
    point_mass: bool
    censored_fraction: float
    n: np.ndarray
    survival: np.ndarray
    survival_se: np.ndarray


def coupling_time_tail(run, theta=None, min_survivors=10) -> TailFit:
    """Fit log P(tau > n) = a + n log p by weighted least squares.

    ``run`` is a :class:`CouplingRun` or an array of uncensored samples.
    ``theta`` defaults to |slope|/2; the exponential moment E exp(theta*tau)
    is averaged over all trials, censored ones at the cap.
    """
    if isinstance(run, CouplingRun):
        tau = np.asarray(run.tau_samples, dtype=np.int64)
        cens = np.asarray(run.censored, dtype=bool)
    else:
        tau = np.asarray(run, dtype=np.int64)
        cens = np.zeros(len(tau), dtype=bool)
    N = len(tau)
    frac = float(cens.mean()) if N else 0.0
    if frac > 0.5:
        raise FitError(f"censored fraction {frac:.3f} exceeds 0.5; refusing to fit the tail")
    unc = tau[~cens]
    if len(unc) < 50:
        raise SampleSizeError(f"only {len(unc)} uncensored samples (need >= 50)")
    n_hi = int(unc.max())
    grid = np.arange(0, n_hi + 1)
    surv = np.array([np.mean(tau > k) for k in grid])
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.sqrt(surv * (1.0 - surv) / N)
    if len(np.unique(unc)) == 1 and not cens.any():
        return TailFit(None, None, None, None, None, None, None, True, frac, grid, surv, se)
    count = surv * N
    use = (count >= min_survivors) & (surv < 1.0)
    if np.count_nonzero(use) < 2:
        raise FitError("fewer than two tail points with enough survivors")
    x = grid[use].astype(float)
    y = np.log(surv[use])
    w = count[use] / (1.0 - surv[use])
    W = w.sum()
    xm, ym = (w * x).sum() / W, (w * y).sum() / W
    sxx = (w * (x - xm) ** 2).sum()
    slope = float((w * (x - xm) * (y - ym)).sum() / sxx)
    # residual-scaled standard error; correlated points make this indicative only
    resid = y - (ym + slope * (x - xm))
    dof = max(len(x) - 2, 1)
    s2 = max((w * resid ** 2).sum() / dof, 1.0)
    se_slope = math.sqrt(s2 / sxx)
    ci = (slope - 1.96 * se_slope, slope + 1.96 * se_slope)
    if theta is None:
        theta = abs(slope) / 2.0
    elif not 0 < theta < abs(slope):
        raise InputError(f"theta={theta} must lie in (0, |slope|={abs(slope):.4g})")
    e = np.exp(theta * tau.astype(float))
    mom = float(e.mean())
    mom_se = float(e.std(ddof=1) / math.sqrt(N))
    finite = bool(theta < abs(ci[1]) and slope < 0)
    return TailFit(float(math.exp(slope)), slope, ci, float(theta), mom, mom_se, finite, False,
                   frac, grid, surv, se)
