"""Pure-numpy kernels. Mirror of ``_core.pyx`` operation for operation.

Every floating point expression here is evaluated in the same order as in the
compiled core so the two backends agree to the last few ulps (the only
divergence comes from libm vs numpy transcendental implementations).
"""

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = 0xFFFFFFFF
_TWO_PI = 6.283185307179586
_INV53 = 1.0 / 9007199254740992.0
_DIVERGE_SQ = 1e24

TAG_BROWNIAN = 1


def philox4x32(seed, c0, c1, c2, c3):
    """Philox4x32-10 block function over broadcast uint32 counter arrays.

    Returns a ``(4, n)`` uint32 array.
    """
    c0, c1, c2, c3 = np.broadcast_arrays(
        *(np.asarray(c, dtype=np.uint32) for c in (c0, c1, c2, c3))
    )
    shape = c0.shape
    x0 = c0.reshape(-1).astype(np.uint64)
    x1 = c1.reshape(-1).astype(np.uint64)
    x2 = c2.reshape(-1).astype(np.uint64)
    x3 = c3.reshape(-1).astype(np.uint64)
    k0 = int(seed) & _MASK32
    k1 = (int(seed) >> 32) & _MASK32
    mask = np.uint64(_MASK32)
    s32 = np.uint64(32)
    for r in range(10):
        if r:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = x0 * _M0
        p1 = x2 * _M1
        hi0 = p0 >> s32
        hi1 = p1 >> s32
        x0 = hi1 ^ x1 ^ np.uint64(k0)
        x1 = p1 & mask
        x2 = hi0 ^ x3 ^ np.uint64(k1)
        x3 = p0 & mask
    out = np.stack([x0, x1, x2, x3]).astype(np.uint32)
    return out.reshape((4,) + shape)


def uniform_pairs(seed, c0, c1, c2, c3):
    """Two 53-bit uniforms on [0, 1) per counter, shape ``(..., 2)``."""
    w = philox4x32(seed, c0, c1, c2, c3).astype(np.uint64)
    a = ((w[0] >> np.uint64(5)) << np.uint64(26)) + (w[1] >> np.uint64(6))
    b = ((w[2] >> np.uint64(5)) << np.uint64(26)) + (w[3] >> np.uint64(6))
    return np.stack([a.astype(np.float64) * _INV53, b.astype(np.float64) * _INV53], axis=-1)


def normal_pairs(seed, c0, c1, c2, c3):
    """Two standard normals per counter (Box-Muller), shape ``(..., 2)``."""
    u = uniform_pairs(seed, c0, c1, c2, c3)
    r = np.sqrt(-2.0 * np.log(1.0 - u[..., 0]))
    th = _TWO_PI * u[..., 1]
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)


def brownian_normals(seed, stream, paths, step, m):
    """Standard normals driving path ``paths`` at ``step``, shape ``(n, m)``."""
    nblk = (m + 1) // 2
    paths = np.asarray(paths, dtype=np.uint32)
    blk = np.arange(nblk, dtype=np.uint32) | np.uint32(TAG_BROWNIAN << 24)
    z = normal_pairs(seed, np.uint32(step), paths[:, None], blk[None, :], np.uint32(stream))
    return z.reshape(len(paths), 2 * nblk)[:, :m]


def poly_eval(x, coef, comp, expo):
    """Evaluate a polynomial vector field given as a term table."""
    n, d = x.shape
    out = np.zeros((n, d))
    for t in range(len(coef)):
        v = np.full(n, coef[t])
        for j in range(d):
            for _ in range(int(expo[t, j])):
                v = v * x[:, j]
        i = int(comp[t])
        out[:, i] = out[:, i] + v
    return out


def euler_paths(x0, drift, amat, dt, n_steps, seed, stream, path_offset,
                jump_ptr, jump_t, jump_v, save_steps):
    """Euler-Maruyama with jumps placed at their times inside each step.

    ``drift`` maps an ``(m, d)`` array of states to an ``(m, d)`` array.
    Returns ``(out, diverged)`` with ``out`` of shape ``(n, len(save_steps), d)``.
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    n, d = x.shape
    m = amat.shape[1]
    nz = [(i, j, float(amat[i, j])) for i in range(d) for j in range(m) if amat[i, j] != 0.0]
    sqdt = np.sqrt(dt)
    save_steps = np.asarray(save_steps, dtype=np.int64)
    out = np.empty((n, len(save_steps), d))
    diverged = np.zeros(n, dtype=bool)
    paths = (np.arange(n, dtype=np.int64) + path_offset).astype(np.uint32)

    have_jumps = jump_ptr is not None and jump_ptr[-1] > 0
    if have_jumps:
        counts = np.diff(jump_ptr)
        owner = np.repeat(np.arange(n), counts)
        rank = np.arange(len(jump_t)) - np.repeat(jump_ptr[:-1], counts)
        jstep = np.minimum((jump_t / dt).astype(np.int64), n_steps - 1)
        # jumps of one path are time-sorted, so (jstep, owner, rank) is consistent
        order = np.lexsort((rank, owner, jstep))
        jstep_sorted = jstep[order]
        bounds = np.searchsorted(jstep_sorted, np.arange(n_steps + 1))

    si = 0
    while si < len(save_steps) and save_steps[si] == 0:
        out[:, si] = x
        si += 1

    any_div = False
    with np.errstate(invalid="ignore", over="ignore"):
        for step in range(n_steps):
            active = None
            if any_div:
                active = np.flatnonzero(~diverged)
            h_final = None
            if have_jumps and bounds[step + 1] > bounds[step]:
                sel = order[bounds[step]:bounds[step + 1]]
                t_lo = step * dt
                t_hi = (step + 1) * dt
                seg_start = np.full(n, t_lo)
                jumped = np.zeros(n, dtype=bool)
                sel_rank = rank[sel]
                for r in range(int(sel_rank.max()) + 1):
                    layer = sel[sel_rank == r]
                    p = owner[layer]
                    keep = ~diverged[p]
                    layer, p = layer[keep], p[keep]
                    if len(p) == 0:
                        continue
                    tau = jump_t[layer]
                    h = np.maximum(tau - seg_start[p], 0.0)
                    xp = x[p]
                    xp = xp + drift(xp) * h[:, None]
                    x[p] = xp + jump_v[layer]
                    seg_start[p] = tau
                    jumped[p] = True
                h_final = np.where(jumped, np.maximum(t_hi - seg_start, 0.0), dt)

            z = brownian_normals(seed, stream, paths, step + 1, m)
            dw = z * sqdt
            if active is None:
                xa = x
            else:
                xa = x[active]
                dw = dw[active]
            dr = drift(xa)
            if h_final is None:
                xa = xa + dr * dt
            else:
                hf = h_final if active is None else h_final[active]
                xa = xa + dr * hf[:, None]
            noise = np.zeros_like(xa)
            started = [False] * d
            for i, j, a in nz:
                if started[i]:
                    noise[:, i] = noise[:, i] + a * dw[:, j]
                else:
                    noise[:, i] = a * dw[:, j]
                    started[i] = True
            for i in range(d):
                if started[i]:
                    xa[:, i] = xa[:, i] + noise[:, i]
            s2 = np.zeros(len(xa))
            for i in range(d):
                s2 = s2 + xa[:, i] * xa[:, i]
            bad = ~(s2 <= _DIVERGE_SQ)
            if bad.any():
                xa[bad] = np.nan
                any_div = True
            if active is None:
                x = xa
                diverged |= bad
            else:
                x[active] = xa
                diverged[active[bad]] = True
            while si < len(save_steps) and save_steps[si] == step + 1:
                out[:, si] = x
                si += 1
    return out, diverged
