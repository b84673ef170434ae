"""Pure numpy implementation of the path kernel.

Paths advance in lockstep, so the loop runs over time steps with all live
paths vectorized.  Random streams, operation order and termination rules
follow the compiled kernel; results agree with it up to last-bit
differences between numpy's and the C library's transcendental functions.
"""
from __future__ import annotations

import numpy as np

from .expr import run_program

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0
_TWO_PI = 6.283185307179586

HIT, CENS_T, CENS_R, INVALID, LEFT_BOX, LOW_WEIGHT = 0, 1, 2, 3, 4, 5


def mix64(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_keys(seed: int, paths) -> np.ndarray:
    with np.errstate(over="ignore"):
        p = np.asarray(paths, dtype=np.uint64)
        return mix64(mix64(np.uint64(seed)) ^ (p * GOLDEN + np.uint64(1)))


class Streams:
    """Vectorized counter-based streams, one per path."""

    def __init__(self, seed: int, paths):
        self.key = stream_keys(seed, paths)
        n = len(self.key)
        self.ctr = np.zeros(n, dtype=np.uint64)
        self.has_spare = np.zeros(n, dtype=bool)
        self.spare = np.zeros(n)

    def uniform(self, idx) -> np.ndarray:
        self.ctr[idx] += np.uint64(1)
        with np.errstate(over="ignore"):
            z = mix64(self.key[idx] + self.ctr[idx] * GOLDEN)
        return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def normal(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        out = np.empty(len(idx))
        sp = self.has_spare[idx]
        out[sp] = self.spare[idx[sp]]
        self.has_spare[idx[sp]] = False
        fresh = idx[~sp]
        if fresh.size:
            u1 = self.uniform(fresh)
            u2 = self.uniform(fresh)
            rad = np.sqrt(-2.0 * np.log(1.0 - u1))
            self.spare[fresh] = rad * np.sin(_TWO_PI * u2)
            self.has_spare[fresh] = True
            out[~sp] = rad * np.cos(_TWO_PI * u2)
        return out


def uniforms(seed: int, path: int, n: int) -> np.ndarray:
    s = Streams(seed, [path])
    return np.array([s.uniform(np.array([0]))[0] for _ in range(n)])


def _cholesky(m, d):
    """Row-wise Cholesky of stacked ``(n, d, d)`` matrices; ``ok`` flags success."""
    n = m.shape[0]
    L = np.zeros_like(m)
    ok = np.ones(n, dtype=bool)
    with np.errstate(invalid="ignore", divide="ignore"):
        for i in range(d):
            for j in range(i + 1):
                s = m[:, i, j].copy()
                for k in range(j):
                    s = s - L[:, i, k] * L[:, j, k]
                if i == j:
                    ok &= s > 0.0
                    L[:, i, i] = np.sqrt(np.where(s > 0, s, 1.0))
                else:
                    L[:, i, j] = s / L[:, j, j]
    return L, ok


def _interp(grad, dims, origin, h, x, d):
    n = x.shape[0]
    t = (x - origin) / h
    base = np.floor(t).astype(np.int64)
    ok = np.all((base >= 0) & (base < dims - 1), axis=1)
    base = np.where(ok[:, None], base, 0)
    w = t - base
    out = np.zeros((n, d))
    for corner in range(1 << d):
        wt = np.ones(n)
        idx = np.zeros(n, dtype=np.int64)
        for i in range(d):
            bit = (corner >> i) & 1
            wt = wt * (w[:, i] if bit else 1.0 - w[:, i])
            idx = idx * dims[i] + base[:, i] + bit
        vals = grad.reshape(-1, d)[idx]
        ok &= np.all(np.isfinite(vals), axis=1)
        out += wt[:, None] * vals
    return out, ok


def simulate(d, code, offsets, is_const, const_values, consts, n_extra, x0, r, r_max, dt,
             n_steps, seed, path_start, cause, tau, int_v, hit, steps, bridge=True, lam=0.0,
             log_floor=-1e308, grad=None, grad_dims=None, grad_origin=None, grad_h=None):
    n = len(cause)
    nt = d * (d + 1) // 2
    v_slot = d + nt
    x0 = np.asarray(x0, dtype=float)

    def slot(k, pts, rad):
        if is_const[k]:
            return np.full(len(pts), const_values[k])
        with np.errstate(all="ignore"):
            return run_program(code[offsets[k]:offsets[k + 1]], consts, pts, rad)

    def diffusion(pts, rad):
        am = np.empty((len(pts), d, d))
        k = d
        for i in range(d):
            for j in range(i, d):
                am[:, i, j] = am[:, j, i] = slot(k, pts, rad)
                k += 1
        return am

    a_const = all(is_const[d:v_slot])
    if a_const:
        am_c = diffusion(np.zeros((1, d)), np.zeros(1))
        Lc, ok = _cholesky(2.0 * am_c, d)
        if not ok[0]:
            raise ValueError("constant diffusion matrix is not positive definite")
    if grad is not None:
        grad = np.asarray(grad)
        grad_dims = np.asarray(grad_dims)

    streams = Streams(seed, np.arange(path_start, path_start + n))
    x = np.tile(x0, (n, 1))
    acc = np.zeros(n)
    for i in range(d):
        acc = acc + x[:, i] * x[:, i]
    rad = np.sqrt(acc)
    cause[:] = -1
    tau[:] = 0.0
    int_v[:] = 0.0
    steps[:] = 0
    inside = rad <= r
    cause[inside] = HIT
    hit[inside] = x[inside]
    live = np.nonzero(~inside)[0]
    v_old = np.zeros(n)
    if live.size:
        v_old[live] = slot(v_slot, x[live], rad[live])
        bad = ~np.isfinite(v_old[live])
        cause[live[bad]] = INVALID
        live = live[~bad]
    sq = np.sqrt(dt)
    step = 0
    while live.size:
        if step >= n_steps:
            cause[live] = CENS_T
            break
        xl = x[live]
        rl = rad[live]
        drift = np.stack([slot(i, xl, rl) for i in range(d)], axis=1)
        if a_const:
            am = np.broadcast_to(am_c, (len(live), d, d))
            L = np.broadcast_to(Lc, (len(live), d, d))
        else:
            am = diffusion(xl, rl)
            L, ok = _cholesky(2.0 * am, d)
            if not ok.all():
                cause[live[~ok]] = INVALID
                keep = ok
                live, xl, rl, drift, am, L = (live[keep], xl[keep], rl[keep], drift[keep],
                                              am[keep], L[keep])
        for k in range(n_extra):
            drift[:, k] = drift[:, k] + slot(v_slot + 1 + k, xl, rl)
        if grad is not None:
            g, ok = _interp(grad, grad_dims, grad_origin, grad_h, xl, d)
            if not ok.all():
                cause[live[~ok]] = LEFT_BOX
                live, xl, rl, drift, am, L, g = (live[ok], xl[ok], rl[ok], drift[ok], am[ok],
                                                 L[ok], g[ok])
            for i in range(d):
                for j in range(d):
                    drift[:, i] = drift[:, i] + 2.0 * am[:, i, j] * g[:, j]
        if not live.size:
            break
        xi = np.stack([streams.normal(live) for _ in range(d)], axis=1)
        xn = np.empty_like(xl)
        acc = np.zeros(len(live))
        for i in range(d):
            q = xl[:, i] + drift[:, i] * dt
            for j in range(i + 1):
                q = q + L[:, i, j] * xi[:, j] * sq
            xn[:, i] = q
            acc = acc + q * q
        with np.errstate(invalid="ignore", over="ignore"):
            radn = np.sqrt(acc)
        step += 1
        t_now = step * dt
        steps[live] = step
        tau[live] = t_now
        bad = ~np.isfinite(radn)
        v_new = np.full(len(live), np.nan)
        if (~bad).any():
            v_new[~bad] = slot(v_slot, xn[~bad], radn[~bad])
        bad |= ~np.isfinite(v_new)
        cause[live[bad]] = INVALID
        x[live[bad]] = xl[bad]
        good = ~bad
        live, xl, xn, rl, radn, v_new, am = (live[good], xl[good], xn[good], rl[good],
                                             radn[good], v_new[good], am[good])
        int_v[live] = int_v[live] + 0.5 * (v_old[live] + v_new) * dt
        v_old[live] = v_new
        hit_now = radn <= r
        if bridge:
            cand = np.nonzero(~hit_now)[0]
            if cand.size:
                d0 = rl[cand] - r
                d1 = radn[cand] - r
                q = np.zeros(cand.size)
                for i in range(d):
                    for j in range(d):
                        q = q + xl[cand, i] * am[cand, i, j] * xl[cand, j]
                q = d0 * d1 * rl[cand] * rl[cand] / (q * dt)
                test = q < 50.0
                if test.any():
                    u = streams.uniform(live[cand[test]])
                    hit_now[cand[test]] = u < np.exp(-q[test])
        if hit_now.any():
            hl = live[hit_now]
            cause[hl] = HIT
            hit[hl] = r * xn[hit_now] / radn[hit_now][:, None]
        rest = ~hit_now
        live, xn, radn = live[rest], xn[rest], radn[rest]
        x[live] = xn
        rad[live] = radn
        out = radn >= r_max
        cause[live[out]] = CENS_R
        live = live[~out]
        low = int_v[live] - lam * t_now < log_floor
        cause[live[low]] = LOW_WEIGHT
        live = live[~low]
    done = cause != HIT
    hit[done] = x[done]
    return int(steps.sum())
