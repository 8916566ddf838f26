"""Pure-numpy twin of the compiled replication loop in ``_core.pyx``.

Same signature, same counters, same per-step tables.  Replications are
vectorized in fixed-size chunks so results do not depend on ``threads``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .rng import philox4x32, uniform_blocks

CHUNK = 4096
STEP_BLOCK = 64
TWO_PI = 2.0 * np.pi


def philox_block(c0, c1, c2, c3, k0, k1):
    return tuple(int(v) for v in philox4x32(c0, c1, c2, c3, k0, k1))


def run_catalog(reps, seed, n, c1, x0, bn0, drift_code, B, cvec, kappa, kernel_code, n_unif,
                root, shift, codes, scales, thr, rate_p, rate_m, atoms, cdf, alphas, wmean, hsum,
                phi, use_phi, paths, store, y_out, x_out, sup_y, max_w, sup_gap, loglr, threads):
    reps = np.asarray(reps)
    starts = list(range(0, len(reps), CHUNK))

    def work(start):
        sl = slice(start, min(start + CHUNK, len(reps)))
        _chunk(reps[sl], sl, seed, n, c1, np.asarray(x0), np.asarray(bn0), drift_code, np.asarray(B),
               np.asarray(cvec), np.asarray(kappa), kernel_code, n_unif, np.asarray(root),
               np.asarray(shift), np.asarray(codes), np.asarray(scales), np.asarray(thr),
               np.asarray(rate_p), np.asarray(rate_m), np.asarray(atoms), np.asarray(cdf),
               np.asarray(alphas), np.asarray(wmean), hsum, np.asarray(phi), use_phi,
               paths, store, y_out, x_out, sup_y, max_w, sup_gap, loglr)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)


def _noise(kernel_code, u, i, d, root, shift, codes, scales, thr, rate_p, rate_m, atoms, cdf):
    R = u.shape[0]
    if kernel_code == 0:
        r = np.sqrt(-2.0 * np.log(u[:, 0::2]))
        th = TWO_PI * u[:, 1::2]
        z = np.empty((R, 2 * r.shape[1]))
        z[:, 0::2] = r * np.cos(th)
        z[:, 1::2] = r * np.sin(th)
        out = np.zeros((R, d))
        for a in range(d):
            acc = np.zeros(R)
            for b in range(d):
                acc = acc + root[a, b] * z[:, b]
            out[:, a] = acc + shift[i, a]
        return out
    if kernel_code == 1:
        out = np.zeros((R, d))
        for a in range(d):
            s = scales[a]
            u0, u1 = u[:, 2 * a], u[:, 2 * a + 1]
            if codes[a] == 1:
                out[:, a] = np.where(u0 < thr[i, a], s, -s)
            elif codes[a] == 2:
                out[:, a] = s * (np.sqrt(-2.0 * np.log(u0)) * np.cos(TWO_PI * u1)) + shift[i, a]
            elif codes[a] == 3:
                plus = u0 < thr[i, a]
                mag = -np.log(u1) / np.where(plus, rate_p[i, a], rate_m[i, a])
                out[:, a] = np.where(plus, mag, -mag)
        return out
    idx = np.minimum(np.sum(cdf[i][None, :] < u[:, :1], axis=1), atoms.shape[0] - 1)
    return atoms[idx]


def _chunk(reps, sl, seed, n, c1, x0, bn0, drift_code, B, cvec, kappa, kernel_code, n_unif,
           root, shift, codes, scales, thr, rate_p, rate_m, atoms, cdf, alphas, wmean, hsum,
           phi, use_phi, paths, store, y_out, x_out, sup_y, max_w, sup_gap, loglr):
    R = len(reps)
    d = x0.shape[0]
    blocks = (n_unif + 1) // 2
    inv_n = 1.0 / n
    x = np.tile(x0, (R, 1))
    y = np.zeros((R, d))
    W = np.zeros((R, d))
    lr = np.zeros(R)
    best_y = np.zeros(R)
    best_w = np.zeros(R)
    best_g = np.full(R, np.sqrt(np.sum(phi[0] ** 2)) if use_phi else 0.0)
    for i0 in range(0, n, STEP_BLOCK):
        steps = np.arange(i0, min(i0 + STEP_BLOCK, n))
        U = uniform_blocks(seed, reps, steps, blocks)
        for k, i in enumerate(steps):
            noise = _noise(kernel_code, U[:, k, :], i, d, root, shift, codes, scales, thr,
                           rate_p, rate_m, atoms, cdf)
            if drift_code == 0:
                bx = np.zeros((R, d))
                for a in range(d):
                    acc = np.zeros(R)
                    for b in range(d):
                        acc = acc + B[a, b] * x[:, b]
                    bx[:, a] = acc + cvec[a]
            else:
                bx = cvec - kappa * np.tanh(x)
            for a in range(d):
                lr = lr - noise[:, a] * alphas[i, a]
            y = y + c1 * (bx - bn0[i]) + c1 * noise
            x = x + (bx + noise) * inv_n
            W = W + c1 * (noise - wmean[i])
            best_y = np.maximum(best_y, np.sqrt(np.sum(y * y, axis=1)))
            best_w = np.maximum(best_w, np.sqrt(np.sum(W * W, axis=1)))
            if use_phi:
                diff = y - phi[i + 1]
                best_g = np.maximum(best_g, np.sqrt(np.sum(diff * diff, axis=1)))
            if store:
                paths[sl, i + 1, :] = y
    y_out[sl] = y
    x_out[sl] = x
    sup_y[sl] = best_y
    max_w[sl] = best_w
    sup_gap[sl] = best_g
    loglr[sl] = lr + hsum
