"""Compiled minibatch training epoch for :class:`~bayes_surrogate.neuralnet.ComponentNet`.

Mirrors ``forward``/``backward``/``adam_step`` from :mod:`neuralnet`, except
that Adam moments below ``flush`` are set to zero: float32 subnormals otherwise
slow every update by an order of magnitude, and a moment that small cannot move
a parameter by more than ``lr * 1e-22``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

LINEAR, PRELU, TANH = 0, 1, 2


@njit(cache=True, error_model="numpy")
def train_epoch(params, m, v, step0, hyper, X, Y, order, minibatch, rand, keep,
                fan_in, fan_out, w_off, b_off, s_off, act, drop, drop_off,
                grad, work_pre, work_act, work_out, work_mask, work_off):
    """One shuffled pass over ``X``; returns (new step count, summed squared error).

    ``hyper`` holds ``(lr, beta1, beta2, epsilon, flush)`` in the parameter
    dtype.  ``rand[i, drop_off[k]:drop_off[k] + fan_out[k]]`` are the uniform
    draws that decide dropout for row ``order[i]`` at layer ``k``.
    """
    n = X.shape[0]
    L = fan_in.shape[0]
    n_out = fan_out[L - 1]
    dt = params.dtype
    lr, beta1, beta2, eps, flush = hyper[0], hyper[1], hyper[2], hyper[3], hyper[4]
    one = hyper[1] * 0 + 1
    zero = one * 0
    b1 = one - beta1
    b2 = one - beta2
    inv_keep = one / keep
    step = step0
    sse = 0.0
    for start in range(0, n, minibatch):
        stop = min(start + minibatch, n)
        B = stop - start
        xb = np.empty((B, fan_in[0]), dtype=dt)
        yb = np.empty((B, n_out), dtype=dt)
        for r in range(B):
            xb[r, :] = X[order[start + r], :]
            yb[r, :] = Y[order[start + r], :]

        # forward
        h = xb
        for k in range(L):
            fi, fo = fan_in[k], fan_out[k]
            lo, hi = work_off[k], work_off[k] + B * fo
            W = params[w_off[k]:w_off[k] + fi * fo].reshape(fi, fo)
            bias = params[b_off[k]:b_off[k] + fo]
            a = work_pre[lo:hi].reshape(B, fo)
            y = work_act[lo:hi].reshape(B, fo)
            o = work_out[lo:hi].reshape(B, fo)
            np.dot(h, W, a)
            kind = act[k]
            if kind == PRELU:
                slope = params[s_off[k]:s_off[k] + fo]
                for r in range(B):
                    for j in range(fo):
                        z = a[r, j] + bias[j]
                        a[r, j] = z
                        y[r, j] = z if z > 0 else z * slope[j]
            elif kind == TANH:
                for r in range(B):
                    for j in range(fo):
                        z = a[r, j] + bias[j]
                        a[r, j] = z
                        y[r, j] = np.tanh(z)
            else:
                for r in range(B):
                    for j in range(fo):
                        z = a[r, j] + bias[j]
                        a[r, j] = z
                        y[r, j] = z
            if drop[k]:
                mask = work_mask[lo:hi].reshape(B, fo)
                d0 = drop_off[k]
                for r in range(B):
                    u = rand[start + r]
                    for j in range(fo):
                        mask[r, j] = inv_keep if u[d0 + j] < keep else zero
                        o[r, j] = y[r, j] * mask[r, j]
                h = o
            else:
                h = y

        # loss gradient at the output
        scale = 2.0 / (B * n_out)
        d = np.empty((B, n_out), dtype=dt)
        for r in range(B):
            for j in range(n_out):
                diff = h[r, j] - yb[r, j]
                sse += diff * diff
                d[r, j] = diff * scale

        # backward
        for k in range(L - 1, -1, -1):
            fi, fo = fan_in[k], fan_out[k]
            lo, hi = work_off[k], work_off[k] + B * fo
            a = work_pre[lo:hi].reshape(B, fo)
            y = work_act[lo:hi].reshape(B, fo)
            if drop[k]:
                mask = work_mask[lo:hi].reshape(B, fo)
                for r in range(B):
                    for j in range(fo):
                        d[r, j] *= mask[r, j]
            gb = grad[b_off[k]:b_off[k] + fo]
            gb[:] = 0
            kind = act[k]
            if kind == PRELU:
                slope = params[s_off[k]:s_off[k] + fo]
                gs = grad[s_off[k]:s_off[k] + fo]
                gs[:] = 0
                for r in range(B):
                    for j in range(fo):
                        z = a[r, j]
                        g = d[r, j]
                        neg = z <= 0
                        gs[j] += g * z if neg else zero
                        g = g * slope[j] if neg else g
                        d[r, j] = g
                        gb[j] += g
            elif kind == TANH:
                for r in range(B):
                    for j in range(fo):
                        g = d[r, j] * (one - y[r, j] * y[r, j])
                        d[r, j] = g
                        gb[j] += g
            else:
                for r in range(B):
                    for j in range(fo):
                        gb[j] += d[r, j]
            if k > 0:
                lo1 = work_off[k - 1]
                if drop[k - 1]:
                    inp = work_out[lo1:lo1 + B * fi].reshape(B, fi)
                else:
                    inp = work_act[lo1:lo1 + B * fi].reshape(B, fi)
            else:
                inp = xb
            gW = grad[w_off[k]:w_off[k] + fi * fo].reshape(fi, fo)
            np.dot(inp.T, d, gW)
            if k > 0:
                W = params[w_off[k]:w_off[k] + fi * fo].reshape(fi, fo)
                d = np.dot(d, W.T)

        # Adam
        step += 1
        c1 = lr / (one - beta1 ** step)
        c2 = one / np.sqrt(one - beta2 ** step)
        for i in range(params.shape[0]):
            g = grad[i]
            mi = beta1 * m[i] + b1 * g
            vi = beta2 * v[i] + b2 * (g * g)
            mi = mi if abs(mi) >= flush else zero
            vi = vi if vi >= flush else zero
            m[i] = mi
            v[i] = vi
            params[i] -= c1 * mi / (np.sqrt(vi) * c2 + eps)
    return step, sse
