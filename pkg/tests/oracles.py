"""Independent reference implementations used as test oracles.

Everything here is brute force in float64: literal nested loops, exhaustive
enumeration, and central finite differences.  Nothing imports the kernel
code paths it is used to check.
"""

import numpy as np


def conv_fp_loops(a, w, stride, pad):
    b, n, hi, wi = a.shape
    m, _, k, _ = w.shape
    r = (hi + 2 * pad - k) // stride + 1
    c = (wi + 2 * pad - k) // stride + 1
    ap = np.pad(a.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    w = w.astype(np.float64)
    out = np.zeros((b, m, r, c))
    for bb in range(b):
        for mm in range(m):
            for rr in range(r):
                for cc in range(c):
                    acc = 0.0
                    for nn in range(n):
                        for kr in range(k):
                            for kc in range(k):
                                acc += ap[bb, nn, stride * rr + kr,
                                          stride * cc + kc] * w[mm, nn, kr, kc]
                    out[bb, mm, rr, cc] = acc
    return out


def conv_bp_loops(l_next, w, stride, pad, in_hw):
    """Adjoint by literal scatter over every forward MAC."""
    b, m, r, c = l_next.shape
    _, n, k, _ = w.shape
    hi, wi = in_hw
    l_next = l_next.astype(np.float64)
    w = w.astype(np.float64)
    out = np.zeros((b, n, hi, wi))
    for bb in range(b):
        for mm in range(m):
            for rr in range(r):
                for cc in range(c):
                    for nn in range(n):
                        for kr in range(k):
                            for kc in range(k):
                                y = stride * rr + kr - pad
                                x = stride * cc + kc - pad
                                if 0 <= y < hi and 0 <= x < wi:
                                    out[bb, nn, y, x] += \
                                        l_next[bb, mm, rr, cc] * w[mm, nn, kr, kc]
    return out


def conv_wu_loops(a, l_next, k, stride, pad):
    b, n, hi, wi = a.shape
    _, m, r, c = l_next.shape
    ap = np.pad(a.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    l_next = l_next.astype(np.float64)
    out = np.zeros((m, n, k, k))
    for mm in range(m):
        for nn in range(n):
            for kr in range(k):
                for kc in range(k):
                    acc = 0.0
                    for bb in range(b):
                        for rr in range(r):
                            for cc in range(c):
                                acc += l_next[bb, mm, rr, cc] * \
                                    ap[bb, nn, stride * rr + kr, stride * cc + kc]
                    out[mm, nn, kr, kc] = acc
    return out


def pool_loops(a, k, stride, maximum):
    b, ch, hi, wi = a.shape
    r = (hi - k) // stride + 1
    c = (wi - k) // stride + 1
    out = np.zeros((b, ch, r, c))
    for bb in range(b):
        for mm in range(ch):
            for rr in range(r):
                for cc in range(c):
                    win = a[bb, mm, stride * rr:stride * rr + k,
                            stride * cc:stride * cc + k]
                    out[bb, mm, rr, cc] = win.max() if maximum else win.mean()
    return out


def bn_fp_loops(a, gamma, beta, eps):
    """Literal per-channel batch statistics and normalization."""
    a = a.astype(np.float64)
    b, m, r, c = a.shape
    count = b * r * c
    ex = np.zeros(m)
    ex2 = np.zeros(m)
    for mm in range(m):
        s = s2 = 0.0
        for bb in range(b):
            for rr in range(r):
                for cc in range(c):
                    v = a[bb, mm, rr, cc]
                    s += v
                    s2 += v * v
        ex[mm] = s / count
        ex2[mm] = s2 / count
    var = ex2 - ex ** 2
    lam = 1.0 / np.sqrt(var + eps)
    a_hat = (a - ex[None, :, None, None]) * lam[None, :, None, None]
    out = a_hat * gamma[None, :, None, None] + beta[None, :, None, None]
    return out, a_hat, ex, var, lam


def central_diff(f, x, idx, step):
    xp = x.copy()
    xp[idx] += step
    xm = x.copy()
    xm[idx] -= step
    return (f(xp) - f(xm)) / (2 * step)


def count_ops_per_layer(layers):
    """Per-layer MAC tally for the training-op formula cross-check."""
    total = 0
    per_layer = []
    for (m, n, r, c, k) in layers:
        macs = m * n * r * c * k * k
        per_layer.append(macs)
        total += macs
    return per_layer, total
