"""Pure-Python reference kernels, used when the compiled extension is unavailable.

Arithmetic order mirrors ``_kernels.pyx`` so both backends return identical results.
"""
import numpy as np


def pav(values, weights):
    """Weighted pool-adjacent-violators for a nondecreasing fit."""
    y = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = y.shape[0]
    means = np.empty(n)
    wts = np.empty(n)
    starts = np.empty(n, dtype=np.intp)
    top = -1
    for i in range(n):
        top += 1
        means[top] = y[i]
        wts[top] = w[i]
        starts[top] = i
        while top > 0 and means[top - 1] > means[top]:
            tw = wts[top - 1] + wts[top]
            if tw > 0.0:
                means[top - 1] = (wts[top - 1] * means[top - 1] + wts[top] * means[top]) / tw
            else:
                means[top - 1] = 0.5 * (means[top - 1] + means[top])
            wts[top - 1] = tw
            top -= 1
    out = np.empty(n)
    for b in range(top + 1):
        end = starts[b + 1] if b < top else n
        out[starts[b]:end] = means[b]
    return out


def partition_dp(sg, sx, sh):
    """Best split of 0..n into contiguous blocks from prefix sums.

    Block (i, j] is worth (sg[j]-sg[i]) * (sx[j]-sx[i]) / (sh[j]-sh[i]).
    Returns (value, prev) where prev[j] is the optimal start of the block ending at j.
    """
    sg = np.asarray(sg, dtype=float)
    sx = np.asarray(sx, dtype=float)
    sh = np.asarray(sh, dtype=float)
    n = sg.shape[0] - 1
    best = np.zeros(n + 1)
    prev = np.zeros(n + 1, dtype=np.intp)
    for j in range(1, n + 1):
        cand = best[:j] + (sg[j] - sg[:j]) * (sx[j] - sx[:j]) / (sh[j] - sh[:j])
        i = int(np.argmax(cand))
        best[j] = cand[i]
        prev[j] = i
    return float(best[n]), prev


def max_ic_violation(gain):
    """Largest entry of gain[i, j] - gain[i, i] and its location."""
    g = np.asarray(gain, dtype=float)
    v = g - np.diag(g)[:, None]
    flat = int(np.argmax(v))
    i, j = divmod(flat, g.shape[1])
    return float(v[i, j]), i, j
