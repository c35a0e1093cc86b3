"""Independent reference implementations for metric and gradient checks.

Everything here is intentionally naive: O(n^2) loops, an explicit LP
for transport, central finite differences. These are the ground truth
the fast implementations are tested against, so they must not share
code or algorithmic shortcuts with the package.
"""

import numpy as np
from scipy.optimize import linprog


def auc_brute(y, s):
    """Pairwise P(score+ > score-) + 0.5 P(tie)."""
    y = np.asarray(y)
    s = np.asarray(s, dtype=np.float64)
    pos = s[y == 1]
    neg = s[y == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def average_precision_brute(y, s):
    """Average precision, tie blocks sharing the block-end precision.

    For each positive with score v, precision is evaluated at the rank
    of the last element of v's tie block in the descending ordering.
    """
    y = np.asarray(y)
    s = np.asarray(s, dtype=np.float64)
    out = []
    for v in s[y == 1]:
        above = s > v
        tied = s == v
        rank_end = int(above.sum() + tied.sum())
        pos_in = int((y[above] == 1).sum() + (y[tied] == 1).sum())
        out.append(pos_in / rank_end)
    return float(np.mean(out))


def emd_lp(a, b):
    """1-Wasserstein distance as an explicit transport linear program."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = len(a), len(b)
    cost = np.abs(a[:, None] - b[None, :]).ravel()
    # Row sums 1/n, column sums 1/m.
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)])
    res = linprog(cost, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    assert res.success, res.message
    return float(res.fun)


def finite_difference_grads(loss_fn, arrays, h=1e-5):
    """Central differences of loss_fn() w.r.t. each array, in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn()
            flat[k] = orig - h
            down = loss_fn()
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def relative_error(a, b, floor=1e-6):
    """Max elementwise |a-b| / max(|a|, |b|, floor).

    The floor keeps finite-difference noise (~1e-11 at h=1e-5) from
    inflating the ratio on near-zero gradient entries.
    """
    num = np.abs(a - b)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((num / den).max()) if a.size else 0.0


def run_gradcheck(spec, rng, h=1e-5, batch=4):
    """Analytic vs central-difference gradients for one random draw.

    Returns the worst relative error across every trainable array of a
    freshly initialized network under the loss matching its output head
    (binary for 1 output, multiclass otherwise).
    """
    from fairrisk.neural import (
        backward,
        bce_with_logits,
        ce_with_logits,
        forward,
        init_params,
    )

    params = init_params(spec, rng)
    X = rng.normal(0.0, 1.0, size=(batch, spec.n_inputs))
    binary = spec.n_outputs == 1
    if binary:
        y = rng.integers(0, 2, batch).astype(np.float64)
    else:
        labels = rng.integers(0, spec.n_outputs, batch)

    def loss_fn():
        out, _ = forward(params, X)
        if binary:
            return bce_with_logits(out[:, 0], y)[0]
        return ce_with_logits(out, labels)[0]

    out, caches = forward(params, X)
    if binary:
        _, dl = bce_with_logits(out[:, 0], y)
        d_out = dl.reshape(-1, 1)
    else:
        _, d_out = ce_with_logits(out, labels)
    grads, _ = backward(params, caches, d_out)
    fd = finite_difference_grads(loss_fn, params.trainable(), h=h)
    return max(relative_error(a, f) for a, f in zip(grads, fd))
