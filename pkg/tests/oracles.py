"""Slow, obviously-correct reference implementations used only by the tests."""

import math

import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def conv2d_loops(x, weight, bias, stride, dilation, padding):
    """Direct nested-loop dilated convolution of a single C x H x W input."""
    c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    rf = dilation * (k - 1) + 1
    ho = (h + 2 * padding - rf) // stride + 1
    wo = (w + 2 * padding - rf) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for co in range(c_out):
        for i in range(ho):
            for j in range(wo):
                s = bias[co]
                for ci in range(c_in):
                    for u in range(k):
                        for v in range(k):
                            r = i * stride + u * dilation - padding
                            c = j * stride + v * dilation - padding
                            if 0 <= r < h and 0 <= c < w:
                                s += weight[co, ci, u, v] * x[ci, r, c]
                out[co, i, j] = s
    return out


def maxpool_loops(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for ch in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ch, i, j] = max(x[ch, 2 * i + a, 2 * j + b] for a in range(2) for b in range(2))
    return out


def pairwise_auc(positive, scores):
    """P(score of a random positive > score of a random negative), ties counted 1/2."""
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def grad_cam_loops(A, dY):
    k, h, w = A.shape
    z = h * w
    weights = [sum(dY[c, i, j] for i in range(h) for j in range(w)) / z for c in range(k)]
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            out[i, j] = max(0.0, sum(weights[c] * A[c, i, j] for c in range(k)))
    return out


def grad_cam_pp_loops(A, dY):
    k, h, w = A.shape
    out = np.zeros((h, w))
    weights = []
    for c in range(k):
        total_a = sum(A[c, a, b] for a in range(h) for b in range(w))
        wk = 0.0
        for i in range(h):
            for j in range(w):
                g = dY[c, i, j]
                second, third = g**2, g**3
                denom = 2 * second + total_a * third
                alpha = second / denom if denom != 0 else 0.0
                wk += alpha * max(g, 0.0)
        weights.append(wk)
    for i in range(h):
        for j in range(w):
            out[i, j] = max(0.0, sum(weights[c] * A[c, i, j] for c in range(k)))
    return out


def central_difference(f, x, eps=1e-5):
    """Numerical gradient of scalar ``f`` w.r.t. every entry of array ``x`` (mutated in place, restored)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def rel_error(a, b):
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)``."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def wald(p, n, z=1.96):
    h = z * math.sqrt(p * (1 - p) / n)
    return max(0.0, p - h), min(1.0, p + h)


def sampled_difference(f, arr, idx, eps=1e-5, kink_tol=1e-6):
    """Central differences of ``f`` at flat indices ``idx`` of ``arr``.

    Also returns a mask of entries where the two one-sided slopes disagree,
    meaning the +/- eps probe straddles a ReLU or max-pool switch and the
    central difference is not a derivative estimate there.
    """
    flat = arr.reshape(-1)
    f0 = f()
    num = np.empty(len(idx))
    kink = np.zeros(len(idx), dtype=bool)
    for t, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        num[t] = (fp - fm) / (2 * eps)
        right, left = (fp - f0) / eps, (f0 - fm) / eps
        kink[t] = abs(right - left) > kink_tol * max(1.0, abs(num[t]))
    return num, kink
