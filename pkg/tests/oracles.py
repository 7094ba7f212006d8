"""Scalar reference implementations, written without reuse of library code."""

from __future__ import annotations

import math

import numpy as np


def mse_loop(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) * (x - y)
    return total / len(a)


def psnr_loop(a, b) -> float:
    return -10.0 * math.log10(mse_loop(a, b))


def bilinear_loop(plane, u, v):
    """Sample ``plane[R, R, C]`` at ``u, v`` in [-1, 1] (nodes at ±1, clamped).

    ``u`` runs along the first plane axis and ``v`` along the second.
    """
    R = plane.shape[0]
    fu = (min(max(u, -1.0), 1.0) + 1.0) * 0.5 * (R - 1)
    fv = (min(max(v, -1.0), 1.0) + 1.0) * 0.5 * (R - 1)
    i0 = min(int(math.floor(fu)), R - 2)
    j0 = min(int(math.floor(fv)), R - 2)
    a, b = fu - i0, fv - j0
    out = []
    for c in range(plane.shape[2]):
        val = (
            (1 - a) * (1 - b) * plane[i0, j0, c]
            + a * (1 - b) * plane[i0 + 1, j0, c]
            + (1 - a) * b * plane[i0, j0 + 1, c]
            + a * b * plane[i0 + 1, j0 + 1, c]
        )
        out.append(val)
    return np.array(out)


def triplane_loop(planes, point):
    """Sum of bilinear samples on the xy, xz and yz planes of ``planes[3, R, R, C]``."""
    x, y, z = point
    return bilinear_loop(planes[0], x, y) + bilinear_loop(planes[1], x, z) + bilinear_loop(planes[2], y, z)


def quadrature_loop(sigmas, emissions, deltas, background):
    """Front-to-back compositing, one sample at a time."""
    T = 1.0
    feat = [0.0] * len(emissions[0])
    opacity = 0.0
    weights = []
    for s, e, d in zip(sigmas, emissions, deltas):
        alpha = 1.0 - math.exp(-s * d)
        w = T * alpha
        weights.append(w)
        opacity += w
        for c in range(len(feat)):
            feat[c] += w * e[c]
        T *= math.exp(-s * d)
    for c in range(len(feat)):
        feat[c] += (1.0 - opacity) * background[c]
    return np.array(feat), opacity, np.array(weights)


def mlp_loop(params, x):
    """Two hidden ReLU layers then a linear layer, evaluated per output unit."""
    w1, b1, w2, b2, w3, b3 = (np.asarray(p, dtype=np.float64) for p in params)

    def layer(h, w, b, relu):
        out = []
        for j in range(w.shape[1]):
            acc = b[0, j]
            for i in range(w.shape[0]):
                acc += h[i] * w[i, j]
            out.append(max(acc, 0.0) if relu else acc)
        return out

    h = layer(list(x), w1, b1, True)
    h = layer(h, w2, b2, True)
    return layer(h, w3, b3, False)


def softplus(x: float) -> float:
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def adam_scalar(grads, lr, b1=0.9, b2=0.999, eps=1e-8, p0=0.0):
    p, m, v = p0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        p -= lr * mh / (math.sqrt(vh) + eps)
    return p


def conv2d_loop(x, w, b, stride, padding):
    """NCHW cross-correlation."""
    N, C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    out = np.zeros((N, O, Ho, Wo))
    for n in range(N):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[n, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[n, o, i, j] = np.sum(patch * w[o]) + (0.0 if b is None else b[o])
    return out


def conv_transpose2d_loop(x, w, b, stride, padding):
    """Scatter form: each input pixel adds ``x * w`` into the (padded) output."""
    N, Ci, H, W = x.shape
    _, Co, k, _ = w.shape
    Hf = (H - 1) * stride + k
    Wf = (W - 1) * stride + k
    full = np.zeros((N, Co, Hf, Wf))
    for n in range(N):
        for c in range(Ci):
            for i in range(H):
                for j in range(W):
                    full[n, :, i * stride : i * stride + k, j * stride : j * stride + k] += x[n, c, i, j] * w[c]
    out = full[:, :, padding : Hf - padding, padding : Wf - padding]
    if b is not None:
        out = out + np.asarray(b)[None, :, None, None]
    return out
