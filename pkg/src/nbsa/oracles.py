"""Brute-force reference implementations.

Written with explicit Python loops and no calls into the rest of the
package, so they can check it independently.
"""

from __future__ import annotations

import math

import numpy as np


def _softmax(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def attention_positions(X, wq, wk, wv, wo, positions):
    """Attention restricted to ``positions``; returns ``{pos: vector}`` projected through ``wo``.

    ``X`` is ``C x N`` (nested lists or array), weights are ``d x C``, ``wo`` has ``d`` columns.
    """
    X = np.asarray(X, dtype=float)
    C = X.shape[0]
    d = len(wq)
    proj = lambda w, p: [sum(w[a][c] * X[c, p] for c in range(C)) for a in range(d)]  # noqa: E731
    q = {p: proj(wq, p) for p in positions}
    k = {p: proj(wk, p) for p in positions}
    v = {p: proj(wv, p) for p in positions}
    out = {}
    for i in positions:
        logits = [sum(q[i][a] * k[j][a] for a in range(d)) / math.sqrt(d) for j in positions]
        att = _softmax(logits)
        beta = [sum(att[n] * v[j][a] for n, j in enumerate(positions)) for a in range(d)]
        out[i] = [sum(row[a] * beta[a] for a in range(d)) for row in wo]
    return out


def full_attention(x, wq, wk, wv, wo):
    """All-pairs attention block with residual, ``x`` is ``C x H x W``."""
    x = np.asarray(x, dtype=float)
    C, H, W = x.shape
    X = x.reshape(C, H * W)
    res = attention_positions(X, wq, wk, wv, wo, list(range(H * W)))
    out = X.copy()
    for p, vec in res.items():
        out[:, p] += vec
    return out.reshape(C, H, W)


def block_attention(x, wq, wk, wv, wo, bh, bw, sh, sw, average=False):
    """Nested-block attention with residual; contributions summed over enclosing blocks."""
    x = np.asarray(x, dtype=float)
    C, H, W = x.shape
    X = x.reshape(C, H * W)
    d = len(wq)
    acc = np.zeros((d, H * W))
    count = np.zeros(H * W)
    wo = np.asarray(wo, dtype=float)
    # project back only after summation: collect d-dim betas through an identity
    eye = [[1.0 if a == b else 0.0 for b in range(d)] for a in range(d)]
    for r in range(0, H - bh + 1, sh):
        for c in range(0, W - bw + 1, sw):
            pos = [(r + i) * W + (c + j) for i in range(bh) for j in range(bw)]
            for p, vec in attention_positions(X, wq, wk, wv, eye, pos).items():
                acc[:, p] += vec
                count[p] += 1
    if average:
        acc = acc / count
    out = X + wo @ acc
    return out.reshape(C, H, W)


def block_attention_np(x, wq, wk, wv, wo, bh, bw, sh, sw, e_rel=None, average=False):
    """Same layer as :func:`block_attention`, one numpy block at a time.

    Relative logits use an explicit offset gather ``e_rel[j - i + L - 1]``.
    Fast enough to sit inside a finite-difference loop.
    """
    x = np.asarray(x, dtype=float)
    C, H, W = x.shape
    X = x.reshape(C, H * W)
    q, k, v = wq @ X, wk @ X, wv @ X
    d = q.shape[0]
    L = bh * bw
    offs = np.arange(L)[None, :] - np.arange(L)[:, None] + L - 1
    acc = np.zeros((d, H * W))
    count = np.zeros(H * W)
    for r in range(0, H - bh + 1, sh):
        for c in range(0, W - bw + 1, sw):
            pos = np.array([(r + i) * W + (c + j) for i in range(bh) for j in range(bw)])
            qb, kb, vb = q[:, pos], k[:, pos], v[:, pos]
            z = qb.T @ kb
            if e_rel is not None:
                z = z + np.einsum("it,ijt->ij", qb.T, np.asarray(e_rel)[offs])
            z = z / np.sqrt(d)
            z = np.exp(z - z.max(axis=1, keepdims=True))
            a = z / z.sum(axis=1, keepdims=True)
            acc[:, pos] += vb @ a.T
            count[pos] += 1
    if average:
        acc = acc / count
    return (X + wo @ acc).reshape(C, H, W)


def surface_pixels(mask) -> set:
    m = np.asarray(mask, dtype=bool)
    H, W = m.shape
    out = set()
    for r in range(H):
        for c in range(W):
            if not m[r, c]:
                continue
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < H and 0 <= cc < W) or not m[rr, cc]:
                    out.add((r, c))
                    break
    return out


def _directed(sa, sb):
    return [min(math.hypot(p[0] - q[0], p[1] - q[1]) for q in sb) for p in sa]


def hd95(a, b) -> float:
    sa, sb = sorted(surface_pixels(a)), sorted(surface_pixels(b))

    def pct(vals):
        vals = sorted(vals)
        return vals[math.ceil(0.95 * len(vals)) - 1]

    return max(pct(_directed(sa, sb)), pct(_directed(sb, sa)))


def surface_dsc(a, b, tau) -> float:
    sa, sb = sorted(surface_pixels(a)), sorted(surface_pixels(b))
    da, db = _directed(sa, sb), _directed(sb, sa)
    return (sum(v <= tau for v in da) + sum(v <= tau for v in db)) / (len(da) + len(db))


def dsc(a, b) -> float:
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    na = sum(1 for v in a.flat if v)
    nb = sum(1 for v in b.flat if v)
    inter = sum(1 for u, v in zip(a.flat, b.flat) if u and v)
    return 1.0 if na + nb == 0 else 2 * inter / (na + nb)


def apl_tpl(ref, pred) -> tuple[int, int]:
    sr, sp = surface_pixels(ref), surface_pixels(pred)
    return len(sr ^ sp), len(sr)
