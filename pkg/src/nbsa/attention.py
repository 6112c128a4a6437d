"""Non-local self-attention, nested-block self-attention and relative logits.

Feature maps are ``C x H x W`` tensors.  Positions are flattened row-major,
so position ``r * W + c`` is pixel ``(r, c)``.  Projection matrices act on the
channel axis: ``theta(X) = W_theta @ X`` with ``W_theta`` of shape ``d x C``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass
class BlockSchedule:
    """Raster-ordered B x B memory blocks with stride s over an H x W map.

    ``B`` and ``s`` may be given per axis as ``(rows, cols)``; this is how a
    1-pixel-high strip gets 1 x B blocks.
    """

    H: int
    W: int
    B: tuple[int, int]
    s: tuple[int, int]
    origins: list[tuple[int, int]]
    membership: np.ndarray
    index: np.ndarray = field(repr=False)

    @property
    def n_blocks(self) -> int:
        return len(self.origins)

    @property
    def block_positions(self) -> int:
        return self.B[0] * self.B[1]


def enumerate_blocks(H: int, W: int, B, s) -> BlockSchedule:
    bh, bw = _pair(B)
    sh, sw = _pair(s)
    if min(bh, bw, sh, sw) < 1:
        raise ConfigurationError(f"block side and stride must be positive (B={B}, s={s})")
    if sh > bh or sw > bw:
        raise ConfigurationError(f"stride must not exceed block side (B={B}, s={s})")
    if bh > H or bw > W:
        raise ConfigurationError(f"block B={B} larger than map H={H}, W={W}")
    if (H - bh) % sh or (W - bw) % sw:
        raise ConfigurationError(
            f"inexact tiling: H={H}, W={W}, B={B}, s={s} requires (H-B) and (W-B) divisible by s"
        )
    rows = range(0, H - bh + 1, sh)
    cols = range(0, W - bw + 1, sw)
    origins = [(r, c) for r in rows for c in cols]
    membership = np.zeros((H, W), dtype=np.int64)
    local = (np.arange(bh)[:, None] * W + np.arange(bw)[None, :]).reshape(-1)
    index = np.empty((len(origins), bh * bw), dtype=np.intp)
    for k, (r, c) in enumerate(origins):
        membership[r : r + bh, c : c + bw] += 1
        index[k] = r * W + c + local
    return BlockSchedule(H, W, (bh, bw), (sh, sw), origins, membership, index)


def nearest_valid_sizes(size: int, B: int, s: int, multiple: int = 1) -> tuple[int | None, int | None]:
    """Closest map sizes below/above ``size`` that tile exactly and are multiples of ``multiple``.

    Either side is None when no such size exists (e.g. ``B - multiple`` not
    reachable in steps of ``s``).
    """
    ok = lambda n: n >= B and (n - B) % s == 0 and n % multiple == 0  # noqa: E731
    span = s * multiple  # the pattern of valid sizes repeats with this period
    below = next((n for n in range(size, max(B, size - span) - 1, -1) if ok(n)), None)
    above = next((n for n in range(max(size, B), max(size, B) + span + 1) if ok(n)), None)
    return below, above


def valid_strides(size: int, B: int) -> list[int]:
    """Strides below ``B`` that tile a map side of ``size`` exactly."""
    return [s for s in range(1, B) if size >= B and (size - B) % s == 0]


@dataclass
class AttentionWeights:
    w_theta: Tensor
    w_phi: Tensor
    w_g: Tensor
    w_out: Tensor
    e_rel: Tensor | None = None

    def __post_init__(self):
        d, C = self.w_theta.shape
        for name in ("w_phi", "w_g"):
            if getattr(self, name).shape != (d, C):
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {(d, C)}")
        if self.w_out.shape != (C, d):
            raise DimensionError(f"w_out has shape {self.w_out.shape}, expected {(C, d)}")
        if d > C:
            raise DimensionError(f"attention width d={d} exceeds channels C={C}")
        if self.e_rel is not None and (self.e_rel.data.ndim != 2 or self.e_rel.shape[1] != d):
            raise DimensionError(f"e_rel must be (2L-1) x {d}, got {self.e_rel.shape}")

    @property
    def channels(self) -> int:
        return self.w_theta.shape[1]

    @property
    def d(self) -> int:
        return self.w_theta.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        out = {"w_theta": self.w_theta, "w_phi": self.w_phi, "w_g": self.w_g, "w_out": self.w_out}
        if self.e_rel is not None:
            out["e_rel"] = self.e_rel
        return out


def init_attention_weights(
    C: int,
    d: int,
    rng: np.random.Generator,
    relative_positions: int | None = None,
    out_gain: float = 0.1,
) -> AttentionWeights:
    """Fan-in scaled normal init; ``w_out`` is further scaled by ``out_gain``.

    A small output gain starts each layer close to the identity while keeping
    every projection on the gradient path.  ``relative_positions`` is L, the
    positions per block.
    """

    def mat(rows, cols, gain=1.0):
        return Tensor(gain * rng.normal(0.0, math.sqrt(1.0 / cols), size=(rows, cols)), requires_grad=True)

    e_rel = None
    if relative_positions is not None:
        e_rel = Tensor(rng.normal(0.0, 0.02, size=(2 * relative_positions - 1, d)), requires_grad=True)
    return AttentionWeights(mat(d, C), mat(d, C), mat(d, C), mat(C, d, out_gain), e_rel)


def logit_scale(d: int) -> float:
    return 1.0 / math.sqrt(d)


# ---------------------------------------------------------------------------
# relative position logits


def relative_logits_naive(q, e) -> np.ndarray:
    """``out[i, j] = q[i] . e[j - i + L - 1]`` by direct double loop (the oracle)."""
    q = np.asarray(q.data if isinstance(q, Tensor) else q, dtype=np.float64)
    e = np.asarray(e.data if isinstance(e, Tensor) else e, dtype=np.float64)
    L, d = q.shape
    if e.shape != (2 * L - 1, d):
        raise DimensionError(f"relative embedding must be {(2 * L - 1, d)}, got {e.shape}")
    ql, el = q.tolist(), e.tolist()
    out = [[0.0] * L for _ in range(L)]
    for i in range(L):
        for j in range(L):
            qi, ek = ql[i], el[j - i + L - 1]
            acc = 0.0
            for t in range(d):
                acc += qi[t] * ek[t]
            out[i][j] = acc
    return np.array(out)


def relative_logits_skew(q: Tensor, e: Tensor) -> Tensor:
    """Relative logits by pad / reshape / reslice of ``q @ e.T`` (no gather).

    ``q`` is ``L x d`` or batched ``M x L x d``; ``e`` holds ``2L - 1`` rows for
    offsets ``-(L-1) .. L-1``.  One dummy column is padded on the left of the
    ``L x (2L-1)`` product; after flattening, dropping the first ``L`` entries
    and reshaping to rows of length ``2L - 1``, column ``j`` of row ``i`` holds
    offset ``j - i``.
    """
    q, e = T.as_tensor(q), T.as_tensor(e)
    batched = q.data.ndim == 3
    if not batched:
        q = T.reshape(q, (1,) + q.shape)
    M, L, d = q.shape
    if e.shape != (2 * L - 1, d):
        raise DimensionError(f"relative embedding must be {(2 * L - 1, d)}, got {e.shape}")
    rel = T.matmul(q, T.transpose(e), fixed_order=True)  # M x L x (2L-1)
    padded = T.pad_left(rel, 1)  # M x L x 2L
    flat = T.reshape(padded, (M, 2 * L * L))
    flat = T.take_slice(flat, (slice(None), slice(L, None)))  # M x L(2L-1)
    rows = T.reshape(flat, (M, L, 2 * L - 1))
    out = T.take_slice(rows, (slice(None), slice(None), slice(0, L)))
    return out if batched else T.reshape(out, (L, L))


# ---------------------------------------------------------------------------
# attention layers


def _check_input(x: Tensor, w: AttentionWeights) -> tuple[int, int, int]:
    if x.data.ndim != 3:
        raise DimensionError(f"attention expects a C x H x W map, got {x.shape}")
    C, H, W = x.shape
    if C != w.channels:
        raise DimensionError(f"input has {C} channels, weights expect {w.channels}")
    return C, H, W


def full_self_attention(x, w: AttentionWeights) -> Tensor:
    """All-pairs non-local attention block with residual: ``x + W_out (V A^T)``."""
    x = T.as_tensor(x)
    C, H, W = _check_input(x, w)
    N = H * W
    X = T.reshape(x, (C, N))
    q = T.matmul(w.w_theta, X)  # d x N
    k = T.matmul(w.w_phi, X)
    v = T.matmul(w.w_g, X)
    logits = T.matmul(T.transpose(q), k)  # N x N
    if w.e_rel is not None:
        logits = T.add(logits, relative_logits_skew(T.transpose(q), w.e_rel))
    attn = T.softmax_rows(T.scale(logits, logit_scale(w.d)))
    beta = T.matmul(v, T.transpose(attn))  # d x N
    y = T.matmul(w.w_out, beta)
    return T.add(x, T.reshape(y, (C, H, W)))


def _check_schedule(sched: BlockSchedule, H: int, W: int) -> None:
    if (sched.H, sched.W) != (H, W):
        raise DimensionError(f"schedule built for {sched.H}x{sched.W}, map is {H}x{W}")


def block_attention_weights(x, w: AttentionWeights, sched: BlockSchedule) -> Tensor:
    """Per-block softmax matrices, shape ``M x L x L`` (raster block order)."""
    x = T.as_tensor(x)
    C, H, W = _check_input(x, w)
    _check_schedule(sched, H, W)
    X = T.reshape(x, (C, H * W))
    qb = T.gather_positions(T.matmul(w.w_theta, X), sched.index)  # M x L x d
    kb = T.gather_positions(T.matmul(w.w_phi, X), sched.index)
    logits = T.matmul(qb, T.transpose(kb))
    if w.e_rel is not None:
        logits = T.add(logits, relative_logits_skew(qb, w.e_rel))
    return T.softmax_rows(T.scale(logits, logit_scale(w.d)))


def nbsa_layer(
    x,
    w: AttentionWeights,
    sched: BlockSchedule,
    average: bool = False,
    reverse: bool = False,
    serial: bool = False,
) -> Tensor:
    """One nested-block attention layer.

    Attention is computed inside each block with shared weights and the
    per-pixel results are summed over all enclosing blocks (divided by the
    membership count when ``average``), projected back to C channels and
    added to the input.  ``serial`` evaluates block by block; the default
    batches every block and reduces in the same raster order.
    """
    x = T.as_tensor(x)
    C, H, W = _check_input(x, w)
    _check_schedule(sched, H, W)
    N = H * W
    X = T.reshape(x, (C, N))
    q = T.matmul(w.w_theta, X)
    k = T.matmul(w.w_phi, X)
    v = T.matmul(w.w_g, X)
    scl = logit_scale(w.d)
    if serial:
        order = range(sched.n_blocks - 1, -1, -1) if reverse else range(sched.n_blocks)
        agg = None
        for b in order:
            idx = sched.index[b : b + 1]
            part = T.scatter_positions(_block_beta(q, k, v, idx, w.e_rel, scl), idx, N)
            agg = part if agg is None else T.add(agg, part)
    else:
        agg = T.scatter_positions(_block_beta(q, k, v, sched.index, w.e_rel, scl), sched.index, N, reverse=reverse)
    if average:
        agg = T.mul_const(agg, np.broadcast_to(1.0 / sched.membership.reshape(1, N), agg.shape))
    y = T.matmul(w.w_out, agg)
    return T.add(x, T.reshape(y, (C, H, W)))


def _block_beta(q, k, v, index, e_rel, scl) -> Tensor:
    qb = T.gather_positions(q, index)
    kb = T.gather_positions(k, index)
    vb = T.gather_positions(v, index)
    logits = T.matmul(qb, T.transpose(kb))
    if e_rel is not None:
        logits = T.add(logits, relative_logits_skew(qb, e_rel))
    attn = T.softmax_rows(T.scale(logits, scl))
    return T.matmul(attn, vb)  # M x L x d


def nested_nbsa(x, w1: AttentionWeights, w2: AttentionWeights, sched: BlockSchedule, **kw) -> Tensor:
    """Two stacked NBSA layers with independent weights (bi-directional flow)."""
    if w1 is w2 or w1.w_theta is w2.w_theta:
        raise ConfigurationError("the two nested layers need independent weights")
    return nbsa_layer(nbsa_layer(x, w1, sched, **kw), w2, sched, **kw)


def attention_stack(x, layers: list[AttentionWeights], sched: BlockSchedule | None, variant: str, **kw) -> Tensor:
    """Apply ``len(layers)`` attention layers of the given variant in sequence."""
    for w in layers:
        if variant == "nbsa":
            x = nbsa_layer(x, w, sched, **kw)
        elif variant == "full_sa":
            x = full_self_attention(x, w)
        else:
            raise ConfigurationError(f"unknown attention variant {variant!r}")
    return x


# ---------------------------------------------------------------------------
# attention map export


def attention_received(x, w: AttentionWeights, sched: BlockSchedule, query_pixel: tuple[int, int]) -> np.ndarray:
    """Attention weight each pixel receives from ``query_pixel``, summed over enclosing blocks."""
    x = T.as_tensor(x)
    _, H, W = _check_input(x, w)
    r, c = query_pixel
    if not (0 <= r < H and 0 <= c < W):
        raise ConfigurationError(f"query pixel {query_pixel} outside {H}x{W} map")
    attn = block_attention_weights(x, w, sched).data  # M x L x L
    qpos = r * W + c
    acc = np.zeros(H * W)
    for b in range(sched.n_blocks):
        hit = np.nonzero(sched.index[b] == qpos)[0]
        if hit.size:
            acc[sched.index[b]] += attn[b, hit[0]]
    return acc.reshape(H, W)


def export_attention_map(x, w: AttentionWeights, sched: BlockSchedule, query_pixel: tuple[int, int]) -> np.ndarray:
    """Min-max normalized uint8 map of :func:`attention_received`.

    A constant map becomes all 255 when positive (all 0 otherwise).
    """
    raw = attention_received(x, w, sched, query_pixel)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.full(raw.shape, 255 if hi > 0 else 0, dtype=np.uint8)
    return np.rint((raw - lo) / (hi - lo) * 255.0).astype(np.uint8)


# ---------------------------------------------------------------------------
# configuration

VARIANTS = ("none", "full_sa", "nbsa")
PLACEMENTS = ("penultimate", "last")


def overlap_stride(B: int) -> int:
    """Default overlapping stride, two thirds of the block side."""
    return max(1, round(2 * B / 3))


@dataclass(frozen=True)
class AttentionConfig:
    """Attention insertion settings.

    ``s=None`` derives the stride from ``overlap``: two thirds of ``B`` when
    overlapping, ``B`` otherwise.  ``d=None`` means half the channel count.
    """

    variant: str = "nbsa"
    n_layers: int = 2
    B: int = 8
    s: int | None = 4
    overlap: bool = True
    relative: bool = False
    placement: str = "penultimate"
    d: int | None = None
    average: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.placement not in PLACEMENTS:
            raise ConfigurationError(f"placement must be one of {PLACEMENTS}, got {self.placement!r}")
        if self.n_layers not in (1, 2, 3):
            raise ConfigurationError(f"n_layers must be 1, 2 or 3, got {self.n_layers}")
        if self.B < 2:
            raise ConfigurationError(f"block side B must be >= 2, got {self.B}")
        if self.s is None:
            object.__setattr__(self, "s", overlap_stride(self.B) if self.overlap else self.B)
        if self.overlap and not 1 <= self.s < self.B:
            raise ConfigurationError(f"overlapping blocks need 1 <= s < B (B={self.B}, s={self.s})")
        if not self.overlap and self.s != self.B:
            raise ConfigurationError(f"non-overlapping blocks need s == B (B={self.B}, s={self.s})")

    def width(self, channels: int) -> int:
        return self.d if self.d is not None else max(1, channels // 2)

    def schedule(self, H: int, W: int) -> BlockSchedule | None:
        if self.variant != "nbsa":
            return None
        return enumerate_blocks(H, W, self.B, self.s)
