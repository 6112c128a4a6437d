"""Multiply-add accounting for the attention variants.

Conventions: a multiply-add counts as one operation; each softmax entry
(exp plus divide) counts as one; projections and the residual are per map,
the quadratic terms are per block.  Full self-attention is the single block
covering all N positions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .attention import AttentionConfig, enumerate_blocks

STAGES = ("projections", "logits", "softmax", "weighting", "output_projection", "residual")


@dataclass
class FlopLedger:
    projections: int = 0
    logits: int = 0
    softmax: int = 0
    weighting: int = 0
    output_projection: int = 0
    residual: int = 0
    blocks: int = 0

    @property
    def total(self) -> int:
        return sum(getattr(self, k) for k in STAGES)

    def as_row(self) -> dict:
        row = asdict(self)
        row["total"] = self.total
        return row


def count_flops(config: AttentionConfig, C: int, d: int, H: int, W: int) -> FlopLedger:
    if config.variant == "none":
        return FlopLedger()
    N = H * W
    if config.variant == "full_sa":
        sizes = [N]
    else:
        sched = enumerate_blocks(H, W, config.B, config.s)
        sizes = [sched.block_positions] * sched.n_blocks
    led = FlopLedger(blocks=len(sizes))
    for L in sizes:
        led.logits += L * L * d
        if config.relative:
            led.logits += L * (2 * L - 1) * d
        led.softmax += L * L
        led.weighting += L * L * d
    led.projections = 3 * N * C * d
    led.output_projection = N * d * C
    led.residual = N * C
    n = config.n_layers
    for k in STAGES:
        setattr(led, k, getattr(led, k) * n)
    return led


def cca_flops(H: int, W: int, d: int, n_layers: int = 1) -> int:
    """Analytic criss-cross attention count: each pixel attends to its row and column."""
    return H * W * (H + W - 1) * d * n_layers
