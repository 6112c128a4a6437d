"""Counted multiply-adds for full self-attention, nested blocks and criss-cross.

Run: python3 demos/03_cost_comparison.py
"""

from nbsa import attention as A
from nbsa import cost

C, d, n_layers = 64, 32, 2
print(f"{'H':>4} {'variant':>8} {'B':>3} {'s':>3} {'blocks':>6} {'total':>18}")
for H, B, s in [(252, 36, 24), (252, 36, 12), (64, 8, 4)]:
    full = cost.count_flops(A.AttentionConfig(variant="full_sa", n_layers=n_layers), C, d, H, H)
    nb = cost.count_flops(A.AttentionConfig(variant="nbsa", n_layers=n_layers, B=B, s=s), C, d, H, H)
    print(f"{H:>4} {'full_sa':>8} {'':>3} {'':>3} {full.blocks:>6} {full.total:>18,}")
    print(f"{H:>4} {'nbsa':>8} {B:>3} {s:>3} {nb.blocks:>6} {nb.total:>18,}  ({full.total / nb.total:.1f}x cheaper)")
    print(f"{H:>4} {'cca':>8} {'':>3} {'':>3} {'':>6} {cost.cca_flops(H, H, d, n_layers):>18,}  (row/column terms only)")
