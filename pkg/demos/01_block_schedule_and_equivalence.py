"""Memory blocks, their schedule, and the single-block limit.

Run: python3 demos/01_block_schedule_and_equivalence.py
"""

import numpy as np

from nbsa import attention as A

H = W = 12
sched = A.enumerate_blocks(H, W, 6, 3)
print(f"{sched.n_blocks} blocks of 6x6 at stride 3 on a {H}x{W} map")
print("block origins:", sched.origins[:4], "...")
k, n = np.unique(sched.membership, return_counts=True)
print("pixels covered by k blocks:", {int(a): int(b) for a, b in zip(k, n)})

# A block as large as the map turns nested-block attention into plain
# full self-attention.
rng = np.random.default_rng(0)
C, d = 8, 4
x = rng.normal(size=(C, H, W))
w = A.init_attention_weights(C, d, rng, out_gain=1.0)
full = A.full_self_attention(x, w).data
single = A.nbsa_layer(x, w, A.enumerate_blocks(H, W, H, W)).data
print(f"max |single block - full| = {np.abs(full - single).max():.1e}")

# Sizes and strides that do not tile the map exactly are rejected up front.
print("valid strides for B=8 on 64 px:", A.valid_strides(64, 8))
print("nearest sizes for B=8, s=5:", A.nearest_valid_sizes(64, 8, 5))
