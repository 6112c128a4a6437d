"""How far information travels through one and two block-attention layers.

The Jacobian of a 1x8 strip shows which outputs move when each input is
perturbed.  Non-overlapping blocks keep it block diagonal; overlapping blocks
stacked twice let context leak across block boundaries in both directions.

Run: python3 demos/02_context_flow.py
"""

import numpy as np

from nbsa import attention as A


def support(n_layers, stride):
    rng = np.random.default_rng(0)
    sched = A.enumerate_blocks(1, 8, (1, 2), (1, stride))
    layers = [A.init_attention_weights(2, 1, rng, out_gain=1.0) for _ in range(n_layers)]
    x0 = rng.normal(size=(2, 1, 8))

    def f(x):
        for w in layers:
            x = A.nbsa_layer(x, w, sched).data
        return x[0, 0]

    J = np.zeros((8, 8))
    for j in range(8):
        up, dn = x0.copy(), x0.copy()
        up[:, 0, j] += 1e-6
        dn[:, 0, j] -= 1e-6
        J[:, j] = f(up) - f(dn)
    return np.where(np.abs(J) > 1e-12, "#", ".")


for title, n, s in [("one layer, stride 2 (no overlap)", 1, 2),
                    ("one layer, stride 1", 1, 1),
                    ("two layers, stride 1", 2, 1)]:
    print(title)
    print("\n".join("  " + " ".join(row) for row in support(n, s)))
    print()
