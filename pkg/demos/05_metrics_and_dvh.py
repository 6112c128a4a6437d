"""Segmentation and dose metrics on a hand-made pair of contours.

Run: python3 demos/05_metrics_and_dvh.py
"""

import numpy as np

from nbsa import metrics as M

ref = np.zeros((20, 20), dtype=bool)
ref[5:15, 5:15] = True
pred = np.zeros_like(ref)
pred[6:16, 5:14] = True

print(f"DSC          {M.dsc(ref, pred):.4f}")
print(f"surface DSC  {M.surface_dsc(ref, pred, tau=1.0):.4f} (tau = 1 px)")
print(f"HD95         {M.hd95(ref, pred):.3f} px")
apl, tpl, car = M.apl_tpl_car(ref, pred)
print(f"APL / TPL    {apl} / {tpl} boundary pixels to edit (ratio {car:.3f})")

# a dose falling off linearly from the left edge
dose = np.tile(np.linspace(70.0, 0.0, 20), (20, 1))
curve = M.dvh(dose, ref, bin_width=5.0)
print("\nDVH of the reference contour:")
for edge, frac in zip(curve.dose_edges, curve.cumulative_fraction):
    print(f"  >= {edge:5.1f} Gy: {'#' * int(round(40 * frac))} {100 * frac:.0f}%")
mean_add, max_add, dv5, dv30 = M.dose_metrics(dose, ref, pred)
print(f"dose differences manual vs auto: mean {mean_add:.2f} Gy, max {max_add:.2f} Gy, "
      f"V5 {dv5:.1f}%, V30 {dv30:.1f}%")
