"""Geometric and dosimetric segmentation metrics on 2-D masks.

Surfaces are foreground pixels with at least one 4-neighbour in the
background; pixels outside the image count as background.  Distances are
Euclidean between pixel centres, multiplied by ``spacing``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_erosion, distance_transform_edt
from scipy.stats import rankdata

from .errors import DimensionError, UndefinedMetricError

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def surface(mask) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    return m & ~binary_erosion(m, structure=_CROSS, border_value=0)


def dsc(a, b) -> float:
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def _directed(src: np.ndarray, dst: np.ndarray, spacing: float) -> np.ndarray:
    """Distance from every pixel of ``src`` to the nearest pixel of ``dst``."""
    dist = distance_transform_edt(~dst)
    return dist[src] * spacing


def _surfaces(a, b):
    a, b = _pair(a, b)
    if not a.any() or not b.any():
        raise UndefinedMetricError("distance metrics need two nonempty masks")
    return surface(a), surface(b)


def nearest_rank(values: np.ndarray, q: float) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    rank = max(1, math.ceil(q / 100.0 * len(v)))
    return float(v[rank - 1])


def hd95(a, b, spacing: float = 1.0) -> float:
    """Max of the two directed nearest-rank 95th percentile surface distances."""
    sa, sb = _surfaces(a, b)
    return max(nearest_rank(_directed(sa, sb, spacing), 95), nearest_rank(_directed(sb, sa, spacing), 95))


def surface_dsc(a, b, tau: float = 1.0, spacing: float = 1.0) -> float:
    if tau < 0:
        raise ValueError("tau must be >= 0")
    sa, sb = _surfaces(a, b)
    da = _directed(sa, sb, spacing)
    db = _directed(sb, sa, spacing)
    return (int((da <= tau).sum()) + int((db <= tau).sum())) / (da.size + db.size)


def apl_tpl_car(reference, predicted) -> tuple[int, int, float]:
    """Added path length, total path length and their ratio.

    APL counts surface pixels present in only one of the two masks, i.e.
    boundary pixels to be added plus those to be deleted.
    """
    ref, pred = _pair(reference, predicted)
    if not ref.any():
        raise UndefinedMetricError("reference mask is empty")
    sr, sp = surface(ref), surface(pred)
    tpl = int(sr.sum())
    apl = int((sr & ~sp).sum()) + int((sp & ~sr).sum())
    return apl, tpl, apl / tpl


@dataclass
class DvhCurve:
    dose_edges: np.ndarray
    cumulative_fraction: np.ndarray


def dvh(dose, mask, bin_width: float = 1.0) -> DvhCurve:
    """Cumulative DVH; edges run from 0 past the structure's max dose in ``bin_width`` steps."""
    d = np.asarray(getattr(dose, "dose", dose), dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if d.shape != m.shape:
        raise DimensionError(f"dose grid {d.shape} and mask {m.shape} differ")
    if not m.any():
        raise UndefinedMetricError("DVH of an empty structure")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    vals = np.sort(d[m])
    edges = bin_width * np.arange(int(math.floor(vals[-1] / bin_width)) + 2)
    below = np.searchsorted(vals, edges, side="left")
    frac = (vals.size - below) / vals.size
    return DvhCurve(edges, frac)


def v_x(dose, mask, x: float) -> float:
    """Percent of the structure receiving at least ``x`` Gy."""
    d = np.asarray(getattr(dose, "dose", dose), dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    return 100.0 * float((d[m] >= x).mean())


def dose_metrics(dose, mask_manual, mask_auto, x_levels=(5.0, 30.0)) -> tuple[float, ...]:
    """``(mean_ADD, max_ADD, dV_x...)`` between manual and automatic structures."""
    d = np.asarray(getattr(dose, "dose", dose), dtype=np.float64)
    mm, ma = _pair(mask_manual, mask_auto)
    if mm.shape != d.shape:
        raise DimensionError(f"dose grid {d.shape} and masks {mm.shape} differ")
    if not mm.any() or not ma.any():
        raise UndefinedMetricError("dose metrics need two nonempty structures")
    mean_add = abs(float(d[mm].mean()) - float(d[ma].mean()))
    max_add = abs(float(d[mm].max()) - float(d[ma].max()))
    dv = [abs(v_x(d, mm, x) - v_x(d, ma, x)) for x in x_levels]
    return (mean_add, max_add, *dv)


def spearman(xs, ys) -> float:
    """Pearson correlation of mid-ranks."""
    x, y = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError(f"spearman needs equal-length 1-d series, got {x.shape}, {y.shape}")
    if x.size < 2:
        raise UndefinedMetricError("spearman needs at least two points")
    rx, ry = rankdata(x) - (x.size + 1) / 2, rankdata(y) - (y.size + 1) / 2
    den = math.sqrt(float((rx * rx).sum()) * float((ry * ry).sum()))
    if den == 0.0:
        raise UndefinedMetricError("spearman undefined for a constant series")
    return float((rx * ry).sum()) / den
