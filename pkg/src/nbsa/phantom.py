"""Synthetic head-and-neck-like phantoms and dose grids.

Each phantom is a soft-tissue body ellipse holding low-contrast elliptical
organs and a bright mandible arc.  Artifacts are additive streaks along
random lines, blurred by one 3x3 box pass.  Geometry, intensities, noise and
streaks come from independent RNG substreams, so the clean image does not
depend on the artifact level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import ConfigurationError
from .rng import SplitMix64

ORGANS = (
    "mandible",
    "parotid_l",
    "parotid_r",
    "brainstem",
    "spinal_cord",
    "submandibular_l",
    "submandibular_r",
)
MAX_LABELS = len(ORGANS) + 1
SEVERITIES = ("none", "moderate", "severe")

# normalized (row, col, row radius, col radius) of each ellipse organ
_ELLIPSES = {
    "parotid_l": (0.50, 0.20, 0.11, 0.075),
    "parotid_r": (0.50, 0.80, 0.11, 0.075),
    "brainstem": (0.66, 0.50, 0.075, 0.075),
    "spinal_cord": (0.84, 0.50, 0.05, 0.05),
    "submandibular_l": (0.37, 0.36, 0.05, 0.055),
    "submandibular_r": (0.37, 0.64, 0.05, 0.055),
}
# mandible arc: center row/col, mid radius, thickness (fractions of min(H, W)), angular span
_ARC = (0.40, 0.50, 0.25, 0.055, -math.pi + 0.35, -0.35)
_BODY = (0.52, 0.50, 0.45, 0.42)
_OFFSETS = {
    "mandible": 0.40,
    "parotid_l": -0.04,
    "parotid_r": -0.04,
    "brainstem": 0.035,
    "spinal_cord": 0.045,
    "submandibular_l": 0.03,
    "submandibular_r": 0.03,
}
AIR = 0.02
NOISE_SD = 0.012
STREAK_AMPLITUDE = 0.5
_STREAK_COUNTS = {"none": (0, 0), "moderate": (1, 2), "severe": (3, 6)}


@dataclass
class PhantomSample:
    image: np.ndarray  # 1 x H x W, values in [0, 1]
    mask: np.ndarray  # H x W uint8 labels
    meta: dict = field(default_factory=dict)

    @property
    def severity(self) -> str:
        return self.meta["artifact_level"]


@dataclass
class DoseGrid:
    dose: np.ndarray
    prescription: float


def _grid(H, W):
    rr, cc = np.mgrid[0:H, 0:W]
    return rr.astype(np.float64), cc.astype(np.float64)


def organ_shapes(seed: int, H: int, W: int, K: int) -> dict[str, dict]:
    """Jittered analytic shape parameters (in pixels) for organs 1..K-1."""
    rng = SplitMix64(seed).child("geometry")
    m = min(H, W)
    shapes = {}
    for name in ORGANS[: K - 1]:
        g = rng.child(name)
        if name == "mandible":
            cy, cx, rmid, thick, a0, a1 = _ARC
            jit = g.uniform(5, -1.0, 1.0)
            shapes[name] = {
                "kind": "arc",
                "cy": (cy + 0.02 * jit[0]) * H,
                "cx": (cx + 0.02 * jit[1]) * W,
                "r_mid": rmid * m * (1 + 0.05 * jit[2]),
                "thickness": thick * m,
                "a0": a0 + 0.1 * jit[3],
                "a1": a1 + 0.1 * jit[4],
            }
        else:
            cy, cx, ry, rx = _ELLIPSES[name]
            jit = g.uniform(4, -1.0, 1.0)
            shapes[name] = {
                "kind": "ellipse",
                "cy": (cy + 0.02 * jit[0]) * H,
                "cx": (cx + 0.02 * jit[1]) * W,
                "ry": ry * H * (1 + 0.1 * jit[2]),
                "rx": rx * W * (1 + 0.1 * jit[3]),
            }
    return shapes


def inside_shape(shape: dict, rr: np.ndarray, cc: np.ndarray) -> np.ndarray:
    """Analytic membership of pixel centers in an organ shape."""
    if shape["kind"] == "ellipse":
        return ((rr - shape["cy"]) / shape["ry"]) ** 2 + ((cc - shape["cx"]) / shape["rx"]) ** 2 <= 1.0
    dy, dx = rr - shape["cy"], cc - shape["cx"]
    r = np.hypot(dy, dx)
    theta = np.arctan2(dy, dx)
    half = shape["thickness"] / 2
    return (np.abs(r - shape["r_mid"]) <= half) & (theta >= shape["a0"]) & (theta <= shape["a1"])


def _bresenham(r0: int, c0: int, r1: int, c1: int):
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dc - dr
    r, c = r0, c0
    while True:
        yield r, c
        if r == r1 and c == c1:
            return
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr


def _streak_layer(rng: SplitMix64, mask: np.ndarray, n: int) -> tuple[np.ndarray, list[dict]]:
    H, W = mask.shape
    layer = np.zeros((H, W))
    labels = [int(v) for v in np.unique(mask) if v > 0]
    lines = []
    span = 2 * max(H, W)
    for _ in range(n):
        if labels:
            lab = labels[rng.integer(0, len(labels))]
            pts = np.argwhere(mask == lab)
            pr, pc = pts[rng.integer(0, len(pts))]
        else:
            pr, pc = rng.integer(0, H), rng.integer(0, W)
        ang = rng.uniform(None, 0.0, math.pi)
        amp = STREAK_AMPLITUDE * rng.sign()
        dr, dc = math.sin(ang) * span, math.cos(ang) * span
        r0, c0 = round(pr - dr), round(pc - dc)
        r1, c1 = round(pr + dr), round(pc + dc)
        line = np.zeros((H, W))
        for r, c in _bresenham(r0, c0, r1, c1):
            if 0 <= r < H and 0 <= c < W:
                line[r, c] = 1.0
        layer += amp * line
        lines.append({"through": (int(pr), int(pc)), "angle": ang, "amplitude": amp})
    blurred = uniform_filter(layer, size=3, mode="constant", cval=0.0)
    return blurred, lines


def generate(
    seed: int,
    H: int = 64,
    W: int = 64,
    K: int = 5,
    artifact_level: str = "none",
    dropout=(),
) -> PhantomSample:
    if K < 2 or K > MAX_LABELS:
        raise ConfigurationError(f"K must lie in [2, {MAX_LABELS}], got {K}")
    if H < 32 or W < 32:
        raise ConfigurationError(f"phantoms need H, W >= 32, got {H}x{W}")
    if artifact_level not in SEVERITIES:
        raise ConfigurationError(f"artifact_level must be one of {SEVERITIES}")
    dropout = tuple(sorted(int(d) for d in dropout))
    if any(not 1 <= d < K for d in dropout):
        raise ConfigurationError(f"dropout labels must lie in [1, {K}), got {dropout}")

    root = SplitMix64(seed)
    rr, cc = _grid(H, W)
    shapes = organ_shapes(seed, H, W, K)
    by, bx, bry, brx = _BODY
    body = ((rr - by * H) / (bry * H)) ** 2 + ((cc - bx * W) / (brx * W)) ** 2 <= 1.0

    mask = np.zeros((H, W), dtype=np.uint8)
    for label, name in enumerate(ORGANS[: K - 1], start=1):
        region = inside_shape(shapes[name], rr, cc) & body & (mask == 0)
        mask[region] = label
    for d in dropout:
        mask[mask == d] = 0

    tone = root.child("intensity")
    base = 0.45 + tone.uniform(None, -0.03, 0.03)
    image = np.where(body, base, AIR)
    for label, name in enumerate(ORGANS[: K - 1], start=1):
        image[mask == label] += _OFFSETS[name] + tone.child(name).uniform(None, -0.005, 0.005)
    image = image + NOISE_SD * root.child("noise").normal(H * W).reshape(H, W)

    lo, hi = _STREAK_COUNTS[artifact_level]
    art = root.child("artifact")
    n_streaks = art.integer(lo, hi + 1) if hi else 0
    streaks, lines = _streak_layer(art, mask, n_streaks)
    image = np.clip(image + streaks, 0.0, 1.0)

    meta = {
        "seed": int(seed),
        "artifact_level": artifact_level,
        "dropout": list(dropout),
        "shapes": shapes,
        "streaks": lines,
        "streak_support": streaks != 0.0,
        "body": body,
    }
    return PhantomSample(image[None].astype(np.float64), mask, meta)


@dataclass(frozen=True)
class DatasetSpec:
    H: int = 64
    W: int = 64
    K: int = 5
    severity: tuple[float, float, float] = (0.7, 0.2, 0.1)
    dropout_rate: float = 0.0


def _stratified_levels(n: int, probs, rng: SplitMix64) -> list[str]:
    raw = [p * n for p in probs]
    counts = [int(math.floor(x)) for x in raw]
    order = sorted(range(len(probs)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    levels = [lvl for lvl, k in zip(SEVERITIES, counts) for _ in range(k)]
    return [levels[i] for i in rng.permutation(n)]


def _seeds(rng: SplitMix64, n: int, taken: set) -> list[int]:
    out = []
    while len(out) < n:
        s = int(rng.u64(1)[0] >> np.uint64(1))
        if s not in taken:
            taken.add(s)
            out.append(s)
    return out


def make_dataset(seed: int, n_train: int, n_test: int, spec: DatasetSpec = DatasetSpec()):
    """Train and test sample lists from disjoint seed streams.

    Severity levels are assigned by largest-remainder rounding of the
    requested proportions, then shuffled.
    """
    if n_train < 1 or n_test < 1:
        raise ConfigurationError(f"n_train and n_test must be >= 1 (got {n_train}, {n_test})")
    if abs(sum(spec.severity) - 1.0) > 1e-9 or min(spec.severity) < 0:
        raise ConfigurationError(f"severity proportions must be nonnegative and sum to 1: {spec.severity}")
    root = SplitMix64(seed)
    taken: set[int] = set()
    splits = []
    for name, n in (("train", n_train), ("test", n_test)):
        rng = root.child(name)
        seeds = _seeds(rng.child("seeds"), n, taken)
        levels = _stratified_levels(n, spec.severity, rng.child("severity"))
        drop_rng = rng.child("dropout")
        samples = []
        for s, lvl in zip(seeds, levels):
            dropped = [k for k in range(1, spec.K) if spec.dropout_rate > 0 and drop_rng.uniform() < spec.dropout_rate]
            samples.append(generate(s, spec.H, spec.W, spec.K, lvl, dropped))
        splits.append(samples)
    return splits[0], splits[1]


def generate_dose(seed: int, mask: np.ndarray, target_label: int, prescription: float = 70.0, falloff: float = 0.08) -> DoseGrid:
    """Radial dose: full prescription within the target radius, Gaussian shoulder outside.

    The shoulder width is ``falloff * min(H, W)`` pixels, jittered by up to
    10% from ``seed``.
    """
    mask = np.asarray(mask)
    pts = np.argwhere(mask == target_label)
    if len(pts) == 0:
        raise ConfigurationError(f"target label {target_label} absent from mask")
    H, W = mask.shape
    cy, cx = pts.mean(axis=0)
    r_target = float(np.max(np.hypot(pts[:, 0] - cy, pts[:, 1] - cx)))
    sigma = falloff * min(H, W) * (1 + 0.1 * SplitMix64(seed).child("dose").uniform(None, -1.0, 1.0))
    rr, cc = _grid(H, W)
    r = np.hypot(rr - cy, cc - cx)
    excess = np.maximum(r - r_target, 0.0)
    dose = prescription * np.exp(-(excess**2) / (2 * sigma**2))
    return DoseGrid(dose, float(prescription))
