"""Per-sample metric rows and their summaries."""

from __future__ import annotations

import math

import numpy as np

from . import metrics
from .errors import ConfigurationError, UndefinedMetricError
from .phantom import ORGANS, SEVERITIES, generate_dose

COLUMNS = [
    "sample_id",
    "structure",
    "dsc",
    "sdsc@tau",
    "hd95",
    "apl",
    "tpl",
    "car",
    "mean_add",
    "max_add",
    "dv5",
    "dv30",
]
NUMERIC = COLUMNS[2:]


def _safe(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except UndefinedMetricError:
        return None


def sample_rows(sample_id, truth: np.ndarray, pred: np.ndarray, K: int, dose=None, tau=1.0, spacing=1.0) -> list[dict]:
    rows = []
    for label in range(1, K):
        ref, auto = truth == label, pred == label
        row = {"sample_id": sample_id, "structure": ORGANS[label - 1], "dsc": metrics.dsc(ref, auto)}
        row["sdsc@tau"] = _safe(metrics.surface_dsc, ref, auto, tau=tau, spacing=spacing)
        row["hd95"] = _safe(metrics.hd95, ref, auto, spacing=spacing)
        car = _safe(metrics.apl_tpl_car, ref, auto)
        row["apl"], row["tpl"], row["car"] = car if car is not None else (None, None, None)
        dm = _safe(metrics.dose_metrics, dose, ref, auto) if dose is not None else None
        row["mean_add"], row["max_add"], row["dv5"], row["dv30"] = dm if dm is not None else (None,) * 4
        rows.append(row)
    return rows


def evaluate_samples(samples, predictions, K: int, tau=1.0, spacing=1.0, dose_target=None, prescription=70.0):
    """Metric rows for every (sample, organ) pair, in sample order.

    Returns ``(rows, mean_doses)`` where ``mean_doses[structure]`` is a list of
    ``(manual, auto)`` mean-dose pairs for rank correlation.
    """
    rows, mean_doses = [], {}
    for i, (sample, pred) in enumerate(zip(samples, predictions)):
        dose = None
        if dose_target is not None and np.any(sample.mask == dose_target):
            dose = generate_dose(sample.meta.get("seed", i), sample.mask, dose_target, prescription).dose
        sid = sample.meta.get("sample_id", i)
        rows.extend(sample_rows(sid, sample.mask, pred, K, dose, tau, spacing))
        if dose is not None:
            for label in range(1, K):
                ref, auto = sample.mask == label, pred == label
                if ref.any() and auto.any():
                    mean_doses.setdefault(ORGANS[label - 1], []).append((float(dose[ref].mean()), float(dose[auto].mean())))
    return rows, mean_doses


def _stats(values) -> dict:
    v = [float(x) for x in values if x is not None and x != "" and not (isinstance(x, float) and math.isnan(x))]
    if not v:
        return {"mean": None, "sd": None, "n": 0}
    sd = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
    return {"mean": float(np.mean(v)), "sd": sd, "n": len(v)}


def _organ_table(rows) -> dict:
    out = {}
    for name in dict.fromkeys(r["structure"] for r in rows):
        sel = [r for r in rows if r["structure"] == name]
        out[name] = {c: _stats(r[c] for r in sel) for c in NUMERIC}
    return out


def summarize(rows: list[dict], severity_of: dict, mean_doses: dict | None = None, tau: float = 1.0) -> dict:
    """Mean and sd per organ, overall and per artifact stratum."""
    strata = {}
    for lvl in SEVERITIES:
        sel = [r for r in rows if severity_of.get(r["sample_id"]) == lvl]
        strata[lvl] = {"n_samples": len({r["sample_id"] for r in sel}), "organs": _organ_table(sel), "dsc": _stats(r["dsc"] for r in sel)}
    corr = {}
    for name, pairs in (mean_doses or {}).items():
        try:
            corr[name] = metrics.spearman([p[0] for p in pairs], [p[1] for p in pairs])
        except (UndefinedMetricError, ValueError):
            corr[name] = None
    return {
        "n_samples": len({r["sample_id"] for r in rows}),
        "tau": tau,
        "dsc": _stats(r["dsc"] for r in rows),
        "organs": _organ_table(rows),
        "strata": strata,
        "spearman_mean_dose": corr,
    }


def mean_dsc(rows) -> float:
    if not rows:
        raise ConfigurationError("no metric rows")
    return float(np.mean([r["dsc"] for r in rows]))
