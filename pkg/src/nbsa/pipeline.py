"""Command implementations behind the CLI.

Each ``cmd_*`` takes a :class:`RunConfig` and an output directory, writes
``config.lock`` first and returns a small dict describing what it wrote.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import numpy as np

from . import attention as A
from . import backbone, cost, evaluate, io, metrics
from .config import KEYS, RunConfig, parse_lines
from .errors import ConfigurationError, DimensionError
from .phantom import ORGANS, PhantomSample, generate_dose, make_dataset


def _outdir(out) -> Path:
    p = Path(out)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc}") from None
    return p


def write_lock(cfg: RunConfig, out: Path) -> None:
    (out / "config.lock").write_text("\n".join(cfg.lines()) + "\n")


# ---------------------------------------------------------------------------
# dataset on disk


def save_dataset(out: Path, train, test) -> None:
    rows = []
    for split, samples in (("train", train), ("test", test)):
        (out / split).mkdir(exist_ok=True)
        for i, s in enumerate(samples):
            stem = f"{split}/{i:04d}"
            io.write_tns(out / f"{stem}.tns", s.image)
            io.write_msk(out / f"{stem}.msk", s.mask)
            rows.append([stem, s.meta["seed"], s.severity])
    io.write_csv(out / "manifest.csv", ["path", "seed", "severity"], rows)


def load_split(data_dir, split: str) -> list[PhantomSample]:
    root = Path(data_dir)
    manifest = root / "manifest.csv"
    if not manifest.is_file():
        raise ConfigurationError(f"no dataset at {data_dir} (manifest.csv missing); run gen first")
    out = []
    for row in io.read_csv(manifest):
        if not row["path"].startswith(split + "/"):
            continue
        try:
            image = io.read_tns(root / f"{row['path']}.tns")
            mask = io.read_msk(root / f"{row['path']}.msk")
        except FileNotFoundError as exc:
            raise ConfigurationError(f"dataset file missing: {exc.filename}") from None
        meta = {"seed": int(row["seed"]), "artifact_level": row["severity"], "sample_id": row["path"]}
        out.append(PhantomSample(image, mask, meta))
    if not out:
        raise ConfigurationError(f"dataset at {data_dir} has no {split} samples")
    return out


def cmd_gen(cfg: RunConfig, out) -> dict:
    out = _outdir(out)
    write_lock(cfg, out)
    train, test = make_dataset(cfg["seed"], cfg["n_train"], cfg["n_test"], cfg.dataset_spec())
    save_dataset(out, train, test)
    return {"n_train": len(train), "n_test": len(test), "dir": str(out)}


# ---------------------------------------------------------------------------
# models


def build_model(cfg: RunConfig) -> backbone.TinyUnet:
    """Model from config; an inexact tiling error names the nearest valid map sizes."""
    mcfg = cfg.model()
    try:
        return backbone.build(mcfg, cfg["train_seed"])
    except ConfigurationError as exc:
        att = mcfg.attention
        if att.variant != "nbsa" or "tiling" not in str(exc):
            raise
        hints = []
        for axis, n in (("H", mcfg.H), ("W", mcfg.W)):
            sizes = [v for v in A.nearest_valid_sizes(n, att.B, att.s, multiple=4) if v is not None]
            if sizes:
                hints.append(f"nearest valid {axis}: {' or '.join(map(str, dict.fromkeys(sizes)))}")
            else:
                hints.append(f"no multiple-of-4 {axis} tiles B={att.B}, s={att.s}; strides that tile {axis}={n}: {A.valid_strides(n, att.B)}")
        raise ConfigurationError(f"{exc}; {'; '.join(hints)}") from None


def checkpoint_params(model: backbone.TinyUnet) -> dict[str, np.ndarray]:
    return {k: v.data for k, v in model.parameters().items()}


def load_model(path) -> tuple[backbone.TinyUnet, RunConfig]:
    """Rebuild a model from a checkpoint's embedded config and load its weights."""
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"checkpoint {path} not found")
    lines, params = io.read_checkpoint(p)
    raw = {k: v[1] for k, v in KEYS.items()}
    raw.update(parse_lines(lines))
    ccfg = RunConfig(raw)
    model = backbone.build(ccfg.model(), ccfg["train_seed"])
    own = model.parameters()
    if set(own) != set(params):
        raise ConfigurationError(f"checkpoint parameters {sorted(params)} do not match the model")
    for name, t in own.items():
        if t.shape != params[name].shape:
            raise DimensionError(f"checkpoint entry {name} has shape {params[name].shape}, model expects {t.shape}")
        t.data[...] = params[name]
    return model, ccfg


def _check_shape(samples, cfg):
    H, W = samples[0].mask.shape
    if (H, W) != (cfg["H"], cfg["W"]):
        raise ConfigurationError(f"dataset is {H}x{W} but config says H={cfg['H']}, W={cfg['W']}")


def cmd_train(cfg: RunConfig, out, log=None) -> dict:
    out = _outdir(out)
    write_lock(cfg, out)
    train = load_split(cfg["data_dir"], "train")
    _check_shape(train, cfg)
    model = build_model(cfg)

    def cb(epoch, loss):
        if log:
            log(f"epoch {epoch + 1}/{cfg['epochs']} loss {loss:.6f}")

    res = backbone.train(model, train, cfg.train(), callback=cb)
    io.write_checkpoint(out / "model.ckpt", cfg.lines(), checkpoint_params(model))
    io.write_csv(out / "loss.csv", ["epoch", "loss"], [[i + 1, repr(v)] for i, v in enumerate(res.losses)])
    return {"checkpoint": str(out / "model.ckpt"), "final_loss": res.losses[-1] if res.losses else None}


# ---------------------------------------------------------------------------
# evaluation


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def cmd_eval(cfg: RunConfig, out) -> dict:
    out = _outdir(out)
    write_lock(cfg, out)
    test = load_split(cfg["data_dir"], "test")
    if cfg["oracle"]:
        preds = [s.mask for s in test]
        K = cfg["K"]
    else:
        if not cfg["checkpoint"]:
            raise ConfigurationError("eval needs checkpoint=<path> (or oracle=true)")
        model, ccfg = load_model(cfg["checkpoint"])
        _check_shape(test, ccfg)
        preds = [backbone.predict_mask(model, s.image) for s in test]
        K = ccfg["K"]
    target = cfg["dose_target"] if 0 < cfg["dose_target"] < K else None
    rows, mean_doses = evaluate.evaluate_samples(test, preds, K, cfg["tau"], cfg["spacing"], target, cfg["prescription"])
    io.write_csv(out / "metrics.csv", evaluate.COLUMNS, [[_fmt(r[c]) for c in evaluate.COLUMNS] for r in rows])
    severity = {s.meta["sample_id"]: s.severity for s in test}
    summary = evaluate.summarize(rows, severity, mean_doses, cfg["tau"])
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if cfg["dump_dvh"] and target is not None:
        _dump_dvh(out / "dvh", test, preds, K, target, cfg)
    return {"mean_dsc": summary["dsc"]["mean"], "rows": len(rows)}


def _dump_dvh(root: Path, samples, preds, K, target, cfg) -> None:
    root.mkdir(exist_ok=True)
    for s, pred in zip(samples, preds):
        if not np.any(s.mask == target):
            continue
        dose = generate_dose(s.meta["seed"], s.mask, target, cfg["prescription"]).dose
        sid = s.meta["sample_id"].replace("/", "_")
        for label in range(1, K):
            for tag, m in (("manual", s.mask == label), ("auto", pred == label)):
                if not m.any():
                    continue
                c = metrics.dvh(dose, m, cfg["dvh_bin"])
                rows = [[repr(float(e)), repr(float(f))] for e, f in zip(c.dose_edges, c.cumulative_fraction)]
                io.write_csv(root / f"{sid}_{ORGANS[label - 1]}_{tag}.csv", ["dose_gy", "volume_fraction"], rows)


# ---------------------------------------------------------------------------
# cost benchmark

BENCH_COLUMNS = ["H", "W", "C", "d", "B", "s", "layers", "variant", "blocks", "projections", "logits", "softmax",
                 "weighting", "output_projection", "residual", "total", "cca_total", "full_over_nbsa", "wall_ms"]


def _time_forward(att: A.AttentionConfig, C, d, H, W, seed=0) -> float:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(C, H, W))
    layers = [A.init_attention_weights(C, d, rng) for _ in range(att.n_layers)]
    sched = att.schedule(H, W)
    t0 = time.perf_counter()
    A.attention_stack(x, layers, sched, att.variant)
    return 1000.0 * (time.perf_counter() - t0)


def bench_rows(cfg: RunConfig, warn=None) -> list[dict]:
    C, d, n = cfg["bench_C"], cfg["bench_d"], cfg["bench_layers"]
    limit = cfg["bench_time_limit"]
    rows = []
    for size in cfg["bench_sizes"]:
        full_cfg = A.AttentionConfig(variant="full_sa", n_layers=n)
        full = cost.count_flops(full_cfg, C, d, size, size)
        cca = cost.cca_flops(size, size, d, n)
        wall = _time_forward(full_cfg, C, d, size, size) if size**4 <= limit else None
        rows.append({"H": size, "W": size, "C": C, "d": d, "B": "", "s": "", "layers": n, "variant": "full_sa",
                     **full.as_row(), "cca_total": cca, "full_over_nbsa": 1.0, "wall_ms": wall})
        for B in cfg["bench_B"]:
            for s in cfg["bench_s"]:
                try:
                    att = A.AttentionConfig(variant="nbsa", n_layers=n, B=B, s=s, overlap=s < B)
                    led = cost.count_flops(att, C, d, size, size)
                except ConfigurationError as exc:
                    if warn:
                        warn(f"skipping H=W={size}, B={B}, s={s}: {exc}")
                    continue
                entries = led.blocks * (B * B) ** 2
                wall = _time_forward(att, C, d, size, size) if entries <= limit else None
                rows.append({"H": size, "W": size, "C": C, "d": d, "B": B, "s": s, "layers": n, "variant": "nbsa",
                             **led.as_row(), "cca_total": cca, "full_over_nbsa": full.total / led.total, "wall_ms": wall})
    return rows


def cmd_bench(cfg: RunConfig, out, warn=None) -> dict:
    out = _outdir(out)
    write_lock(cfg, out)
    rows = bench_rows(cfg, warn)
    io.write_csv(out / "bench.csv", BENCH_COLUMNS, [[_fmt(r[c]) for c in BENCH_COLUMNS] for r in rows])
    return {"rows": len(rows)}


# ---------------------------------------------------------------------------
# ablation grid


def ablation_stride(B: int, size: int) -> int:
    """Overlap stride closest to 2B/3 (ties to the smaller) that tiles ``size`` exactly."""
    ok = [s for s in range(1, B) if size >= B and (size - B) % s == 0]
    if not ok:
        raise ConfigurationError(f"no overlapping stride tiles size {size} with B={B}")
    return min(ok, key=lambda s: (abs(s - 2 * B / 3), s))


ABLATION_COLUMNS = ["layers", "placement", "B", "s", "overlap", "mean_dsc", "severe_dsc", "final_loss", "seconds"]


def _with(cfg: RunConfig, **kv) -> RunConfig:
    raw = dict(cfg.raw)
    raw.update({k: str(v).lower() if isinstance(v, bool) else str(v) for k, v in kv.items()})
    return RunConfig(raw)


def ablation_grid(cfg: RunConfig, log=None) -> tuple[list[dict], dict]:
    size = cfg["ablate_size"]
    spec_cfg = _with(cfg, H=size, W=size)
    train, test = make_dataset(cfg["seed"], cfg["ablate_n_train"], cfg["ablate_n_test"], spec_cfg.dataset_spec())
    severity = {i: s.severity for i, s in enumerate(test)}
    rows = []
    for n_layers in cfg["ablate_layers"]:
        for placement in cfg["ablate_placements"]:
            for B in cfg["ablate_B"]:
                for overlap in (True, False):
                    s = ablation_stride(B, size) if overlap else B
                    run = _with(spec_cfg, variant="nbsa", n_layers=n_layers, placement=placement, B=B, s=s,
                                overlap=overlap, epochs=cfg["ablate_epochs"])
                    t0 = time.perf_counter()
                    model = build_model(run)
                    res = backbone.train(model, train, run.train())
                    preds = [backbone.predict_mask(model, x.image) for x in test]
                    mrows, _ = evaluate.evaluate_samples(test, preds, run["K"])
                    summ = evaluate.summarize(mrows, severity)
                    row = {"layers": n_layers, "placement": placement, "B": B, "s": s, "overlap": overlap,
                           "mean_dsc": summ["dsc"]["mean"], "severe_dsc": summ["strata"]["severe"]["dsc"]["mean"],
                           "final_loss": res.losses[-1] if res.losses else None,
                           "seconds": round(time.perf_counter() - t0, 2)}
                    rows.append(row)
                    if log:
                        log(f"layers={n_layers} placement={placement} B={B} s={s} overlap={overlap} "
                            f"mean_dsc={row['mean_dsc']:.4f}")
    return rows, ablation_summary(rows)


def ablation_summary(rows: list[dict]) -> dict:
    """Overlap vs non-overlap mean DSC at each block side, averaged over the rest of the grid."""
    per_B = {}
    for B in dict.fromkeys(r["B"] for r in rows):
        ov = [r["mean_dsc"] for r in rows if r["B"] == B and r["overlap"]]
        no = [r["mean_dsc"] for r in rows if r["B"] == B and not r["overlap"]]
        if ov and no:
            per_B[str(B)] = {"overlap": float(np.mean(ov)), "non_overlap": float(np.mean(no)),
                             "overlap_wins": bool(np.mean(ov) >= np.mean(no))}
    wins = sum(v["overlap_wins"] for v in per_B.values())
    return {"per_B": per_B, "overlap_wins": wins, "compared": len(per_B), "holds": wins >= 2}


def cmd_ablate(cfg: RunConfig, out, log=None) -> dict:
    out = _outdir(out)
    write_lock(cfg, out)
    rows, summary = ablation_grid(cfg, log)
    io.write_csv(out / "ablation.csv", ABLATION_COLUMNS, [[_fmt(r[c]) for c in ABLATION_COLUMNS] for r in rows])
    (out / "ablation_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# ---------------------------------------------------------------------------
# attention maps


def cmd_attnmap(cfg: RunConfig, out) -> dict:
    out = _outdir(out)
    write_lock(cfg, out)
    if not cfg["checkpoint"]:
        raise ConfigurationError("attnmap needs checkpoint=<path>")
    model, ccfg = load_model(cfg["checkpoint"])
    if ccfg["variant"] != "nbsa":
        raise ConfigurationError(f"attention maps need an nbsa checkpoint, got variant={ccfg['variant']}")
    test = load_split(cfg["data_dir"], "test")
    if not 0 <= cfg["sample_index"] < len(test):
        raise ConfigurationError(f"sample_index {cfg['sample_index']} outside 0..{len(test) - 1}")
    sample = test[cfg["sample_index"]]
    q = (cfg["query_row"], cfg["query_col"])
    io.write_pgm(out / "image.pgm", np.rint(np.clip(sample.image[0], 0, 1) * 255).astype(np.uint8))
    x = model.features(sample.image)
    written = []
    for i, w in enumerate(model.attn):
        name = f"attn_layer{i + 1}.pgm"
        io.write_pgm(out / name, A.export_attention_map(x, w, model.schedule, q))
        written.append(name)
        x = A.nbsa_layer(x, w, model.schedule, average=ccfg["average"])
    return {"maps": written, "query": q}


def echo(msg: str) -> None:
    print(msg, file=sys.stderr)
