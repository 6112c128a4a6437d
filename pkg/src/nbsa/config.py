"""Flat ``key=value`` run configuration shared by every command."""

from __future__ import annotations

from pathlib import Path

from .attention import AttentionConfig
from .backbone import ModelConfig, TrainConfig
from .errors import ConfigurationError
from .phantom import DatasetSpec


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_int(v: str):
    return None if v.strip().lower() in ("auto", "none", "") else int(v)


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _strs(v: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in v.split(",") if x.strip())


# key: (parser, default text, help)
KEYS: dict[str, tuple] = {
    # dataset
    "data_dir": (str, "data", "dataset directory (written by gen, read by train/eval/attnmap)"),
    "seed": (int, "42", "dataset seed"),
    "n_train": (int, "200", "training samples"),
    "n_test": (int, "50", "test samples"),
    "H": (int, "64", "image height"),
    "W": (int, "64", "image width"),
    "K": (int, "5", "number of labels including background"),
    "severity": (_floats, "0.7,0.2,0.1", "proportions of none,moderate,severe artifact levels"),
    "dropout_rate": (float, "0.0", "per-organ probability of a resected (dropped) organ"),
    # model / attention
    "variant": (str, "nbsa", "attention variant: none | full_sa | nbsa"),
    "n_layers": (int, "2", "attention layers (1, 2 or 3)"),
    "B": (int, "8", "memory block side"),
    "s": (_opt_int, "4", "block stride, or auto (2B/3 when overlapping, B otherwise)"),
    "overlap": (_bool, "true", "overlapping memory blocks"),
    "relative": (_bool, "false", "relative position embeddings"),
    "placement": (str, "penultimate", "attention placement: penultimate | last"),
    "d": (_opt_int, "auto", "attention channels (auto = half the channels)"),
    "average": (_bool, "false", "divide block sums by the per-pixel block count"),
    "base_channels": (int, "8", "U-net base channel count"),
    # training
    "train_seed": (int, "1", "seed for initialization and data order"),
    "lr": (float, "2e-4", "ADAM learning rate"),
    "epochs": (int, "20", "training epochs"),
    "batch_size": (int, "1", "samples per ADAM step"),
    "checkpoint": (str, "", "checkpoint path for eval/attnmap (default <out>/model.ckpt of train)"),
    # evaluation
    "tau": (float, "1.0", "surface Dice tolerance (physical units)"),
    "spacing": (float, "1.0", "pixel spacing applied to distances and tau"),
    "oracle": (_bool, "false", "evaluate ground truth against itself (no checkpoint needed)"),
    "dose_target": (int, "4", "label the synthetic dose is centred on"),
    "prescription": (float, "70.0", "prescription dose in Gy"),
    "dvh_bin": (float, "1.0", "DVH bin width in Gy"),
    "dump_dvh": (_bool, "false", "write per-structure DVH CSVs"),
    # bench
    "bench_sizes": (_ints, "252,64", "square map sizes for the cost benchmark"),
    "bench_C": (int, "64", "channels for the cost benchmark"),
    "bench_d": (int, "32", "attention channels for the cost benchmark"),
    "bench_B": (_ints, "36,8", "block sides for the cost benchmark"),
    "bench_s": (_ints, "24,12,4", "strides for the cost benchmark"),
    "bench_layers": (int, "2", "attention layers for the cost benchmark"),
    "bench_time_limit": (int, "20000000", "skip wall-time runs whose attention matrices exceed this many entries"),
    # attention maps
    "query_row": (int, "32", "query pixel row"),
    "query_col": (int, "32", "query pixel column"),
    "sample_index": (int, "0", "test sample used for attention maps"),
    # ablation
    "ablate_layers": (_ints, "1,2,3", "attention layer counts"),
    "ablate_placements": (_strs, "penultimate,last", "attention placements"),
    "ablate_B": (_ints, "6,8,12", "block sides"),
    "ablate_size": (int, "48", "phantom size (must tile exactly for every block side)"),
    "ablate_n_train": (int, "200", "training samples per ablation run"),
    "ablate_n_test": (int, "50", "test samples per ablation run"),
    "ablate_epochs": (int, "20", "epochs per ablation run"),
}


class RunConfig(dict):
    """Parsed settings; ``lines()`` reproduces the effective configuration."""

    def __init__(self, raw: dict[str, str]):
        super().__init__()
        self.raw = dict(raw)
        for key, text in raw.items():
            parser = KEYS[key][0]
            try:
                self[key] = parser(text)
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {key}: {text!r} ({exc})") from None

    def lines(self) -> list[str]:
        return [f"{k}={self.raw[k]}" for k in KEYS]

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(H=self["H"], W=self["W"], K=self["K"], severity=tuple(self["severity"]), dropout_rate=self["dropout_rate"])

    def attention(self) -> AttentionConfig:
        return AttentionConfig(
            variant=self["variant"],
            n_layers=self["n_layers"],
            B=self["B"],
            s=self["s"],
            overlap=self["overlap"],
            relative=self["relative"],
            placement=self["placement"],
            d=self["d"],
            average=self["average"],
        )

    def model(self) -> ModelConfig:
        return ModelConfig(K=self["K"], base_channels=self["base_channels"], H=self["H"], W=self["W"], attention=self.attention())

    def train(self) -> TrainConfig:
        return TrainConfig(lr=self["lr"], epochs=self["epochs"], batch_size=self["batch_size"], seed=self["train_seed"])


def parse_lines(lines) -> dict[str, str]:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected key=value, got {line!r}")
        k, v = (p.strip() for p in line.split("=", 1))
        if k not in KEYS:
            raise ConfigurationError(f"unknown config key {k!r}")
        out[k] = v
    return out


def load(path=None, overrides=()) -> RunConfig:
    raw = {k: v[1] for k, v in KEYS.items()}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file {path} not found")
        raw.update(parse_lines(p.read_text().splitlines()))
    raw.update(parse_lines(overrides))
    return RunConfig(raw)


def help_text() -> str:
    return "\n".join(f"  {k:<18} default {v[1]!r:<14} {v[2]}" for k, v in KEYS.items())
