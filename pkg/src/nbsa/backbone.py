"""Tiny two-level U-net with an optional attention insertion point."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, AttentionWeights, BlockSchedule, attention_stack, init_attention_weights
from .errors import ConfigurationError, DimensionError
from .tensor import AdamState, Tensor

CONV_BLOCKS = ("enc1", "enc2", "mid", "dec2", "dec1")


@dataclass(frozen=True)
class ModelConfig:
    K: int = 5
    base_channels: int = 8
    H: int = 64
    W: int = 64
    in_channels: int = 1
    window_center: float = 0.45
    window_width: float = 0.1
    attention: AttentionConfig = field(default_factory=lambda: AttentionConfig(variant="none"))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    epochs: int = 20
    batch_size: int = 1
    seed: int = 0
    loss: str = "cross_entropy"

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigurationError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if self.loss != "cross_entropy":
            raise ConfigurationError(f"unsupported loss {self.loss!r}")


def _conv_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int, int]]:
    c, K = cfg.base_channels, cfg.K
    return {
        "enc1": (c, cfg.in_channels, 3),
        "enc2": (2 * c, c, 3),
        "mid": (4 * c, 2 * c, 3),
        "dec2": (2 * c, 4 * c + 2 * c, 3),
        "dec1": (c, 2 * c + c, 3),
        "head": (K, c, 1),
    }


def conv_parameter_count(cfg: ModelConfig) -> int:
    return sum(co * ci * k * k + co for co, ci, k in _conv_shapes(cfg).values())


def attention_parameter_count(cfg: ModelConfig) -> int:
    att = cfg.attention
    if att.variant == "none":
        return 0
    C = cfg.base_channels if att.placement == "penultimate" else cfg.K
    d = att.width(C)
    per_layer = 3 * C * d + d * C
    if att.relative:
        L = att.B * att.B if att.variant == "nbsa" else cfg.H * cfg.W
        per_layer += (2 * L - 1) * d
    return att.n_layers * per_layer


class TinyUnet:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor], attn: list[AttentionWeights], sched: BlockSchedule | None):
        self.config = config
        self.conv = params
        self.attn = attn
        self.schedule = sched

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.conv)
        for i, w in enumerate(self.attn):
            for k, v in w.parameters().items():
                out[f"attn{i}.{k}"] = v
        return out

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def _block(self, x, name):
        return T.relu(T.conv2d(x, self.conv[f"{name}.w"], self.conv[f"{name}.b"]))

    def _attend(self, x):
        att = self.config.attention
        return attention_stack(x, self.attn, self.schedule, att.variant, average=att.average)

    def features(self, image) -> Tensor:
        """Feature map entering the first attention layer (decoder output or head logits)."""
        x = T.as_tensor(image)
        cfg = self.config
        if x.data.ndim != 3 or x.shape[0] != cfg.in_channels:
            raise DimensionError(f"expected {cfg.in_channels} x H x W image, got {x.shape}")
        if x.shape[1:] != (cfg.H, cfg.W):
            raise DimensionError(f"model built for {cfg.H}x{cfg.W}, got {x.shape[1:]}")
        x = T.scale(T.add(x, Tensor(np.full(x.shape, -cfg.window_center))), 1.0 / cfg.window_width)
        e1 = self._block(x, "enc1")
        e2 = self._block(T.maxpool2(e1), "enc2")
        m = self._block(T.maxpool2(e2), "mid")
        d2 = self._block(T.concat([T.upsample2(m), e2]), "dec2")
        d1 = self._block(T.concat([T.upsample2(d2), e1]), "dec1")
        if cfg.attention.placement == "last":
            return T.conv2d(d1, self.conv["head.w"], self.conv["head.b"])
        return d1

    def forward(self, image) -> Tensor:
        att = self.config.attention
        f = self.features(image)
        if att.placement == "last":
            return self._attend(f) if att.variant != "none" else f
        if att.variant != "none":
            f = self._attend(f)
        return T.conv2d(f, self.conv["head.w"], self.conv["head.b"])

    __call__ = forward


def build(config: ModelConfig, seed: int = 0) -> TinyUnet:
    """Kaiming fan-in normal init for convolutions, zero biases, seeded."""
    if config.H % 4 or config.W % 4:
        raise ConfigurationError(f"H and W must be divisible by 4, got {config.H}x{config.W}")
    att = config.attention
    sched = att.schedule(config.H, config.W)
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, (co, ci, k) in _conv_shapes(config).items():
        fan_in = ci * k * k
        params[f"{name}.w"] = Tensor(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(co, ci, k, k)), requires_grad=True)
        params[f"{name}.b"] = Tensor(np.zeros(co), requires_grad=True)
    layers = []
    if att.variant != "none":
        C = config.base_channels if att.placement == "penultimate" else config.K
        L = None
        if att.relative:
            L = sched.block_positions if sched is not None else config.H * config.W
        layers = [init_attention_weights(C, att.width(C), rng, L) for _ in range(att.n_layers)]
    return TinyUnet(config, params, layers, sched)


def forward(model: TinyUnet, image) -> Tensor:
    return model.forward(image)


def predict_mask(model: TinyUnet, image) -> np.ndarray:
    """Per-pixel argmax; ties go to the lower class index."""
    return logits_to_mask(model.forward(image).data)


def logits_to_mask(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=0).astype(np.uint8)


@dataclass
class TrainResult:
    model: TinyUnet
    losses: list[float]
    state: AdamState


def _pairs(dataset):
    out = []
    for item in dataset:
        if hasattr(item, "image"):
            out.append((item.image, item.mask))
        else:
            out.append((item[0], item[1]))
    return out


def train(model: TinyUnet, dataset, config: TrainConfig, callback=None) -> TrainResult:
    """ADAM on pixel-wise cross entropy; returns the per-epoch mean loss curve.

    ``callback(epoch, loss)`` is invoked after each epoch.
    """
    data = _pairs(dataset)
    if not data:
        raise ConfigurationError("training dataset is empty")
    K = model.config.K
    for _, m in data:
        if np.max(m) >= K:
            raise ConfigurationError(f"mask labels must be < K={K}")
    rng = np.random.default_rng(config.seed)
    names = list(model.parameters())
    params = [model.parameters()[n] for n in names]
    state = AdamState(lr=config.lr)
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            model.zero_grad()
            for i in batch:
                img, msk = data[i]
                loss = T.softmax_cross_entropy(model.forward(img), msk)
                total += loss.item()
                T.backward(T.scale(loss, 1.0 / len(batch)))
            T.adam_step(params, [p.grad for p in params], state)
        losses.append(total / len(data))
        if callback is not None:
            callback(epoch, losses[-1])
    return TrainResult(model, losses, state)
