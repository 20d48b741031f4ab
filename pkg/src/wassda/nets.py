"""The three players: feature extractor, label classifier, domain critic.

The extractor is a small 1-D conv stack over the feature vector treated as a
single-channel sequence: with the default geometry a 38-feature input
contracts 38 -> 17 -> 8 -> 2 -> 1 positions (32 channels at the end), is
flattened to 32, and passes through two dense layers that keep the output at
32 dimensions.  That chain is checked at construction time, not at first use.

The critic ends in a bare linear unit — its output is a score, not a
probability — and is the only network whose graph must stay inside the
second-order op set, because the gradient penalty differentiates through
its backward pass.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from .tensor import (
    ParamStore,
    ShapeError,
    Tensor,
    conv1d,
    matmul,
    maxpool1d,
    relu,
    reshape,
    sigmoid,
)

PENALTY_POINTS = ("input", "hidden")


@dataclass(frozen=True)
class ArchConfig:
    in_features: int = 38
    conv1_channels: int = 16
    conv2_channels: int = 32
    conv_kernel: int = 6
    conv_stride: int = 2
    pool_window: int = 2
    pool_stride: int = 2
    fc_hidden: int = 64
    feature_dim: int = 32
    clf_hidden: int = 16
    critic_hidden: tuple[int, int] = (64, 32)
    penalty_point: str = "input"  # where the critic's gradient penalty attaches

    def __post_init__(self):
        if self.penalty_point not in PENALTY_POINTS:
            raise ValueError(f"penalty_point must be one of {PENALTY_POINTS}")


def _out_len(length: int, window: int, stride: int, layer: str) -> int:
    if length < window:
        raise ShapeError(
            f"layer {layer}: input length {length} shorter than window {window}; "
            "the conv/pool stack does not fit this input size")
    return (length - window) // stride + 1


def feature_chain(cfg: ArchConfig) -> list[int]:
    """Sequence lengths through conv1/pool1/conv2/pool2 for this config."""
    l0 = cfg.in_features
    l1 = _out_len(l0, cfg.conv_kernel, cfg.conv_stride, "conv1")
    l2 = _out_len(l1, cfg.pool_window, cfg.pool_stride, "pool1")
    l3 = _out_len(l2, cfg.conv_kernel, cfg.conv_stride, "conv2")
    l4 = _out_len(l3, cfg.pool_window, cfg.pool_stride, "pool2")
    return [l0, l1, l2, l3, l4]


def _he(rng, fan_in, shape):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def _xavier(rng, fan_in, fan_out, shape):
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)


class FeatureExtractor:
    """Conv-pool-conv-pool-fc-fc encoder mapping raw rows to latent features."""

    def __init__(self, cfg: ArchConfig, store: ParamStore, rng=None, zero_init=False):
        self.cfg = cfg
        chain = feature_chain(cfg)
        self.flat_dim = cfg.conv2_channels * chain[4]
        self.chain = chain

        def param(name, shape, fan_in, fan_out=None, kind="he"):
            if zero_init:
                data = np.zeros(shape)
            elif kind == "he":
                data = _he(rng, fan_in, shape)
            else:
                data = _xavier(rng, fan_in, fan_out, shape)
            return store.add(f"gf.{name}", Tensor(data))

        k, s = cfg.conv_kernel, cfg.conv_stride
        self.conv1_w = param("conv1_w", (cfg.conv1_channels, 1, k), fan_in=k)
        self.conv1_b = store.add("gf.conv1_b", Tensor(np.zeros(cfg.conv1_channels)))
        self.conv2_w = param("conv2_w", (cfg.conv2_channels, cfg.conv1_channels, k),
                             fan_in=cfg.conv1_channels * k)
        self.conv2_b = store.add("gf.conv2_b", Tensor(np.zeros(cfg.conv2_channels)))
        self.fc1_w = param("fc1_w", (self.flat_dim, cfg.fc_hidden), fan_in=self.flat_dim)
        self.fc1_b = store.add("gf.fc1_b", Tensor(np.zeros(cfg.fc_hidden)))
        self.fc2_w = param("fc2_w", (cfg.fc_hidden, cfg.feature_dim),
                           fan_in=cfg.fc_hidden, fan_out=cfg.feature_dim, kind="xavier")
        self.fc2_b = store.add("gf.fc2_b", Tensor(np.zeros(cfg.feature_dim)))
        self.stride = s

    def forward(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 2 or x.shape[1] != self.cfg.in_features:
            raise ShapeError(
                f"extract_features: expected (n, {self.cfg.in_features}) input, "
                f"got {x.shape}")
        n = x.shape[0]
        h = reshape(x, (n, 1, self.cfg.in_features))
        h = relu(conv1d(h, self.conv1_w, self.conv1_b, stride=self.stride))
        h = maxpool1d(h, self.cfg.pool_window, self.cfg.pool_stride)
        h = relu(conv1d(h, self.conv2_w, self.conv2_b, stride=self.stride))
        h = maxpool1d(h, self.cfg.pool_window, self.cfg.pool_stride)
        h = reshape(h, (n, self.flat_dim))
        h = relu(matmul(h, self.fc1_w) + self.fc1_b)
        return matmul(h, self.fc2_w) + self.fc2_b


class LabelClassifier:
    """Dense head emitting default probabilities in (0, 1)."""

    def __init__(self, cfg: ArchConfig, store: ParamStore, rng=None, zero_init=False):
        self.cfg = cfg
        d, h = cfg.feature_dim, cfg.clf_hidden
        w1 = np.zeros((d, h)) if zero_init else _he(rng, d, (d, h))
        w2 = np.zeros((h, 1)) if zero_init else _xavier(rng, h, 1, (h, 1))
        self.w1 = store.add("gy.w1", Tensor(w1))
        self.b1 = store.add("gy.b1", Tensor(np.zeros(h)))
        self.w2 = store.add("gy.w2", Tensor(w2))
        self.b2 = store.add("gy.b2", Tensor(np.zeros(1)))

    def forward(self, features) -> Tensor:
        features = _check_features(features, self.cfg.feature_dim, "classify")
        h = relu(matmul(features, self.w1) + self.b1)
        logits = matmul(h, self.w2) + self.b2
        return reshape(sigmoid(logits), (features.shape[0],))


class DomainCritic:
    """Unbounded per-sample scorer whose mean gap estimates transport cost."""

    def __init__(self, cfg_or_indim, store: ParamStore, rng=None, zero_init=False,
                 prefix: str = "gd"):
        if isinstance(cfg_or_indim, ArchConfig):
            in_dim = cfg_or_indim.feature_dim
            hidden = cfg_or_indim.critic_hidden
            self.penalty_point = cfg_or_indim.penalty_point
        else:
            in_dim = int(cfg_or_indim)
            hidden = (64, 32)
            self.penalty_point = "input"
        h1, h2 = hidden
        self.in_dim = in_dim

        def w(shape, fan_in, fan_out=None, kind="he"):
            if zero_init:
                return np.zeros(shape)
            if kind == "he":
                return _he(rng, fan_in, shape)
            return _xavier(rng, fan_in, fan_out, shape)

        self.w1 = store.add(f"{prefix}.w1", Tensor(w((in_dim, h1), in_dim)))
        self.b1 = store.add(f"{prefix}.b1", Tensor(np.zeros(h1)))
        self.w2 = store.add(f"{prefix}.w2", Tensor(w((h1, h2), h1)))
        self.b2 = store.add(f"{prefix}.b2", Tensor(np.zeros(h2)))
        self.w3 = store.add(f"{prefix}.w3", Tensor(w((h2, 1), h2, 1, kind="xavier")))
        self.b3 = store.add(f"{prefix}.b3", Tensor(np.zeros(1)))
        self.prefix = prefix

    def hidden1(self, features) -> Tensor:
        features = _check_features(features, self.in_dim, "criticize")
        return relu(matmul(features, self.w1) + self.b1)

    def from_hidden1(self, h) -> Tensor:
        h2 = relu(matmul(h, self.w2) + self.b2)
        return reshape(matmul(h2, self.w3) + self.b3, (h.shape[0],))

    def forward(self, features) -> Tensor:
        return self.from_hidden1(self.hidden1(features))

    def penalty_forward(self, rep) -> Tensor:
        """Score from the representation the gradient penalty attaches to."""
        if self.penalty_point == "hidden":
            return self.from_hidden1(rep)
        return self.forward(rep)

    def penalty_rep(self, features) -> np.ndarray:
        """Representation (as raw data) at the configured penalty point."""
        if self.penalty_point == "hidden":
            return self.hidden1(features).data
        return features.data if isinstance(features, Tensor) else np.asarray(features)

    def param_names(self) -> list[str]:
        return [f"{self.prefix}.{k}" for k in ("w1", "b1", "w2", "b2", "w3", "b3")]


def _check_features(features, dim, opname) -> Tensor:
    if not isinstance(features, Tensor):
        features = Tensor(features)
    if features.ndim != 2 or features.shape[1] != dim:
        raise ShapeError(f"{opname}: expected (n, {dim}) features, got {features.shape}")
    return features


@dataclass
class ModelBundle:
    cfg: ArchConfig
    store: ParamStore
    extractor: FeatureExtractor
    classifier: LabelClassifier
    critic: DomainCritic
    seed: int

    def generator_param_names(self) -> list[str]:
        return [n for n in self.store.names() if n.startswith(("gf.", "gy."))]

    def critic_param_names(self) -> list[str]:
        return [n for n in self.store.names() if n.startswith("gd.")]


def init_model(seed: int, config: ArchConfig | dict | None = None,
               zero_init: bool = False) -> ModelBundle:
    """Build the three networks with reproducible initialization.

    ReLU-feeding weights use scale sqrt(2/fan_in), linear outputs use
    sqrt(2/(fan_in+fan_out)), biases start at zero.  ``config`` may be an
    ArchConfig or a dict of field overrides.  ``zero_init`` zeroes every
    weight (useful for the degenerate-output sanity checks).
    """
    if config is None:
        cfg = ArchConfig()
    elif isinstance(config, dict):
        cfg = replace(ArchConfig(), **config)
    else:
        cfg = config
    feature_chain(cfg)  # raises ShapeError naming the offending layer
    rng = np.random.default_rng(seed)
    store = ParamStore()
    extractor = FeatureExtractor(cfg, store, rng, zero_init)
    classifier = LabelClassifier(cfg, store, rng, zero_init)
    critic = DomainCritic(cfg, store, rng, zero_init)
    return ModelBundle(cfg=cfg, store=store, extractor=extractor,
                       classifier=classifier, critic=critic, seed=seed)


def extract_features(model: ModelBundle, batch) -> Tensor:
    return model.extractor.forward(batch)


def classify(model: ModelBundle, features) -> Tensor:
    return model.classifier.forward(features)


def criticize(model: ModelBundle, features) -> Tensor:
    return model.critic.forward(features)


# ---------------------------------------------------------------------------
# checkpoint format: params.bin (raw little-endian float64) + manifest.json
# ---------------------------------------------------------------------------

_MAGIC = "wassda-checkpoint"


def save_checkpoint(model: ModelBundle, directory) -> None:
    """Write a bit-exact, byte-stable checkpoint (no timestamps, sorted keys)."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    blob = bytearray()
    for name in model.store.names():
        data = model.store[name].data
        raw = np.ascontiguousarray(data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(data.shape), "offset": len(blob)})
        blob.extend(raw)
    manifest = {
        "format": _MAGIC,
        "version": 1,
        "seed": model.seed,
        "arch": {**asdict(model.cfg), "critic_hidden": list(model.cfg.critic_hidden)},
        "params": entries,
        "total_bytes": len(blob),
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(os.path.join(directory, "params.bin"), "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(directory) -> ModelBundle:
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != _MAGIC:
        raise ValueError(f"{directory}: not a model checkpoint")
    arch = dict(manifest["arch"])
    arch["critic_hidden"] = tuple(arch["critic_hidden"])
    cfg = ArchConfig(**arch)
    model = init_model(manifest["seed"], cfg, zero_init=True)
    with open(os.path.join(directory, "params.bin"), "rb") as fh:
        blob = fh.read()
    if len(blob) != manifest["total_bytes"]:
        raise ValueError(f"{directory}: params.bin truncated")
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        model.store[entry["name"]].data = arr.reshape(shape).astype(np.float64)
    return model
