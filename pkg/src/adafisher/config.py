"""Run configuration: strict JSON schema, model building, dataset resolution."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import load_csv, load_idx, synth_dataset
from .errors import ConfigError
from .nn import (Activation, BatchNorm, Conv2d, Dense, Flatten, LayerNorm,
                 MaxPool2d, Model)
from .tensor import Rng

_TOP_KEYS = {"model", "dataset", "optimizer", "kf", "schedule", "epochs",
             "batch_size", "seed", "workers", "ablations", "out_dir",
             "track_first_layer"}


@dataclass
class RunConfig:
    model: dict
    dataset: dict
    optimizer: dict
    kf: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=lambda: {"type": "constant"})
    epochs: int = 1
    batch_size: int = 32
    seed: int = 0
    workers: int = 1
    ablations: dict = field(default_factory=dict)
    out_dir: str = "runs"
    track_first_layer: bool = False

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for required in ("model", "dataset", "optimizer"):
            if required not in raw:
                raise ConfigError(f"missing config key {required!r}")
        cfg = cls(**raw)
        if cfg.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if cfg.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if cfg.workers < 1:
            raise ConfigError("workers must be >= 1")
        if "name" not in cfg.optimizer:
            raise ConfigError("optimizer config needs a 'name'")
        src = cfg.dataset.get("source")
        if src is None:
            raise ConfigError("dataset config needs a 'source'")
        for key in ("images", "labels", "path"):
            p = cfg.dataset.get(key)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"dataset file does not exist: {p}")
        return cfg

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)


def build_model(model_spec: dict, rng: Rng) -> Model:
    spec = dict(model_spec)
    layer_specs = spec.pop("layers", None)
    loss = spec.pop("loss", "cross_entropy")
    if spec:
        raise ConfigError(f"unknown model keys: {sorted(spec)}")
    if not layer_specs:
        raise ConfigError("model needs a non-empty 'layers' list")
    layers = []
    for ls in layer_specs:
        ls = dict(ls)
        kind = ls.pop("kind", None)
        try:
            if kind == "dense":
                layers.append(Dense(ls.pop("in"), ls.pop("out"), bias=ls.pop("bias", True)))
            elif kind == "conv2d":
                layers.append(Conv2d(ls.pop("in"), ls.pop("out"),
                                     tuple(ls.pop("kernel")),
                                     tuple(ls.pop("stride", (1, 1))),
                                     tuple(ls.pop("pad", (0, 0))),
                                     bias=ls.pop("bias", True)))
            elif kind == "batchnorm":
                layers.append(BatchNorm(ls.pop("dim"), eps=ls.pop("eps", 1e-5),
                                        momentum=ls.pop("momentum", 0.1)))
            elif kind == "layernorm":
                layers.append(LayerNorm(ls.pop("dim"), eps=ls.pop("eps", 1e-5)))
            elif kind == "activation":
                layers.append(Activation(ls.pop("name")))
            elif kind in ("relu", "tanh", "identity"):
                layers.append(Activation(kind))
            elif kind == "flatten":
                layers.append(Flatten())
            elif kind == "maxpool":
                layers.append(MaxPool2d(tuple(ls.pop("kernel")),
                                        tuple(ls.pop("stride")) if "stride" in ls else None))
            else:
                raise ConfigError(f"unknown layer kind {kind!r}")
        except KeyError as exc:
            raise ConfigError(f"layer {kind!r} missing field {exc}") from exc
        if ls:
            raise ConfigError(f"unknown fields for layer {kind!r}: {sorted(ls)}")
    return Model(layers, loss=loss).init(rng)


def resolve_dataset(dataset_spec: dict, seed: int):
    """Materialize (x, y) from a dataset config block."""
    spec = dict(dataset_spec)
    source = spec.pop("source")
    limit = spec.pop("limit", None)
    if source == "idx":
        images, labels = spec.pop("images"), spec.pop("labels")
        if spec:
            raise ConfigError(f"unknown dataset keys: {sorted(spec)}")
        x = load_idx(images, expect="images")
        y = load_idx(labels, expect="labels")
    elif source == "csv":
        path, schema = spec.pop("path"), spec.pop("schema", None)
        if spec:
            raise ConfigError(f"unknown dataset keys: {sorted(spec)}")
        x, y = load_csv(path, schema)
    elif source in ("blobs", "moons", "quadratic"):
        n = spec.pop("n", None)
        if n is None:
            raise ConfigError("synthetic dataset needs 'n'")
        x, y = synth_dataset(source, int(n), seed=spec.pop("seed", seed), **spec)
    else:
        raise ConfigError(f"unknown dataset source {source!r}")
    if limit is not None:
        x, y = x[: int(limit)], y[: int(limit)]
    return np.asarray(x, dtype=np.float64), y
