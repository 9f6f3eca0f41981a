"""Flat key=value experiment configuration.

Files hold one dotted key per line (``baseline.lr = 0.1``); blank lines and
``#`` comments are ignored. Unknown keys are rejected so typos surface with
the offending key named.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .model import ModelSpec
from .trajectory import SamplingSchedule


@dataclass
class DatasetConfig:
    kind: str = "blobs"                    # blobs | digits | idx
    # blobs
    classes: int = 3
    per_class: int = 40
    dim: int = 16
    spread: float = 0.3
    test_per_class: int = 20
    # digits
    train_size: int = 10000
    test_size: int = 2000
    # idx
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    limit: int = 0                         # 0 = keep all
    test_limit: int = 0
    normalize: bool = False


@dataclass
class OptimizerConfig:
    kind: str = "sgd"                      # sgd | adam | psgd | pbfgs
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    epochs: int = 20
    schedule: list[tuple[int, float]] = field(default_factory=list)
    # pbfgs only
    line_search_c: float = 0.4
    line_search_beta: float = 0.55
    max_backtracks: int = 50


@dataclass
class Seeds:
    init: int = 1
    data: int = 2
    noise: int = 3


@dataclass
class ExperimentConfig:
    model: ModelSpec = field(default_factory=lambda: ModelSpec((16, 16, 3)))
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    seeds: Seeds = field(default_factory=Seeds)
    baseline: OptimizerConfig = field(default_factory=OptimizerConfig)
    sampling: SamplingSchedule = field(default_factory=lambda: SamplingSchedule(1, 0, 20))
    include_w0: bool = False
    subspace_d: int = 20
    projected: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(kind="psgd", lr=1.0, epochs=40,
                                                schedule=[(30, 0.1)]))
    noise_fraction: float | None = None
    output_dir: str = "runs/out"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seeds=Seeds(init=seed, data=seed, noise=seed))


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_schedule(raw: str, key: str) -> list[tuple[int, float]]:
    out = []
    if not raw:
        return out
    for part in raw.split(","):
        try:
            epoch, mult = part.split(":")
            out.append((int(epoch), float(mult)))
        except ValueError as e:
            raise ConfigError(f"{key}: bad schedule entry {part!r}, want epoch:mult") from e
    return out


def _parse_int_list(raw: str, key: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in raw.split(","))
    except ValueError as e:
        raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}") from e


def read_kv_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, value = text.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key}")
        out[key] = value.strip()
    return out


def _optimizer_from(kv: dict[str, str], prefix: str, base: OptimizerConfig,
                    taken: set[str]) -> OptimizerConfig:
    cfg = replace(base)
    fields = {
        "optimizer": ("kind", str),
        "lr": ("lr", float),
        "momentum": ("momentum", float),
        "weight_decay": ("weight_decay", float),
        "batch_size": ("batch_size", int),
        "epochs": ("epochs", int),
        "schedule": ("schedule", None),
        "line_search_c": ("line_search_c", float),
        "line_search_beta": ("line_search_beta", float),
        "max_backtracks": ("max_backtracks", int),
    }
    for suffix, (attr, cast) in fields.items():
        key = f"{prefix}.{suffix}"
        if key not in kv:
            continue
        taken.add(key)
        raw = kv[key]
        try:
            value = _parse_schedule(raw, key) if cast is None else cast(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: cannot parse {raw!r}") from e
        setattr(cfg, attr, value)
    return cfg


def parse_config(kv: dict[str, str]) -> ExperimentConfig:
    """Build a validated ExperimentConfig from raw key/value pairs."""
    taken: set[str] = set()

    def take(key, cast, default):
        if key not in kv:
            return default
        taken.add(key)
        raw = kv[key]
        try:
            if cast is bool:
                return _parse_bool(raw, key)
            return cast(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: cannot parse {raw!r}") from e

    layer_dims = take("model.layer_dims", lambda r: _parse_int_list(r, "model.layer_dims"),
                      (16, 16, 3))
    activation = take("model.activation", str, "relu")
    conv_raw = take("model.conv_stem", str, "")
    conv_stem = None
    if conv_raw:
        triple = _parse_int_list(conv_raw, "model.conv_stem")
        if len(triple) != 3:
            raise ConfigError("model.conv_stem: expected channels,kernel,stride")
        conv_stem = triple
    try:
        model = ModelSpec(layer_dims, activation, conv_stem)
    except ValueError as e:
        raise ConfigError(f"model: {e}") from e

    ds = DatasetConfig(
        kind=take("dataset.kind", str, "blobs"),
        classes=take("dataset.classes", int, 3),
        per_class=take("dataset.per_class", int, 40),
        dim=take("dataset.dim", int, 16),
        spread=take("dataset.spread", float, 0.3),
        test_per_class=take("dataset.test_per_class", int, 20),
        train_size=take("dataset.train_size", int, 10000),
        test_size=take("dataset.test_size", int, 2000),
        train_images=take("dataset.train_images", str, ""),
        train_labels=take("dataset.train_labels", str, ""),
        test_images=take("dataset.test_images", str, ""),
        test_labels=take("dataset.test_labels", str, ""),
        limit=take("dataset.limit", int, 0),
        test_limit=take("dataset.test_limit", int, 0),
        normalize=take("dataset.normalize", bool, False),
    )
    if ds.kind not in ("blobs", "digits", "idx"):
        raise ConfigError(f"dataset.kind: unknown kind {ds.kind!r}")
    if ds.kind == "idx":
        for name in ("train_images", "train_labels", "test_images", "test_labels"):
            if not getattr(ds, name):
                raise ConfigError(f"dataset.{name}: required when dataset.kind = idx")

    seeds = Seeds(init=take("seeds.init", int, 1),
                  data=take("seeds.data", int, 2),
                  noise=take("seeds.noise", int, 3))

    baseline = _optimizer_from(kv, "baseline", OptimizerConfig(), taken)
    projected = _optimizer_from(
        kv, "projected",
        OptimizerConfig(kind="psgd", lr=1.0, epochs=40, schedule=[(30, 0.1)], batch_size=128),
        taken)
    if baseline.kind not in ("sgd", "adam"):
        raise ConfigError(f"baseline.optimizer: must be sgd or adam, got {baseline.kind!r}")
    if projected.kind not in ("psgd", "pbfgs"):
        raise ConfigError(f"projected.optimizer: must be psgd or pbfgs, got {projected.kind!r}")

    try:
        sampling = SamplingSchedule(
            samples_per_epoch=take("sampling.per_epoch", int, 1),
            start_epoch=take("sampling.start_epoch", int, 0),
            end_epoch=take("sampling.end_epoch", int, baseline.epochs),
        )
    except ValueError as e:
        raise ConfigError(f"sampling: {e}") from e

    cfg = ExperimentConfig(
        model=model, dataset=ds, seeds=seeds, baseline=baseline,
        sampling=sampling,
        include_w0=take("sampling.include_w0", bool, False),
        subspace_d=take("subspace.d", int, 20),
        projected=projected,
        noise_fraction=take("noise.fraction", float, None),
        output_dir=take("output_dir", str, "runs/out"),
    )
    if cfg.noise_fraction is not None and not 0.0 <= cfg.noise_fraction <= 1.0:
        raise ConfigError(f"noise.fraction: must lie in [0, 1], got {cfg.noise_fraction}")
    if cfg.subspace_d < 1:
        raise ConfigError(f"subspace.d: must be >= 1, got {cfg.subspace_d}")

    unknown = set(kv) - taken
    if unknown:
        raise ConfigError(f"unknown config key: {sorted(unknown)[0]}")
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(read_kv_file(path))
