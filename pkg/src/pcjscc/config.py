"""Flat dotted-key configuration files.

A config file is TOML restricted to ``section.key = value`` pairs (either
written as dotted keys or under ``[section]`` headers). Recognised keys::

    encoder.dim  encoder.depth  encoder.heads  encoder.tokens  encoder.ffn_hidden  encoder.pooling
    stf.tau  stf.refine
    payload.K  payload.bits_per_symbol
    quant.bits  quant.alpha_init
    decoder.ablation  decoder.snr_embedding  decoder.seed_dim  decoder.dequantize  decoder.clip_output
    loss.lambda_sym  loss.lambda_sparsity  loss.lambda_diversity  loss.tau
    train.batch_size  train.learning_rate  train.weight_decay  train.max_epochs  train.patience
    train.snr_low  train.snr_high  train.val_snr_db  train.channel  train.seed
    data.source  data.points  data.count  data.val_fraction  data.seed

``stf.tau`` and ``loss.tau`` name the same sparsity threshold, as do
``payload.bits_per_symbol`` and ``quant.bits``; giving both with different
values is an error.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    source: str = "toy"  # "toy" or a directory of .ply files
    count: int = 200
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("data.count must be >= 2")
        if not 0 < self.val_fraction < 1:
            raise ValueError("data.val_fraction must lie in (0, 1)")


# key -> (section object, attribute)
KEYS: dict[str, tuple[str, str]] = {
    "encoder.dim": ("model", "dim"),
    "encoder.depth": ("model", "depth"),
    "encoder.heads": ("model", "heads"),
    "encoder.tokens": ("model", "tokens"),
    "encoder.ffn_hidden": ("model", "ffn_hidden"),
    "encoder.pooling": ("model", "pooling"),
    "stf.tau": ("train", "tau"),
    "stf.refine": ("model", "stf_refine"),
    "payload.K": ("model", "keep_tokens"),
    "payload.bits_per_symbol": ("model", "bits"),
    "quant.bits": ("model", "bits"),
    "quant.alpha_init": ("model", "alpha_init"),
    "decoder.ablation": ("model", "ablation"),
    "decoder.snr_embedding": ("model", "use_snr_embedding"),
    "decoder.seed_dim": ("model", "seed_dim"),
    "decoder.dequantize": ("model", "dequantize"),
    "decoder.clip_output": ("model", "clip_output"),
    "loss.lambda_sym": ("train", "lambda_sym"),
    "loss.lambda_sparsity": ("train", "lambda_sparsity"),
    "loss.lambda_diversity": ("train", "lambda_diversity"),
    "loss.tau": ("train", "tau"),
    "train.batch_size": ("train", "batch_size"),
    "train.learning_rate": ("train", "learning_rate"),
    "train.weight_decay": ("train", "weight_decay"),
    "train.max_epochs": ("train", "max_epochs"),
    "train.patience": ("train", "patience"),
    "train.snr_low": ("train", "snr_low"),
    "train.snr_high": ("train", "snr_high"),
    "train.val_snr_db": ("train", "val_snr_db"),
    "train.channel": ("train", "channel"),
    "train.seed": ("train", "seed"),
    "data.source": ("data", "source"),
    "data.points": ("model", "points"),
    "data.count": ("data", "count"),
    "data.val_fraction": ("data", "val_fraction"),
    "data.seed": ("data", "seed"),
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_flat(self) -> dict:
        out = {}
        for key, (sec, attr) in KEYS.items():
            if key in ("stf.tau", "payload.bits_per_symbol"):
                continue  # aliases; the canonical key carries the value
            out[key] = getattr(getattr(self, sec), attr)
        return out

    def to_dict(self) -> dict:
        return {"model": asdict(self.model), "train": asdict(self.train), "data": asdict(self.data)}


def flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value, target):
    kind = type(target)
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
    elif kind is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"config key {key!r}: expected {kind.__name__}, got {value!r}")


def from_flat(flat: dict, base: RunConfig | None = None) -> RunConfig:
    """Build a validated :class:`RunConfig` from dotted keys layered over ``base``."""
    base = base or RunConfig()
    updates: dict[str, dict] = {"model": {}, "train": {}, "data": {}}
    seen: dict[tuple[str, str], tuple[str, object]] = {}
    for key, value in flat.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}; known keys: {', '.join(sorted(KEYS))}")
        sec, attr = KEYS[key]
        value = _coerce(key, value, getattr(getattr(base, sec), attr))
        prev = seen.get((sec, attr))
        if prev is not None and prev[1] != value:
            raise ConfigError(f"config keys {prev[0]!r} and {key!r} set the same quantity to different values")
        seen[(sec, attr)] = (key, value)
        updates[sec][attr] = value
    m = updates["model"]
    if "tokens" in m and "keep_tokens" not in m and base.model.keep_tokens == base.model.tokens:
        m["keep_tokens"] = m["tokens"]  # K defaults to "keep every token"
    try:
        return RunConfig(
            model=replace(base.model, **updates["model"]),
            train=replace(base.train, **updates["train"]),
            data=replace(base.data, **updates["data"]),
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e


def parse_text(text: str, base: RunConfig | None = None) -> RunConfig:
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config syntax error: {e}") from e
    return from_flat(flatten(tree), base)


def load(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise OSError(f"cannot read config {path}: {e.strerror}") from e
    try:
        return parse_text(text, base)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from e


def parse_override(item: str) -> tuple[str, str]:
    """``key=value`` from a ``--set`` flag; the value is coerced later by type."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def dumps(cfg: RunConfig) -> str:
    """Serialise as flat TOML (round-trips through :func:`parse_text`)."""
    lines = []
    for key, value in cfg.to_flat().items():
        if isinstance(value, bool):
            v = "true" if value else "false"
        elif isinstance(value, str):
            v = '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
        else:
            v = repr(value)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def toy_config() -> RunConfig:
    """The desk-scale benchmark: 200 toy shapes, N=256, D=64, T=K=16, 50 epochs."""
    return RunConfig(
        model=ModelConfig(points=256, tokens=16, dim=64, depth=4, heads=4, ffn_hidden=128, keep_tokens=16),
        train=TrainConfig(max_epochs=50),
        data=DataConfig(count=200),
    )

