"""Flat ``key=value`` run configuration shared by the command-line tools.

Every key has a default, so a file only lists what it changes.  Unknown keys
are rejected.  Path-valued keys are resolved against the directory of the
file they were read from.

Dataset keys: ``kind`` (toy | pool-bags), ``n_bags``, ``size_mean``,
``size_std``, ``dim``, ``positive_cap``, ``positive_label``, ``seed``,
``pool_images`` and ``pool_labels`` (IDX files; the bundled 8x8 digits are used
when both are empty).

Model and training keys: ``aggregator``, ``hidden`` (comma-separated widths
after the input layer), ``activations``, ``n_classes``, ``attention_hidden``,
``dual_head``, ``ridge``, ``lam``, ``lr``, ``beta1``, ``beta2``, ``epochs``,
``patience``, ``gamma_start``, ``val_data``.

Sweep keys: ``bag_counts``, ``size_specs`` (``mean:std`` items separated by
commas), ``runs``, ``test_bags``, ``sweep_lam``, ``out``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .datasets import read_key_values
from .milcore import EncoderConfig, ModelConfig
from .training import TrainConfig

__all__ = ["ConfigError", "RunConfig", "load_run_config", "DATASET_KEYS"]

PATH_KEYS = ("pool_images", "pool_labels", "val_data", "out")
DATASET_KEYS = ("kind", "n_bags", "size_mean", "size_std", "dim", "positive_cap", "positive_label", "seed",
                "pool_images", "pool_labels")


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _size_specs(text: str) -> tuple[tuple[float, float], ...]:
    out = []
    for item in _words(text):
        mean, sep, std = item.partition(":")
        if not sep:
            raise ValueError(f"size spec {item!r} should look like mean:std")
        out.append((float(mean), float(std)))
    return tuple(out)


def _optional_int(text: str) -> int | None:
    return None if text.lower() in ("", "none") else int(text)


@dataclass(frozen=True)
class RunConfig:
    kind: str = "toy"
    n_bags: int = 20
    size_mean: float = 10.0
    size_std: float = 2.0
    dim: int = 100
    positive_cap: float = 0.2
    positive_label: int = 9
    seed: int = 0
    pool_images: str = ""
    pool_labels: str = ""

    aggregator: str = "rgp"
    hidden: tuple[int, ...] = (64, 2)
    activations: tuple[str, ...] = ("relu", "relu")
    n_classes: int = 2
    attention_hidden: int = 128
    dual_head: bool = False
    ridge: float = 1e-3
    lam: float = 0.0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 100
    patience: int | None = None
    gamma_start: float = 0.5
    val_data: str = ""

    bag_counts: tuple[int, ...] = (10, 14, 20, 50, 100, 200)
    size_specs: tuple[tuple[float, float], ...] = ((10.0, 2.0), (50.0, 10.0), (100.0, 20.0))
    runs: int = 5
    test_bags: int = 100
    sweep_lam: float = 0.005
    out: str = ""

    def model_config(self, input_dim: int) -> ModelConfig:
        return ModelConfig(
            EncoderConfig([input_dim, *self.hidden], list(self.activations)),
            self.aggregator,
            self.n_classes,
            self.attention_hidden,
            self.dual_head,
            self.ridge,
        )

    def train_config(self, input_dim: int) -> TrainConfig:
        return TrainConfig(
            self.model_config(input_dim),
            lam=self.lam,
            lr=self.lr,
            betas=(self.beta1, self.beta2),
            epochs=self.epochs,
            patience=self.patience,
            seed=self.seed,
            gamma_start=self.gamma_start,
        )

    def dataset_items(self) -> dict[str, object]:
        return {k: getattr(self, k) for k in DATASET_KEYS}


_PARSERS = {
    "bool": _bool,
    "int": int,
    "float": float,
    "str": str,
    "tuple[int, ...]": _ints,
    "tuple[str, ...]": _words,
    "tuple[tuple[float, float], ...]": _size_specs,
    "int | None": _optional_int,
}


def _parser_for(name: str):
    # annotations are strings under postponed evaluation
    return _PARSERS[{f.name: f.type for f in fields(RunConfig)}[name]]


def load_run_config(path, **overrides) -> RunConfig:
    """Read a config file; ``overrides`` are parsed values applied on top."""
    path = Path(path)
    try:
        raw = read_key_values(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    values: dict[str, object] = {}
    for key, text in raw.items():
        try:
            values[key] = _parser_for(key)(text)
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value for {key}: {exc}") from None
        if key in PATH_KEYS and values[key]:
            values[key] = str((path.parent / str(values[key])).resolve())
    cfg = replace(RunConfig(), **values, **overrides)
    if cfg.kind not in ("toy", "pool-bags"):
        raise ConfigError(f"{path}: kind must be toy or pool-bags, got {cfg.kind!r}")
    if bool(cfg.pool_images) != bool(cfg.pool_labels):
        raise ConfigError(f"{path}: pool_images and pool_labels go together")
    return cfg
