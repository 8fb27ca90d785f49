"""Plain-text run configuration: ``key = value`` lines with strict keys."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .model import ModelDims

SEED_ENV_VAR = "DEFACTOR_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    seed: int = 7
    latent_size: int = 56
    gcn_layers: int = 3
    hidden: int = 128
    embed_dim: int = 128
    batch: int = 16
    lr: float = 2e-3
    epochs_e1: int = 20
    epochs_e2: int = 20
    epochs_e3: int = 20
    alpha: float = 0.9
    beta: float = 0.5
    n_max: int = 12
    data_path: str = ""
    out_dir: str = "out"

    def model_dims(self) -> ModelDims:
        return ModelDims(
            gcn_layers=self.gcn_layers,
            hidden=self.hidden,
            embed_dim=self.embed_dim,
            latent=self.latent_size,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def _apply(cfg: Config, key: str, raw: str) -> None:
    key = key.strip()
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(cfg, key, _coerce(key, raw.strip()))


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    env: dict | None = None,
) -> Config:
    """Build a Config from an optional file, ``key=value`` overrides, and env.

    Unknown keys raise :class:`ConfigError`. ``DEFACTOR_SEED`` in the
    environment wins over both the file and overrides.
    """
    cfg = Config()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
                key, _, value = line.partition("=")
                _apply(cfg, key, value)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        _apply(cfg, key, value)
    env = os.environ if env is None else env
    if SEED_ENV_VAR in env:
        try:
            cfg.seed = int(env[SEED_ENV_VAR])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from exc
    return cfg
