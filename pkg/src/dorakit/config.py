"""JSON run configuration.

A config file holds up to four sections whose keys are the field names of
the matching dataclass::

    {
      "model":    {"d_z": 64, "feature_subset": "RF+PoI"},
      "loss":     {"alpha": 0.7, "tau": 0.1},
      "pretrain": {"epochs": 150, "batch_size": 512},
      "finetune": {"epochs": 200, "freeze_encoder": false}
    }

Missing sections and keys keep their defaults. Unknown sections or keys are
rejected. Command-line flags are applied on top with :meth:`RunConfig.override`.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional, TypeVar, Union

from .errors import ConfigError
from .losses import PretextLossConfig
from .model import ModelConfig
from .training import FinetuneConfig, PretrainConfig

OUT_DIR_ENV = "DORAKIT_OUT_DIR"
DEFAULT_OUT_DIR = "dorakit-out"

C = TypeVar("C")

_SECTIONS = ("model", "loss", "pretrain", "finetune")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    pretrain: PretrainConfig = PretrainConfig()
    finetune: FinetuneConfig = FinetuneConfig()

    @property
    def loss(self) -> PretextLossConfig:
        return self.pretrain.loss

    def override(self, section: str, **changes: Any) -> RunConfig:
        """Return a copy with ``changes`` applied to one section; ``None`` values are skipped."""
        changes = {k: v for k, v in changes.items() if v is not None}
        if not changes:
            return self
        if section == "loss":
            loss = _apply(self.pretrain.loss, changes, "loss")
            return replace(self, pretrain=replace(self.pretrain, loss=loss))
        if section not in ("model", "pretrain", "finetune"):
            raise ConfigError(f"unknown config section {section!r}")
        return replace(self, **{section: _apply(getattr(self, section), changes, section)})

    def to_dict(self) -> dict[str, dict[str, Any]]:
        """Plain JSON-ready form (the layout :func:`load_config` reads)."""

        def plain(obj: Any) -> dict[str, Any]:
            out = {}
            for f in fields(obj):
                value = getattr(obj, f.name)
                if f.name == "loss":
                    continue
                if isinstance(value, tuple):
                    value = list(value)
                elif hasattr(value, "value"):
                    value = value.value
                out[f.name] = value
            return out

        return {
            "model": plain(self.model),
            "loss": plain(self.loss),
            "pretrain": plain(self.pretrain),
            "finetune": plain(self.finetune),
        }


def _apply(obj: C, changes: Mapping[str, Any], section: str) -> C:
    known = {f.name for f in fields(obj)}  # type: ignore[arg-type]
    unknown = sorted(set(changes) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in section {section!r}: {unknown}")
    values = dict(changes)
    if "encoder_multipliers" in values:
        values["encoder_multipliers"] = tuple(values["encoder_multipliers"])
    try:
        return replace(obj, **values)  # type: ignore[type-var]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value in section {section!r}: {exc}") from exc


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {unknown}")
    cfg = RunConfig()
    for section in _SECTIONS:
        body = data.get(section, {})
        if not isinstance(body, Mapping):
            raise ConfigError(f"section {section!r} must be a JSON object")
        if section == "pretrain" and "loss" in body:
            raise ConfigError("put loss settings in the top-level 'loss' section")
        cfg = cfg.override(section, **body)
    return cfg


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """Read a JSON config file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def default_out_dir() -> Path:
    """``$DORAKIT_OUT_DIR`` if set, else ``./dorakit-out``."""
    return Path(os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)
