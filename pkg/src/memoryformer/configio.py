"""Config files, run manifests, and ablation grids (INI-style text).

A run config has a ``[model]`` and a ``[train]`` section whose keys mirror
:class:`ModelConfig` and :class:`TrainConfig` fields. A run manifest is the
same document plus a ``[run]`` section (seed, code version, timestamps,
progress), so any manifest is itself a valid config that reproduces its run.

Ablation grids reuse the same layout plus one ``[variant:<label>]`` section
per grid point holding dotted overrides (``model.expand_bits = 3``,
``train.table_lr_multiplier = 1.0``).

Relative corpus paths are resolved against the config file's directory, so
shipped configs work from any working directory.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
import time

from . import __version__
from .corpus import BUILTIN_CORPUS
from .model import ModelConfig
from .training import TrainConfig

__all__ = [
    "ConfigError",
    "load_config",
    "save_config",
    "save_manifest",
    "read_manifest_run_info",
    "load_grid",
]


class ConfigError(ValueError):
    """Malformed or invalid configuration input."""


_OPTIONAL_INT_FIELDS = {"warmup_steps"}


def _coerce(field: dataclasses.Field, raw: str):
    raw = raw.strip()
    if field.name in _OPTIONAL_INT_FIELDS and raw.lower() in ("", "none", "auto"):
        return None
    ftype = field.type
    try:
        if ftype in ("int", "int | None"):
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "bool":
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {field.name}: {raw!r}") from exc


def _section_to_kwargs(cls, section) -> dict:
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in section.items():
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} for [{section.name}]")
        kwargs[key] = _coerce(fields[key], raw)
    return kwargs


def _build_configs(parser: configparser.ConfigParser, base_dir: str):
    try:
        model_cfg = ModelConfig(**_section_to_kwargs(ModelConfig, parser["model"]))
        train_kwargs = (
            _section_to_kwargs(TrainConfig, parser["train"]) if parser.has_section("train") else {}
        )
        train_cfg = TrainConfig(**train_kwargs)
    except KeyError as exc:
        raise ConfigError(f"missing section {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if train_cfg.corpus != BUILTIN_CORPUS and not os.path.isabs(train_cfg.corpus):
        train_cfg = dataclasses.replace(
            train_cfg, corpus=os.path.normpath(os.path.join(base_dir, train_cfg.corpus))
        )
    return model_cfg, train_cfg


def _read_parser(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    return parser


def load_config(path: str) -> tuple[ModelConfig, TrainConfig]:
    parser = _read_parser(path)
    return _build_configs(parser, os.path.dirname(os.path.abspath(path)))


def _fill(parser: configparser.ConfigParser, name: str, cfg) -> None:
    parser[name] = {
        f.name: "" if getattr(cfg, f.name) is None else str(getattr(cfg, f.name))
        for f in dataclasses.fields(cfg)
    }


def save_config(path: str, model_cfg: ModelConfig, train_cfg: TrainConfig,
                run_info: dict | None = None) -> None:
    parser = configparser.ConfigParser()
    _fill(parser, "model", model_cfg)
    _fill(parser, "train", train_cfg)
    if run_info is not None:
        parser["run"] = {k: str(v) for k, v in run_info.items()}
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        parser.write(fh)


def save_manifest(path: str, model_cfg: ModelConfig, train_cfg: TrainConfig,
                  **run_info) -> None:
    info = {
        "code_version": __version__,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        **run_info,
    }
    save_config(path, model_cfg, train_cfg, info)


def read_manifest_run_info(path: str) -> dict:
    parser = _read_parser(path)
    return dict(parser["run"]) if parser.has_section("run") else {}


def load_grid(path: str) -> tuple[str, list[tuple[str, ModelConfig, TrainConfig]]]:
    """Parse an ablation grid: base config plus per-variant dotted overrides."""
    parser = _read_parser(path)
    base_dir = os.path.dirname(os.path.abspath(path))
    name = parser.get("ablation", "name", fallback=os.path.splitext(os.path.basename(path))[0])
    runs = []
    for section in parser.sections():
        if not section.startswith("variant:"):
            continue
        label = section.split(":", 1)[1]
        merged = configparser.ConfigParser()
        merged.read_dict({
            "model": dict(parser["model"]),
            "train": dict(parser["train"]) if parser.has_section("train") else {},
        })
        for dotted, value in parser[section].items():
            if "." not in dotted:
                raise ConfigError(f"grid override {dotted!r} must look like model.key or train.key")
            target, key = dotted.split(".", 1)
            if target not in ("model", "train"):
                raise ConfigError(f"grid override target must be model or train: {dotted!r}")
            merged[target][key] = value
        runs.append((label, *_build_configs(merged, base_dir)))
    if not runs:
        raise ConfigError(f"grid {path} defines no [variant:...] sections")
    return name, runs
