"""Checkpoint directories: manifest + per-layer table blobs + dense arrays.

Layout of a checkpoint directory::

    manifest.cfg     reproducing config (+ [run] section with the step)
    tables/<layer dotted name>.bin   one blob per lookup-table layer
    dense.npz        every non-table parameter, keyed by dotted name
    optimizer.npz    Adam moments and step count (present when saved mid-run)
    rng.json         data-sampling generator state (bit-exact resume)

Table blobs follow the byte-exact format documented on
:class:`memoryformer.memory_layer.HashTableSet`.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .configio import read_manifest_run_info, save_manifest, load_config
from .memory_layer import HashTableSet
from .model import LanguageModel, ModelConfig
from .training import Adam, TrainConfig

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointBundle"]

MANIFEST = "manifest.cfg"


def save_checkpoint(
    ckpt_dir: str,
    model: LanguageModel,
    train_cfg: TrainConfig,
    *,
    step: int,
    optimizer: Adam | None = None,
    data_rng: np.random.Generator | None = None,
) -> str:
    os.makedirs(os.path.join(ckpt_dir, "tables"), exist_ok=True)
    save_manifest(os.path.join(ckpt_dir, MANIFEST), model.cfg, train_cfg, step=step)
    for name, layer in model.memory_layers():
        with open(os.path.join(ckpt_dir, "tables", f"{name}.bin"), "wb") as fh:
            fh.write(layer.param_set().to_bytes())
    dense = {
        name: p.value for name, p in model.named_parameters() if p.kind != "table"
    }
    np.savez(os.path.join(ckpt_dir, "dense.npz"), **dense)
    if optimizer is not None:
        np.savez(os.path.join(ckpt_dir, "optimizer.npz"), **optimizer.state_arrays())
    if data_rng is not None:
        with open(os.path.join(ckpt_dir, "rng.json"), "w") as fh:
            json.dump(data_rng.bit_generator.state, fh)
    return ckpt_dir


class CheckpointBundle:
    def __init__(self, model, model_cfg, train_cfg, step, optimizer, data_rng):
        self.model = model
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.step = step
        self.optimizer = optimizer
        self.data_rng = data_rng


def load_checkpoint(ckpt_dir: str, dtype=np.float32) -> CheckpointBundle:
    manifest = os.path.join(ckpt_dir, MANIFEST)
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"no checkpoint manifest at {manifest}")
    model_cfg, train_cfg = load_config(manifest)
    step = int(read_manifest_run_info(manifest).get("step", 0))

    model = LanguageModel(model_cfg, seed=train_cfg.seed, dtype=dtype)
    for name, layer in model.memory_layers():
        with open(os.path.join(ckpt_dir, "tables", f"{name}.bin"), "rb") as fh:
            stored = HashTableSet.from_bytes(fh.read(), dtype=dtype)
        if stored.tables.shape != layer.tables.shape:
            raise ValueError(f"table shape mismatch for {name}")
        layer.tables.value[...] = stored.tables
        layer.temperature = stored.temperature
    with np.load(os.path.join(ckpt_dir, "dense.npz")) as dense:
        for name, p in model.named_parameters():
            if p.kind != "table":
                p.value[...] = dense[name].astype(dtype)

    optimizer = None
    opt_path = os.path.join(ckpt_dir, "optimizer.npz")
    if os.path.exists(opt_path):
        optimizer = Adam(list(model.named_parameters()), train_cfg)
        with np.load(opt_path) as arrays:
            optimizer.load_state_arrays(dict(arrays))

    data_rng = None
    rng_path = os.path.join(ckpt_dir, "rng.json")
    if os.path.exists(rng_path):
        with open(rng_path) as fh:
            state = json.load(fh)
        data_rng = np.random.default_rng(0)
        data_rng.bit_generator.state = state

    return CheckpointBundle(model, model_cfg, train_cfg, step, optimizer, data_rng)
