"""Desk-scale training: Adam with a table-specific LR multiplier, linear
warmup + cosine decay, CSV metrics, checkpointing, evaluation, ablations.

Table rows receive sparse gradients, so hash-table parameters get
``base_lr * table_lr_multiplier`` (default 3x); everything else trains at the
base rate. Moments are dense by default (they decay every step for all rows);
``sparse_table_moments`` restricts moment and parameter updates to rows that
actually received gradient in the step.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import CorpusDataset
from .model import LanguageModel, ModelConfig
from .ops import NonFiniteError, Parameter, cross_entropy

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "Adam",
    "lr_at_step",
    "train_step",
    "evaluate_ppl",
    "run_training",
    "run_ablation",
    "TrainResult",
]


class TrainingDiverged(RuntimeError):
    """Loss or gradients went non-finite during training."""


@dataclass
class TrainConfig:
    base_lr: float = 1e-3
    table_lr_multiplier: float = 3.0
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.0  # never applied to hash tables
    warmup_steps: int | None = None  # default: 1% of total_steps
    total_steps: int = 2000
    batch_size: int = 8
    seed: int = 1234
    corpus: str = "builtin"
    eval_frac: float = 0.05
    eval_interval: int = 100
    eval_tokens: int = 32768
    min_lr_ratio: float = 0.1
    sparse_table_moments: bool = False

    def __post_init__(self):
        if self.table_lr_multiplier <= 0:
            raise ValueError("table_lr_multiplier must be positive")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.warmup_steps is not None and self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps must not exceed total_steps")

    @property
    def effective_warmup(self) -> int:
        if self.warmup_steps is not None:
            return self.warmup_steps
        return max(1, self.total_steps // 100)


def lr_at_step(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to base_lr, then cosine decay to min_lr_ratio * base_lr."""
    warmup = cfg.effective_warmup
    if step < warmup:
        return cfg.base_lr * (step + 1) / warmup
    span = max(cfg.total_steps - warmup, 1)
    progress = min((step - warmup) / span, 1.0)
    floor = cfg.base_lr * cfg.min_lr_ratio
    return floor + 0.5 * (cfg.base_lr - floor) * (1.0 + np.cos(np.pi * progress))


class Adam:
    """Adam over named Parameters with kind-scoped LR and decay rules."""

    def __init__(self, params: list[tuple[str, Parameter]], cfg: TrainConfig):
        self.cfg = cfg
        self.params = params
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for _, p in params]
        self.v = [np.zeros_like(p.value) for _, p in params]

    def step(self, lr: float) -> None:
        cfg = self.cfg
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - cfg.beta1**t
        bc2 = 1.0 - cfg.beta2**t
        for (name, p), m, v in zip(self.params, self.m, self.v):
            g = p.grad
            is_table = p.kind == "table"
            eff_lr = lr * (cfg.table_lr_multiplier if is_table else 1.0)
            if cfg.weight_decay and not is_table:
                g = g + cfg.weight_decay * p.value
            if is_table and cfg.sparse_table_moments:
                touched = np.any(g != 0.0, axis=-1)  # (K, rows)
                if not touched.any():
                    continue
                m[touched] = cfg.beta1 * m[touched] + (1 - cfg.beta1) * g[touched]
                v[touched] = cfg.beta2 * v[touched] + (1 - cfg.beta2) * g[touched] ** 2
                update = (m[touched] / bc1) / (np.sqrt(v[touched] / bc2) + cfg.eps)
                p.value[touched] -= eff_lr * update
            else:
                m *= cfg.beta1
                m += (1 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1 - cfg.beta2) * g**2
                p.value -= eff_lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step_count": np.array(self.step_count)}
        for (name, _), m, v in zip(self.params, self.m, self.v):
            out[f"m.{name}"] = m
            out[f"v.{name}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["step_count"])
        for i, (name, _) in enumerate(self.params):
            self.m[i] = np.array(arrays[f"m.{name}"])
            self.v[i] = np.array(arrays[f"v.{name}"])


def train_step(model: LanguageModel, batch, optimizer: Adam, lr: float) -> float:
    """One forward/backward/update. Returns the batch loss."""
    x, y = batch
    model.zero_grad()
    try:
        logits = model.forward(x)
        b, s, vocab = logits.shape
        loss, grad = cross_entropy(logits.reshape(b * s, vocab), np.asarray(y).reshape(-1))
        model.backward(grad.reshape(b, s, vocab))
    except NonFiniteError as exc:
        raise TrainingDiverged(f"non-finite values during training step: {exc}") from exc
    if not np.isfinite(loss):
        raise TrainingDiverged(f"loss diverged: {loss}")
    optimizer.step(lr)
    return loss


def evaluate_ppl(model: LanguageModel, dataset: CorpusDataset,
                 max_tokens: int | None = None) -> tuple[float, float]:
    """Mean token NLL and its exp over non-overlapping validation windows."""
    seq_len = model.cfg.context
    total_nll = 0.0
    total_tokens = 0
    for x, y in dataset.val_windows(seq_len, max_tokens):
        logits = model.forward(x)
        loss, _ = cross_entropy(logits, y)
        total_nll += loss * len(y)
        total_tokens += len(y)
    if total_tokens == 0:
        raise ValueError("empty validation shard")
    mean_nll = total_nll / total_tokens
    return mean_nll, float(np.exp(mean_nll))


@dataclass
class TrainResult:
    steps: int
    final_train_loss: float
    val_loss: float
    val_ppl: float
    run_dir: str | None = None
    eval_history: list[tuple[int, float]] = field(default_factory=list)


def run_training(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_dir: str | None = None,
    *,
    model: LanguageModel | None = None,
    optimizer: Adam | None = None,
    start_step: int = 0,
    data_rng: np.random.Generator | None = None,
    dataset: CorpusDataset | None = None,
    log=None,
) -> TrainResult:
    """Train (or continue training) a model; optionally log CSVs to out_dir.

    The caller may pass a live model/optimizer/rng to resume from a
    checkpoint; by default everything is built fresh from the configs and the
    run is deterministic for fixed seeds in a fixed-thread-count process.
    """
    if dataset is None:
        dataset = CorpusDataset.from_source(train_cfg.corpus, train_cfg.eval_frac)
    if model is None:
        model = LanguageModel(model_cfg, seed=train_cfg.seed)
    if optimizer is None:
        optimizer = Adam(list(model.named_parameters()), train_cfg)
    if data_rng is None:
        data_rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 0xDA7A]))

    metrics_writer = eval_writer = None
    metrics_fh = eval_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        mode = "a" if start_step > 0 else "w"
        metrics_fh = open(os.path.join(out_dir, "metrics.csv"), mode, newline="")
        metrics_writer = csv.writer(metrics_fh)
        eval_fh = open(os.path.join(out_dir, "eval.csv"), mode, newline="")
        eval_writer = csv.writer(eval_fh)
        if start_step == 0:
            metrics_writer.writerow(["step", "loss", "lr", "tokens_per_sec"])
            eval_writer.writerow(["step", "val_loss", "val_ppl"])

    seq_len = model.cfg.context
    tokens_per_batch = train_cfg.batch_size * seq_len
    loss = float("nan")
    eval_history: list[tuple[int, float]] = []
    try:
        for step in range(start_step, train_cfg.total_steps):
            batch = dataset.sample_batch(data_rng, train_cfg.batch_size, seq_len)
            lr = lr_at_step(step, train_cfg)
            t0 = time.perf_counter()
            loss = train_step(model, batch, optimizer, lr)
            dt = time.perf_counter() - t0
            if metrics_writer is not None:
                metrics_writer.writerow([step + 1, f"{loss:.6f}", f"{lr:.8g}",
                                         f"{tokens_per_batch / dt:.1f}"])
            if (step + 1) % train_cfg.eval_interval == 0 or step + 1 == train_cfg.total_steps:
                val_loss, val_ppl = evaluate_ppl(model, dataset, train_cfg.eval_tokens)
                eval_history.append((step + 1, val_loss))
                if eval_writer is not None:
                    eval_writer.writerow([step + 1, f"{val_loss:.6f}", f"{val_ppl:.4f}"])
                if log is not None:
                    log(f"step {step + 1}/{train_cfg.total_steps}  "
                        f"train {loss:.4f}  val {val_loss:.4f}  ppl {val_ppl:.2f}")
    finally:
        for fh in (metrics_fh, eval_fh):
            if fh is not None:
                fh.close()

    val_loss, val_ppl = evaluate_ppl(model, dataset, train_cfg.eval_tokens)
    result = TrainResult(
        steps=train_cfg.total_steps,
        final_train_loss=loss,
        val_loss=val_loss,
        val_ppl=val_ppl,
        run_dir=out_dir,
        eval_history=eval_history,
    )
    result.model = model  # type: ignore[attr-defined]
    result.optimizer = optimizer  # type: ignore[attr-defined]
    result.data_rng = data_rng  # type: ignore[attr-defined]
    return result


def run_ablation(
    grid: list[tuple[str, ModelConfig, TrainConfig]],
    out_dir: str | None = None,
    log=None,
) -> list[dict]:
    """Train every configuration on a shared corpus and collect a report.

    Per-run failures are recorded in the report instead of aborting the grid.
    Each record carries the config, validation loss/PPL, and the complexity
    accounting (per-layer FLOPs at s=2048, table storage) for the config.
    """
    from .accounting import flops_memory_layer, memory_block_bytes, table_memory_bytes

    records: list[dict] = []
    for label, model_cfg, train_cfg in grid:
        rec: dict = {
            "label": label,
            "variant": model_cfg.variant,
            "d": model_cfg.hidden,
            "tau": model_cfg.tau,
            "K": model_cfg.chunks,
            "expand_bits": model_cfg.expand_bits,
            "gelu": model_cfg.memory_block_gelu,
            "lr_multiplier": train_cfg.table_lr_multiplier,
            "steps": train_cfg.total_steps,
        }
        if model_cfg.variant == "memoryformer":
            rec["layer_flops_g"] = flops_memory_layer(
                2048, model_cfg.tau, model_cfg.chunks, model_cfg.hidden) / 1e9
            rec["layer_mb"] = table_memory_bytes(
                model_cfg.tau, model_cfg.chunks, model_cfg.hidden) / 1e6
            rec["block_mb"] = memory_block_bytes(
                model_cfg.tau, model_cfg.chunks, model_cfg.hidden,
                model_cfg.expand_bits).block_bytes / 1e6
        try:
            run_out = os.path.join(out_dir, label) if out_dir else None
            result = run_training(model_cfg, train_cfg, run_out, log=log)
            rec.update(status="ok", val_loss=result.val_loss, val_ppl=result.val_ppl)
        except Exception as exc:  # per-run failures are data, not fatal
            rec.update(status=f"failed: {exc}", val_loss=None, val_ppl=None)
        records.append(rec)
        if log is not None:
            log(f"[{label}] {rec['status']}  val_ppl={rec.get('val_ppl')}")

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        fields = ["label", "variant", "d", "tau", "K", "expand_bits", "gelu",
                  "lr_multiplier", "steps", "status", "val_loss", "val_ppl",
                  "layer_flops_g", "layer_mb", "block_mb"]
        with open(os.path.join(out_dir, "ablation_results.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for rec in records:
                writer.writerow({k: rec.get(k, "") for k in fields})
    return records
