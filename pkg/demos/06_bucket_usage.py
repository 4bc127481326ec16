"""How evenly do tokens spread over the hash buckets? Synthetic inputs give
the binomial ideal; a briefly trained model on real bytes stays close to it
because every table layer hashes a normalized input.

Run: python demos/06_bucket_usage.py
"""

import numpy as np

from memoryformer import ModelConfig, TrainConfig
from memoryformer.accounting import bucket_stats, synthetic_bucket_histogram
from memoryformer.corpus import CorpusDataset
from memoryformer.training import run_training

print("=== synthetic: i.i.d. normal chunks, tau=8, 65536 samples ===")
counts = synthetic_bucket_histogram(tau=8, samples=65536, seed=0)
print(f"mean count {counts.mean():.0f}, min {counts.min()}, max {counts.max()}, "
      f"max/mean {counts.max() / counts.mean():.3f}")
print("binomial concentration keeps every bucket within a few sigma of uniform")

print("\n=== a briefly trained micro model on held-out bytes ===")
model_cfg = ModelConfig(n_layers=2, hidden=64, heads=2, tau=8, chunks=8,
                        vocab=256, context=128)
train_cfg = TrainConfig(total_steps=200, batch_size=8, seed=1234, corpus="builtin")
dataset = CorpusDataset.from_source(train_cfg.corpus)
result = run_training(model_cfg, train_cfg, None, dataset=dataset)

stats = bucket_stats(result.model, dataset.val_tokens[:16384])
print(f"{'layer':<22} {'tables':>6} {'worst max/mean':>15}")
for name, hist in stats.items():
    print(f"{name:<22} {hist.counts.shape[0]:>6} {hist.max_over_mean.max():>15.2f}")
worst = max(h.max_over_mean.max() for h in stats.values())
print(f"\nworst ratio over all tables: {worst:.2f} "
      "(a collapsed table would be hundreds)")
