"""Train the micro lookup-table model for a few hundred steps on the bundled
corpus and watch the loss fall; then sample from it.

A full run of the shipped config is: memoryformer train --config configs/mf-micro.cfg
This demo uses a shortened budget so it finishes in about a minute.

Run: python demos/05_train_micro.py
"""

import numpy as np

from memoryformer import ModelConfig, TrainConfig
from memoryformer.corpus import CorpusDataset
from memoryformer.training import run_training

model_cfg = ModelConfig(n_layers=2, hidden=64, heads=2, tau=8, chunks=8,
                        expand_bits=2, vocab=256, context=128)
train_cfg = TrainConfig(base_lr=1e-3, table_lr_multiplier=3.0, total_steps=300,
                        batch_size=8, seed=1234, corpus="builtin",
                        eval_interval=50)

print("training the micro model for 300 steps (table rows get a 3x rate)...")
dataset = CorpusDataset.from_source(train_cfg.corpus, train_cfg.eval_frac)
result = run_training(model_cfg, train_cfg, None, dataset=dataset, log=print)

print(f"\nuntrained loss would be ln(256) = {np.log(256):.3f}")
print(f"validation loss after {result.steps} steps: {result.val_loss:.3f} "
      f"(perplexity {result.val_ppl:.1f})")

print("\ngreedy sample from the part-trained model:")
prompt = b"The "
out = result.model.generate(np.frombuffer(prompt, dtype=np.uint8), 60)
print(repr(bytes(int(t) for t in out).decode("ascii", errors="replace")))
