"""The lookup-table layer end to end: forward retrieval, the trace it keeps,
and the sparse backward that only touches retrieved rows.

Run: python demos/02_memory_layer.py
"""

import numpy as np

from memoryformer import ChunkSpec, init_tables, memory_backward, memory_forward

rng = np.random.default_rng(1)

spec = ChunkSpec(d=8, K=2, tau=4)
params = init_tables(spec, out_dim=5, seed=0, dtype=np.float64)
print(f"layer: width {spec.d} -> {params.out_dim}, {spec.K} tables of "
      f"2^{spec.tau} = {spec.n_buckets} rows")
print(f"learnable entries: {params.n_entries} "
      f"(= K * 2^tau * h = {spec.K} * {spec.n_buckets} * {params.out_dim})")

x = rng.uniform(-2, 2, size=(3, spec.d))
y, trace = memory_forward(x, params)
print("\n=== forward ===")
print("tokens in :", np.round(x, 2).tolist())
print("tokens out:", np.round(y, 3).tolist())
print("selected rows per token:", trace.indices.tolist())
print("retrieval weights      :", np.round(trace.weights, 3).tolist())

print("\n=== backward ===")
grad_y = np.ones_like(y)
grad_x, updates = memory_backward(grad_y, trace, params)
print(f"input gradient shape: {grad_x.shape}")
print(f"table-row updates: {len(updates)} "
      f"(at most tokens*K = {3 * spec.K}; duplicate rows merge)")
for u in updates:
    print(f"  table {u.table} row {u.row:2d}: grad norm {np.linalg.norm(u.grad):.4f}")
touched = {(u.table, u.row) for u in updates}
print(f"rows never retrieved get exactly zero gradient "
      f"({spec.K * spec.n_buckets - len(touched)} of {spec.K * spec.n_buckets} rows)")

print("\n=== the serialized form ===")
blob = params.to_bytes()
print(f"blob: {len(blob)} bytes = 16-byte header "
      f"(tau, K, h, temperature) + {params.n_entries} float32 entries")
