"""Walk through the hashing primitives: sign patterns, bucket integers, and
the closed-form retrieval weight vs the brute-force softmax it equals.

Run: python demos/01_hashing.py
"""

import numpy as np

from memoryformer import (
    bucket_index,
    bucket_weight,
    bucket_weight_naive,
    decode_index,
    encode_index,
    sign_binarize,
)

rng = np.random.default_rng(0)

print("=== sign binarization ===")
z = np.array([0.7, -0.2, 0.0, -1.4])
print(f"z          = {z}")
print(f"sign(z)    = {sign_binarize(z)}   (zero maps to +1)")
print(f"bucket     = {bucket_index(z)}    (little-endian: entry i carries 2^i)")
print(f"decode back: {decode_index(bucket_index(z), 4)}")
print(f"scaling z by 10 keeps the bucket: {bucket_index(10 * z)}")

print("\n=== bucket integers, tau=3 ===")
for i in range(8):
    bits = decode_index(i, 3)
    print(f"  bucket {i}: pattern {bits}  -> encode {encode_index(bits)}")

print("\n=== retrieval weight: product form vs enumerated softmax ===")
z = rng.uniform(-2, 2, size=6)
t = 1.0
closed = bucket_weight(z, t)
probs = bucket_weight_naive(z, t)
print(f"z = {np.round(z, 3)}")
print(f"closed-form weight of the selected bucket: {closed:.10f}")
print(f"softmax over all {len(probs)} buckets, at the selected index: "
      f"{probs[bucket_index(z)]:.10f}")
print(f"difference: {abs(closed - probs[bucket_index(z)]):.2e}")
print(f"softmax sums to {probs.sum():.12f}")

print("\n=== temperature behaviour ===")
for t in (4.0, 1.0, 0.25, 0.01):
    print(f"  t={t:<5} weight={bucket_weight(z, t):.6f}   "
          f"(t -> 0 makes the selected bucket certain)")

print("\n=== zero input is the uniform floor ===")
for tau in (2, 4, 8):
    print(f"  tau={tau}: weight(0) = {bucket_weight(np.zeros(tau)):.6f} "
          f"= 2^-{tau}")
