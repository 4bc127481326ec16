"""The learnable lookup-table layer that replaces a dense d -> h projection.

Forward: split each token into K chunks, hash every chunk to a bucket of its
table, and sum the K retrieved rows scaled by their bucket weights:

    y = sum_k p(z_k) * T_k[index(z_k)]

Backward: table gradients are sparse (only retrieved rows receive
``p(z_k) * dL/dy``); the input gradient per chunk is the scalar
``dL/dy . T_k[row]`` times the weight gradient, chunks concatenated back to
width d. The hash index itself is treated as locally constant.

The :class:`RetrievalTrace` produced by the forward caches exactly what the
backward needs (indices, weights, chunk values), and doubles as the record
from which bucket-usage statistics are accumulated.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .lsh import ChunkSpec, bucket_index, bucket_weight, bucket_weight_grad, split_chunks
from .ops import Parameter, check_finite, segment_sum_rows

__all__ = [
    "BucketCode",
    "RetrievalTrace",
    "HashTableSet",
    "TableRowUpdate",
    "table_init_std",
    "init_tables",
    "memory_forward",
    "memory_backward",
    "MemoryLayer",
]


@dataclass(frozen=True)
class BucketCode:
    """One retrieval record: which row a chunk selected, at what weight."""

    index: int
    weight: float
    chunk: np.ndarray


class RetrievalTrace:
    """Per-token, per-chunk retrieval records for an s-token forward pass.

    Stored as arrays (``indices``/``weights`` of shape (s, K), ``chunks`` of
    shape (s, K, tau)); :meth:`bucket_codes` iterates the same content as
    s*K individual records.
    """

    __slots__ = ("indices", "weights", "chunks")

    def __init__(self, indices: np.ndarray, weights: np.ndarray, chunks: np.ndarray):
        if indices.shape != weights.shape or chunks.shape[:2] != indices.shape:
            raise ValueError("inconsistent trace arrays")
        self.indices = indices
        self.weights = weights
        self.chunks = chunks

    @property
    def n_tokens(self) -> int:
        return self.indices.shape[0]

    @property
    def n_chunks(self) -> int:
        return self.indices.shape[1]

    def __len__(self) -> int:
        return self.indices.size  # s * K codes

    def bucket_codes(self) -> Iterator[BucketCode]:
        for i in range(self.n_tokens):
            for k in range(self.n_chunks):
                yield BucketCode(
                    index=int(self.indices[i, k]),
                    weight=float(self.weights[i, k]),
                    chunk=self.chunks[i, k],
                )


class HashTableSet:
    """K learnable tables of shape (2^tau, h) plus the hashing config."""

    # serialized header: tau, K, out_dim as little-endian uint32, temperature
    # as little-endian float32, followed by row-major float32 table data
    # (table 0 first, rows in bucket order)
    HEADER = struct.Struct("<IIIf")

    def __init__(self, tables: np.ndarray, spec: ChunkSpec, temperature: float = 1.0):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        expected = (spec.K, spec.n_buckets)
        if tables.ndim != 3 or tables.shape[:2] != expected:
            raise ValueError(f"tables shape {tables.shape} does not match spec {expected} x h")
        check_finite(tables, "hash table entries")
        self.tables = tables
        self.spec = spec
        self.temperature = float(temperature)

    @property
    def out_dim(self) -> int:
        return self.tables.shape[2]

    @property
    def n_entries(self) -> int:
        return self.tables.size

    def to_bytes(self) -> bytes:
        head = self.HEADER.pack(self.spec.tau, self.spec.K, self.out_dim, self.temperature)
        body = np.ascontiguousarray(self.tables, dtype="<f4").tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, blob: bytes, dtype=np.float32) -> "HashTableSet":
        tau, k, h, t = cls.HEADER.unpack_from(blob)
        spec = ChunkSpec(d=k * tau, K=k, tau=tau)
        n = k * (1 << tau) * h
        expected_len = cls.HEADER.size + 4 * n
        if len(blob) != expected_len:
            raise ValueError(f"blob length {len(blob)} != expected {expected_len}")
        data = np.frombuffer(blob, dtype="<f4", count=n, offset=cls.HEADER.size)
        tables = data.reshape(k, 1 << tau, h).astype(dtype)
        return cls(tables, spec, t)


def table_init_std(tau: int, temperature: float = 1.0, base_std: float = 0.02) -> float:
    """Entry std that variance-matches the dense layer being replaced.

    A dense layer with weight std ``base_std`` maps a unit-normal input of
    width d to outputs of std ``base_std * sqrt(d)``. The table layer sums K
    rows scaled by bucket weights, so its output std is
    ``entry_std * sqrt(K * E[p^2])`` for unit-normal chunks. Matching the two
    gives ``entry_std = base_std * sqrt(tau) / E[p^2]^(1/2)`` with
    ``E[p^2] = E[(1+exp(-2|z|/t))^-2]^tau``; the single-coordinate expectation
    is evaluated by Gauss-Hermite quadrature.
    """
    nodes, quad_w = np.polynomial.hermite.hermgauss(64)
    z = np.sqrt(2.0) * nodes
    f2 = 1.0 / (1.0 + np.exp(-2.0 * np.abs(z) / temperature)) ** 2
    e_f2 = float((quad_w * f2).sum() / np.sqrt(np.pi))
    return base_std * np.sqrt(tau) / e_f2 ** (tau / 2.0)


def init_tables(
    spec: ChunkSpec,
    out_dim: int,
    seed: int = 0,
    temperature: float = 1.0,
    base_std: float = 0.02,
    dtype=np.float32,
) -> HashTableSet:
    """Draw a fresh table set, deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    std = table_init_std(spec.tau, temperature, base_std)
    tables = rng.normal(0.0, std, size=(spec.K, spec.n_buckets, out_dim)).astype(dtype)
    return HashTableSet(tables, spec, temperature)


def memory_forward(x: np.ndarray, params: HashTableSet):
    """Hash, retrieve, weight and sum. Returns ``(y, trace)``.

    ``x`` is (s, d) with d = K*tau; ``y`` is (s, out_dim). Every token's
    K-term sum reduces over the same axis in the same order, so a batched
    call is bit-identical to a per-token loop.
    """
    x = np.asarray(x)
    spec = params.spec
    if x.ndim != 2 or x.shape[1] != spec.d:
        raise ValueError(f"input shape {x.shape} does not match width {spec.d}")
    chunks = np.ascontiguousarray(split_chunks(x, spec))
    indices = bucket_index(chunks)
    weights = bucket_weight(chunks, params.temperature).astype(x.dtype)
    rows = params.tables[np.arange(spec.K)[None, :], indices]  # (s, K, h)
    y = (weights[:, :, None] * rows).sum(axis=1)
    check_finite(y, "memory layer output")
    return y, RetrievalTrace(indices, weights, chunks)


@dataclass(frozen=True)
class TableRowUpdate:
    """Sparse gradient for one retrieved row of one table."""

    table: int
    row: int
    grad: np.ndarray


def _input_grad(grad_y: np.ndarray, trace: RetrievalTrace, params: HashTableSet) -> np.ndarray:
    """dL/dx: per chunk, (dL/dy . retrieved_row) times the weight gradient."""
    spec = params.spec
    n = trace.n_tokens
    rows = params.tables[np.arange(spec.K)[None, :], trace.indices]  # (n, K, h)
    dots = np.einsum("ih,ikh->ik", grad_y, rows)
    pgrad = bucket_weight_grad(trace.chunks, params.temperature)
    return (dots[:, :, None] * pgrad).reshape(n, spec.d)




def memory_backward(grad_y: np.ndarray, trace: RetrievalTrace, params: HashTableSet):
    """Backward pass from a cached trace.

    Returns ``(grad_x, updates)`` where ``updates`` is a list of
    :class:`TableRowUpdate`, one per (table, retrieved row), each gradient
    already summed over the tokens that selected that row.
    """
    grad_y = np.asarray(grad_y)
    if grad_y.shape != (trace.n_tokens, params.out_dim):
        raise ValueError(f"grad shape {grad_y.shape} does not match trace/params")
    if trace.n_chunks != params.spec.K or trace.chunks.shape[2] != params.spec.tau:
        raise ValueError("stale trace: chunk layout does not match parameters")
    grad_x = _input_grad(grad_y, trace, params)
    updates: list[TableRowUpdate] = []
    for k in range(params.spec.K):
        scaled = trace.weights[:, k, None] * grad_y
        rows, sums = segment_sum_rows(trace.indices[:, k], scaled)
        updates.extend(
            TableRowUpdate(table=k, row=int(r), grad=sums[i]) for i, r in enumerate(rows)
        )
    return grad_x, updates


class MemoryLayer:
    """Trainable wrapper holding the tables as a single Parameter.

    ``backward`` scatter-adds the sparse row gradients into the dense
    ``Parameter.grad`` buffer so any optimizer can consume them; the rows
    touched in the last backward are kept for sparsity-aware updates and
    usage statistics.
    """

    def __init__(
        self,
        spec: ChunkSpec,
        out_dim: int,
        *,
        temperature: float = 1.0,
        seed: int = 0,
        base_std: float = 0.02,
        dtype=np.float32,
    ):
        params = init_tables(spec, out_dim, seed, temperature, base_std, dtype)
        self.spec = spec
        self.temperature = float(temperature)
        self.tables = Parameter(params.tables, kind="table")
        self._trace: RetrievalTrace | None = None

    @property
    def out_dim(self) -> int:
        return self.tables.shape[2]

    @property
    def trace(self) -> RetrievalTrace | None:
        return self._trace

    def param_set(self) -> HashTableSet:
        return HashTableSet(self.tables.value, self.spec, self.temperature)

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, self._trace = memory_forward(x, self.param_set())
        return y

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        trace = self._trace
        if trace is None or grad_y.shape != (trace.n_tokens, self.out_dim):
            raise ValueError("backward without a matching forward trace")
        params = self.param_set()
        grad_x = _input_grad(grad_y, trace, params)
        # all K tables scattered at once: one weighted bincount per output column
        k_count, n_rows, h = self.tables.shape
        offsets = np.arange(k_count, dtype=np.int64) * n_rows
        flat_rows = (trace.indices + offsets).T.reshape(-1)
        scaled = trace.weights[:, :, None] * grad_y[:, None, :]  # (n, K, h)
        vals_t = np.ascontiguousarray(scaled.transpose(2, 1, 0).reshape(h, -1))
        flat_grad = self.tables.grad.reshape(k_count * n_rows, h)
        total = k_count * n_rows
        for j in range(h):
            flat_grad[:, j] += np.bincount(flat_rows, weights=vals_t[j], minlength=total)
        return grad_x

    def parameters(self):
        yield "tables", self.tables
