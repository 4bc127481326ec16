"""Dense-array primitives with hand-derived forward/backward pairs.

Everything runs on contiguous numpy arrays: float32 is the training dtype,
float64 is used when checking gradients against finite differences. There is
no autodiff graph; each forward has a matching explicit backward, and model
code is responsible for calling them in reverse order.

Every primitive validates that its output is finite and raises
:class:`NonFiniteError` otherwise, so numerical blow-ups surface at the op
that produced them instead of silently corrupting a run.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NonFiniteError",
    "Parameter",
    "check_finite",
    "matmul",
    "matmul_backward",
    "layer_norm",
    "layer_norm_backward",
    "softmax_rows",
    "softmax_rows_backward",
    "cross_entropy",
    "gelu",
    "gelu_backward",
    "add",
    "add_backward",
    "scale",
    "scale_backward",
    "transpose",
    "transpose_backward",
    "split_heads",
    "merge_heads",
    "causal_mask",
    "embedding_gather",
    "embedding_grad",
]


class NonFiniteError(ArithmeticError):
    """A primitive produced NaN or Inf."""


def check_finite(x: np.ndarray, what: str = "values") -> np.ndarray:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite {what} (shape {np.shape(x)})")
    return x


class Parameter:
    """A learnable array paired with a same-shape gradient buffer.

    ``kind`` tags what the parameter is ("table", "norm", "embedding",
    "dense") so the optimizer can scope learning-rate rules without
    inspecting the model tree.
    """

    __slots__ = ("value", "grad", "kind")

    def __init__(self, value: np.ndarray, kind: str = "dense"):
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.kind = kind

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self) -> np.dtype:
        return self.value.dtype

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Parameter(shape={self.shape}, kind={self.kind!r})"


# ---------------------------------------------------------------------------
# matrix product
# ---------------------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched matrix product ``a @ b`` with strict shape checking."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return check_finite(a @ b, "matmul output")


def matmul_backward(grad_out: np.ndarray, a: np.ndarray, b: np.ndarray):
    """grad_a = g @ b^T, grad_b = a^T @ g."""
    grad_a = grad_out @ np.swapaxes(b, -1, -2)
    grad_b = np.swapaxes(a, -1, -2) @ grad_out
    return grad_a, grad_b


# ---------------------------------------------------------------------------
# layer normalization
# ---------------------------------------------------------------------------

def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine.

    Returns ``(y, cache)``; pass the cache to :func:`layer_norm_backward`.
    """
    d = x.shape[-1]
    if d == 0:
        raise ValueError("layer_norm on zero-width axis")
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    y = x_hat * gain + bias
    check_finite(y, "layer_norm output")
    return y, (x_hat, inv_std, gain)


def layer_norm_backward(grad_y: np.ndarray, cache):
    x_hat, inv_std, gain = cache
    lead = tuple(range(grad_y.ndim - 1))
    g = grad_y * gain
    grad_x = inv_std * (
        g
        - g.mean(axis=-1, keepdims=True)
        - x_hat * (g * x_hat).mean(axis=-1, keepdims=True)
    )
    grad_gain = (grad_y * x_hat).sum(axis=lead)
    grad_bias = grad_y.sum(axis=lead)
    return grad_x, grad_gain, grad_bias


# ---------------------------------------------------------------------------
# softmax and cross entropy
# ---------------------------------------------------------------------------

def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-stabilized softmax over the last axis.

    ``-inf`` entries (masked positions) are allowed in the input and map to
    exactly zero probability.
    """
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return check_finite(y, "softmax output")


def softmax_rows_backward(grad_y: np.ndarray, y: np.ndarray) -> np.ndarray:
    dot = (grad_y * y).sum(axis=-1, keepdims=True)
    return y * (grad_y - dot)


def cross_entropy(logits: np.ndarray, targets) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood plus its gradient.

    Gradient is ``(softmax(logits) - onehot(targets)) / n_rows``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy shapes: {logits.shape} vs {targets.shape}")
    n, v = logits.shape
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= v:
        raise ValueError("cross_entropy target out of range")
    z = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    log_probs = z - log_norm
    rows = np.arange(n)
    loss = float(-log_probs[rows, targets].mean())
    grad = np.exp(log_probs)
    grad[rows, targets] -= 1.0
    grad /= n
    check_finite(grad, "cross_entropy gradient")
    return loss, grad


# ---------------------------------------------------------------------------
# GELU (tanh approximation, consistent forward/backward pair)
# ---------------------------------------------------------------------------

_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + 0.044715 * x**3)
    return check_finite(0.5 * x * (1.0 + np.tanh(inner)), "gelu output")


def gelu_backward(grad_y: np.ndarray, x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return grad_y * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner)


# ---------------------------------------------------------------------------
# elementwise / shape primitives
# ---------------------------------------------------------------------------

def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")
    return check_finite(a + b, "add output")


def add_backward(grad_out: np.ndarray):
    return grad_out, grad_out


def scale(x: np.ndarray, c: float) -> np.ndarray:
    return check_finite(x * c, "scale output")


def scale_backward(grad_out: np.ndarray, c: float) -> np.ndarray:
    return grad_out * c


def transpose(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def transpose_backward(grad_out: np.ndarray) -> np.ndarray:
    return np.swapaxes(grad_out, -1, -2)


def split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    """(B, s, d) -> (B, H, s, d/H)."""
    b, s, d = x.shape
    if d % n_heads:
        raise ValueError(f"width {d} not divisible into {n_heads} heads")
    return x.reshape(b, s, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """(B, H, s, d/H) -> (B, s, d); inverse of split_heads."""
    b, h, s, hd = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b, s, h * hd)


def causal_mask(n: int, dtype=np.float64) -> np.ndarray:
    """(n, n) additive mask: 0 on/below the diagonal, -inf above."""
    mask = np.zeros((n, n), dtype=dtype)
    mask[np.triu_indices(n, k=1)] = -np.inf
    return mask


# ---------------------------------------------------------------------------
# embedding lookup
# ---------------------------------------------------------------------------

def embedding_gather(table: np.ndarray, ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= table.shape[0]:
        raise ValueError("embedding id out of range")
    return table[ids]


def segment_sum_rows(rows: np.ndarray, values: np.ndarray):
    """Sum ``values`` grouped by row id; summation keeps the original order
    within each group. Returns ``(unique_rows, per_row_sums)``.

    Orders of magnitude faster than ``np.add.at`` for the scatter patterns
    the backward passes produce.
    """
    order = np.argsort(rows, kind="stable")
    sorted_rows = rows[order]
    starts = np.flatnonzero(np.concatenate(([True], sorted_rows[1:] != sorted_rows[:-1])))
    sums = np.add.reduceat(values[order], starts, axis=0)
    return sorted_rows[starts], sums


def embedding_grad(grad_rows: np.ndarray, ids: np.ndarray, num_embeddings: int) -> np.ndarray:
    """Scatter-add of row gradients; repeated ids accumulate."""
    grad = np.zeros((num_embeddings, grad_rows.shape[-1]), dtype=grad_rows.dtype)
    rows, sums = segment_sum_rows(
        np.asarray(ids, dtype=np.int64).reshape(-1),
        grad_rows.reshape(-1, grad_rows.shape[-1]),
    )
    grad[rows] = sums
    return grad
