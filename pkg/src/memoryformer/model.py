"""Transformer blocks built from lookup-table layers, plus a dense baseline.

Both block variants share the attention kernel and the pre-norm residual
wiring; they differ only in how tokens are projected:

* ``memoryformer``: q/k/v come from three lookup-table layers, and the
  feed-forward slot holds a two-layer table block (no activation between the
  layers, intermediate width ``(tau+e)*K`` so the second layer hashes
  ``tau+e`` bits per chunk). There is no attention output projection.
* ``baseline``: dense q/k/v/output projections and a 4x GELU feed-forward.

Per-token layers consume tokens folded to (batch*seq, d); attention is the
only place the sequence structure matters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .lsh import ChunkSpec
from .memory_layer import MemoryLayer
from .ops import Parameter

__all__ = [
    "ModelConfig",
    "LayerNorm",
    "Dense",
    "attention_forward",
    "attention_backward",
    "MemoryBlock",
    "MemoryFormerBlock",
    "BaselineBlock",
    "LanguageModel",
]

VARIANTS = ("memoryformer", "baseline")


@dataclass
class ModelConfig:
    n_layers: int
    hidden: int
    heads: int
    tau: int = 8
    chunks: int = 8
    expand_bits: int = 2
    temperature: float = 1.0
    vocab: int = 256
    context: int = 128
    variant: str = "memoryformer"
    memory_block_gelu: bool = False
    # keep the published block equation literally: the feed-forward branch
    # consumes the attention-branch norm output instead of the residual stream
    literal_ffn_input: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if min(self.n_layers, self.hidden, self.heads, self.vocab, self.context) < 1:
            raise ValueError("n_layers, hidden, heads, vocab, context must be >= 1")
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.variant == "memoryformer":
            if self.hidden != self.tau * self.chunks:
                raise ValueError(
                    f"hidden {self.hidden} != tau*chunks = {self.tau}*{self.chunks}"
                )
            if self.expand_bits < 0:
                raise ValueError("expand_bits must be >= 0")

    @property
    def qkv_spec(self) -> ChunkSpec:
        return ChunkSpec(d=self.hidden, K=self.chunks, tau=self.tau)

    @property
    def block_mid_width(self) -> int:
        return (self.tau + self.expand_bits) * self.chunks

    @property
    def block_layer2_spec(self) -> ChunkSpec:
        return ChunkSpec(
            d=self.block_mid_width, K=self.chunks, tau=self.tau + self.expand_bits
        )


class _SeedStream:
    """Deterministic per-layer seed dispenser (construction order fixed)."""

    def __init__(self, seed: int):
        self._rng = np.random.default_rng(np.random.SeedSequence(seed))

    def __call__(self) -> int:
        return int(self._rng.integers(0, 2**63 - 1))


class LayerNorm:
    def __init__(self, dim: int, *, eps: float = 1e-5, dtype=np.float32):
        self.eps = eps
        self.gain = Parameter(np.ones(dim, dtype=dtype), kind="norm")
        self.bias = Parameter(np.zeros(dim, dtype=dtype), kind="norm")
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, self._cache = ops.layer_norm(x, self.gain.value, self.bias.value, self.eps)
        return y

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        grad_x, g_gain, g_bias = ops.layer_norm_backward(grad_y, self._cache)
        self.gain.grad += g_gain
        self.bias.grad += g_bias
        return grad_x

    def parameters(self):
        yield "gain", self.gain
        yield "bias", self.bias


class Dense:
    """d_in -> d_out projection; used by the baseline blocks and the
    classifier head (the one dense layer the table variant keeps)."""

    def __init__(
        self,
        d_in: int,
        d_out: int,
        *,
        seed: int = 0,
        std: float = 0.02,
        bias: bool = True,
        dtype=np.float32,
    ):
        rng = np.random.default_rng(seed)
        self.weight = Parameter(rng.normal(0.0, std, (d_in, d_out)).astype(dtype), kind="dense")
        self.bias = Parameter(np.zeros(d_out, dtype=dtype), kind="dense") if bias else None
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        y = ops.matmul(x, self.weight.value)
        if self.bias is not None:
            y = y + self.bias.value
        return y

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        grad_x, grad_w = ops.matmul_backward(grad_y, self._x, self.weight.value)
        self.weight.grad += grad_w
        if self.bias is not None:
            self.bias.grad += grad_y.sum(axis=0)
        return grad_x

    def parameters(self):
        yield "weight", self.weight
        if self.bias is not None:
            yield "bias", self.bias


# ---------------------------------------------------------------------------
# multi-head attention (stateless kernel shared by both variants)
# ---------------------------------------------------------------------------

def attention_forward(q: np.ndarray, k: np.ndarray, v: np.ndarray, n_heads: int,
                      causal: bool = True):
    """Scaled dot-product attention over (B, s, d) inputs.

    Heads are contiguous d/H sub-vectors; outputs are re-concatenated with no
    output projection. Returns ``(out, cache)``.
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ValueError("q, k, v must share a shape")
    head_dim = q.shape[-1] // n_heads
    inv_scale = 1.0 / np.sqrt(head_dim)
    qh, kh, vh = (ops.split_heads(t, n_heads) for t in (q, k, v))
    scores = ops.matmul(qh, ops.transpose(kh)) * inv_scale
    if causal:
        scores = scores + ops.causal_mask(q.shape[1], dtype=scores.dtype)
    attn = ops.softmax_rows(scores)
    ctx = ops.matmul(attn, vh)
    return ops.merge_heads(ctx), (qh, kh, vh, attn, inv_scale)


def attention_backward(grad_out: np.ndarray, cache):
    qh, kh, vh, attn, inv_scale = cache
    n_heads = qh.shape[1]
    g_ctx = ops.split_heads(grad_out, n_heads)
    g_attn, g_vh = ops.matmul_backward(g_ctx, attn, vh)
    g_scores = ops.softmax_rows_backward(g_attn, attn) * inv_scale
    g_qh = g_scores @ kh
    g_kh = ops.transpose(g_scores) @ qh
    return ops.merge_heads(g_qh), ops.merge_heads(g_kh), ops.merge_heads(g_vh)


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------

class MemoryBlock:
    """Two lookup-table layers, each preceded by a norm, no activation between.

    The optional GELU (ablation switch) sits right after the first layer so
    the second norm still directly precedes the hashing.
    """

    def __init__(self, cfg: ModelConfig, *, seeds: _SeedStream, dtype=np.float32):
        d, mid = cfg.hidden, cfg.block_mid_width
        self.norm1 = LayerNorm(d, dtype=dtype)
        self.layer1 = MemoryLayer(
            cfg.qkv_spec, mid, temperature=cfg.temperature, seed=seeds(), dtype=dtype
        )
        self.norm2 = LayerNorm(mid, dtype=dtype)
        self.layer2 = MemoryLayer(
            cfg.block_layer2_spec, d, temperature=cfg.temperature, seed=seeds(), dtype=dtype
        )
        self.use_gelu = cfg.memory_block_gelu
        self._gelu_in = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self.layer1.forward(self.norm1.forward(x))
        if self.use_gelu:
            self._gelu_in = h
            h = ops.gelu(h)
        return self.layer2.forward(self.norm2.forward(h))

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        g = self.norm2.backward(self.layer2.backward(grad_y))
        if self.use_gelu:
            g = ops.gelu_backward(g, self._gelu_in)
        return self.norm1.backward(self.layer1.backward(g))

    def parameters(self):
        for name, layer in (
            ("norm1", self.norm1),
            ("layer1", self.layer1),
            ("norm2", self.norm2),
            ("layer2", self.layer2),
        ):
            for sub, p in layer.parameters():
                yield f"{name}.{sub}", p

    def memory_layers(self):
        yield "layer1", self.layer1
        yield "layer2", self.layer2


class MemoryFormerBlock:
    def __init__(self, cfg: ModelConfig, *, seeds: _SeedStream, dtype=np.float32):
        d = cfg.hidden
        self.heads = cfg.heads
        self.literal_ffn_input = cfg.literal_ffn_input
        self.attn_norm = LayerNorm(d, dtype=dtype)
        kwargs = dict(temperature=cfg.temperature, dtype=dtype)
        self.q_proj = MemoryLayer(cfg.qkv_spec, d, seed=seeds(), **kwargs)
        self.k_proj = MemoryLayer(cfg.qkv_spec, d, seed=seeds(), **kwargs)
        self.v_proj = MemoryLayer(cfg.qkv_spec, d, seed=seeds(), **kwargs)
        self.ffn = MemoryBlock(cfg, seeds=seeds, dtype=dtype)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, s, d = x.shape
        xn = self.attn_norm.forward(x)
        flat = xn.reshape(b * s, d)
        q = self.q_proj.forward(flat).reshape(b, s, d)
        k = self.k_proj.forward(flat).reshape(b, s, d)
        v = self.v_proj.forward(flat).reshape(b, s, d)
        attn_out, attn_cache = attention_forward(q, k, v, self.heads)
        z = x + attn_out
        ffn_in = xn if self.literal_ffn_input else z
        y = z + self.ffn.forward(ffn_in.reshape(b * s, d)).reshape(b, s, d)
        self._cache = (b, s, d, attn_cache)
        return y

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        b, s, d = grad_y.shape
        _, _, _, attn_cache = self._cache
        g_ffn_in = self.ffn.backward(grad_y.reshape(b * s, d)).reshape(b, s, d)
        grad_z = grad_y if self.literal_ffn_input else grad_y + g_ffn_in
        gq, gk, gv = attention_backward(grad_z, attn_cache)
        g_flat = (
            self.q_proj.backward(gq.reshape(b * s, d))
            + self.k_proj.backward(gk.reshape(b * s, d))
            + self.v_proj.backward(gv.reshape(b * s, d))
        )
        g_xn = g_flat.reshape(b, s, d)
        if self.literal_ffn_input:
            g_xn = g_xn + g_ffn_in
        return grad_z + self.attn_norm.backward(g_xn)

    def parameters(self):
        for name, layer in (
            ("attn_norm", self.attn_norm),
            ("q_proj", self.q_proj),
            ("k_proj", self.k_proj),
            ("v_proj", self.v_proj),
            ("ffn", self.ffn),
        ):
            for sub, p in layer.parameters():
                yield f"{name}.{sub}", p

    def memory_layers(self):
        yield "q_proj", self.q_proj
        yield "k_proj", self.k_proj
        yield "v_proj", self.v_proj
        for sub, layer in self.ffn.memory_layers():
            yield f"ffn.{sub}", layer


class BaselineBlock:
    """Standard pre-norm block: dense q/k/v/output plus a 4x GELU FFN."""

    def __init__(self, cfg: ModelConfig, *, seeds: _SeedStream, dtype=np.float32):
        d = cfg.hidden
        self.heads = cfg.heads
        self.attn_norm = LayerNorm(d, dtype=dtype)
        self.q_proj = Dense(d, d, seed=seeds(), dtype=dtype)
        self.k_proj = Dense(d, d, seed=seeds(), dtype=dtype)
        self.v_proj = Dense(d, d, seed=seeds(), dtype=dtype)
        self.out_proj = Dense(d, d, seed=seeds(), dtype=dtype)
        self.ffn_norm = LayerNorm(d, dtype=dtype)
        self.fc1 = Dense(d, 4 * d, seed=seeds(), dtype=dtype)
        self.fc2 = Dense(4 * d, d, seed=seeds(), dtype=dtype)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, s, d = x.shape
        xn = self.attn_norm.forward(x)
        flat = xn.reshape(b * s, d)
        q = self.q_proj.forward(flat).reshape(b, s, d)
        k = self.k_proj.forward(flat).reshape(b, s, d)
        v = self.v_proj.forward(flat).reshape(b, s, d)
        attn_out, attn_cache = attention_forward(q, k, v, self.heads)
        z = x + self.out_proj.forward(attn_out.reshape(b * s, d)).reshape(b, s, d)
        h = self.ffn_norm.forward(z).reshape(b * s, d)
        h1 = self.fc1.forward(h)
        y = z + self.fc2.forward(ops.gelu(h1)).reshape(b, s, d)
        self._cache = (b, s, d, attn_cache, h1)
        return y

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        b, s, d, attn_cache, h1 = self._cache
        g_h1 = ops.gelu_backward(self.fc2.backward(grad_y.reshape(b * s, d)), h1)
        grad_z = grad_y + self.ffn_norm.backward(self.fc1.backward(g_h1).reshape(b, s, d))
        g_attn_out = self.out_proj.backward(grad_z.reshape(b * s, d)).reshape(b, s, d)
        gq, gk, gv = attention_backward(g_attn_out, attn_cache)
        g_flat = (
            self.q_proj.backward(gq.reshape(b * s, d))
            + self.k_proj.backward(gk.reshape(b * s, d))
            + self.v_proj.backward(gv.reshape(b * s, d))
        )
        return grad_z + self.attn_norm.backward(g_flat.reshape(b, s, d))

    def parameters(self):
        for name, layer in (
            ("attn_norm", self.attn_norm),
            ("q_proj", self.q_proj),
            ("k_proj", self.k_proj),
            ("v_proj", self.v_proj),
            ("out_proj", self.out_proj),
            ("ffn_norm", self.ffn_norm),
            ("fc1", self.fc1),
            ("fc2", self.fc2),
        ):
            for sub, p in layer.parameters():
                yield f"{name}.{sub}", p

    def memory_layers(self):
        return iter(())


# ---------------------------------------------------------------------------
# the language model
# ---------------------------------------------------------------------------

class LanguageModel:
    """Token + learned positional embeddings, N blocks, final norm, and a
    dense vocabulary head (the sanctioned dense projection)."""

    def __init__(self, cfg: ModelConfig, *, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        seeds = _SeedStream(seed)
        emb_rng = np.random.default_rng(seeds())
        self.token_emb = Parameter(
            emb_rng.normal(0.0, 0.02, (cfg.vocab, cfg.hidden)).astype(dtype), kind="embedding"
        )
        self.pos_emb = Parameter(
            emb_rng.normal(0.0, 0.02, (cfg.context, cfg.hidden)).astype(dtype), kind="embedding"
        )
        block_cls = MemoryFormerBlock if cfg.variant == "memoryformer" else BaselineBlock
        self.blocks = [block_cls(cfg, seeds=seeds, dtype=dtype) for _ in range(cfg.n_layers)]
        self.final_norm = LayerNorm(cfg.hidden, dtype=dtype)
        self.head = Dense(cfg.hidden, cfg.vocab, seed=seeds(), bias=False, dtype=dtype)
        self._cache = None

    def forward(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        squeeze = tokens.ndim == 1
        if squeeze:
            tokens = tokens[None, :]
        b, s = tokens.shape
        if s > self.cfg.context:
            raise ValueError(f"sequence length {s} exceeds context {self.cfg.context}")
        x = ops.embedding_gather(self.token_emb.value, tokens) + self.pos_emb.value[:s]
        for block in self.blocks:
            x = block.forward(x)
        x = self.final_norm.forward(x)
        logits = self.head.forward(x.reshape(b * s, -1)).reshape(b, s, self.cfg.vocab)
        self._cache = (tokens, b, s, squeeze)
        return logits[0] if squeeze else logits

    def backward(self, grad_logits: np.ndarray) -> None:
        tokens, b, s, squeeze = self._cache
        if squeeze:
            grad_logits = grad_logits[None, :]
        g = self.head.backward(grad_logits.reshape(b * s, -1))
        g = self.final_norm.backward(g.reshape(b, s, -1))
        for block in reversed(self.blocks):
            g = block.backward(g)
        self.token_emb.grad += ops.embedding_grad(g, tokens, self.cfg.vocab)
        self.pos_emb.grad[:s] += g.sum(axis=0)

    def named_parameters(self):
        yield "token_emb", self.token_emb
        yield "pos_emb", self.pos_emb
        for i, block in enumerate(self.blocks):
            for sub, p in block.parameters():
                yield f"blocks.{i}.{sub}", p
        for sub, p in self.final_norm.parameters():
            yield f"final_norm.{sub}", p
        for sub, p in self.head.parameters():
            yield f"head.{sub}", p

    def memory_layers(self):
        for i, block in enumerate(self.blocks):
            for sub, layer in block.memory_layers():
                yield f"blocks.{i}.{sub}", layer

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    def n_params(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def generate(self, prompt: np.ndarray, n_new: int) -> np.ndarray:
        """Greedy continuation; smoke-test quality only."""
        out = list(np.asarray(prompt, dtype=np.int64))
        for _ in range(n_new):
            window = np.array(out[-self.cfg.context :], dtype=np.int64)
            logits = self.forward(window)
            out.append(int(np.argmax(logits[-1])))
        return np.array(out, dtype=np.int64)
