"""Lookup-table transformer blocks with a hand-derived numpy training stack.

Dense projections are replaced by hash-and-retrieve table layers: each token
is split into chunks, every chunk selects one row of a learnable table via
its sign pattern, and the rows are summed with closed-form bucket weights.
The package provides the hashing primitives, the trainable layers and blocks,
a desk-scale byte-level trainer, finite-difference gradient verification, and
an accountant that reproduces the published FLOPs/storage figures.
"""

__version__ = "0.1.0"

from .lsh import (
    ChunkSpec,
    bucket_index,
    bucket_weight,
    bucket_weight_grad,
    bucket_weight_naive,
    decode_index,
    encode_index,
    sign_binarize,
    split_chunks,
)
from .memory_layer import (
    BucketCode,
    HashTableSet,
    MemoryLayer,
    RetrievalTrace,
    TableRowUpdate,
    init_tables,
    memory_backward,
    memory_forward,
    table_init_std,
)
from .model import (
    BaselineBlock,
    LanguageModel,
    MemoryBlock,
    MemoryFormerBlock,
    ModelConfig,
    attention_forward,
)
from .ops import NonFiniteError, Parameter
from .training import Adam, TrainConfig, TrainingDiverged, evaluate_ppl, run_ablation, run_training
from .corpus import CorpusDataset, synthesize_corpus, write_default_corpus
from .accounting import (
    BucketHistogram,
    FlopsReport,
    MemoryReport,
    bucket_stats,
    crossover_ratio,
    flops_memory_layer,
    flops_memoryformer_block,
    flops_standard_block,
    memory_block_bytes,
    synthetic_bucket_histogram,
    table_memory_bytes,
)
from .gradcheck import run_gradcheck

__all__ = [name for name in dir() if not name.startswith("_")]
