import numpy as np
import pytest

from memoryformer.corpus import CorpusDataset, synthesize_corpus
from memoryformer.model import ModelConfig
from memoryformer.training import TrainConfig, run_training

MICRO_MODEL = dict(n_layers=2, hidden=64, heads=2, tau=8, chunks=8,
                   expand_bits=2, vocab=256, context=128)
MICRO_TRAIN = dict(base_lr=1e-3, table_lr_multiplier=3.0, total_steps=2000,
                   batch_size=8, seed=1234, corpus="builtin")


def micro_model_cfg(**over) -> ModelConfig:
    return ModelConfig(**{**MICRO_MODEL, **over})


def micro_train_cfg(**over) -> TrainConfig:
    return TrainConfig(**{**MICRO_TRAIN, **over})


@pytest.fixture(scope="session")
def small_dataset():
    """A 200 kB corpus for fast training tests."""
    return CorpusDataset(synthesize_corpus(200_000, seed=3))


@pytest.fixture(scope="session")
def small_corpus_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "small.txt"
    path.write_bytes(synthesize_corpus(200_000, seed=3))
    return str(path)


@pytest.fixture(scope="session")
def micro_runs():
    """The four full micro training runs shared by the acceptance criteria.

    One bundled-corpus dataset is shared; each run is otherwise independent
    and deterministic. Results carry the trained models.
    """
    dataset = CorpusDataset.from_source("builtin")
    specs = {
        "mf": (micro_model_cfg(), micro_train_cfg()),
        "baseline": (
            ModelConfig(n_layers=2, hidden=64, heads=2, vocab=256, context=128,
                        variant="baseline"),
            micro_train_cfg(),
        ),
        "mf_gelu": (micro_model_cfg(memory_block_gelu=True), micro_train_cfg()),
        "mf_lr1x": (micro_model_cfg(), micro_train_cfg(table_lr_multiplier=1.0)),
    }
    runs = {}
    for name, (mcfg, tcfg) in specs.items():
        runs[name] = run_training(mcfg, tcfg, None, dataset=dataset)
    runs["dataset"] = dataset
    return runs
