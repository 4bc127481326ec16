import dataclasses
import os

import numpy as np
import pytest

from conftest import micro_model_cfg, micro_train_cfg
from memoryformer.model import LanguageModel, ModelConfig
from memoryformer.training import (
    Adam,
    TrainConfig,
    TrainingDiverged,
    evaluate_ppl,
    lr_at_step,
    run_ablation,
    run_training,
    train_step,
)


def tiny_model_cfg(**over):
    base = dict(n_layers=1, hidden=16, heads=2, tau=4, chunks=4, vocab=256, context=32)
    return ModelConfig(**{**base, **over})


def params_bytes(model):
    return b"".join(p.value.tobytes() for _, p in model.named_parameters())


class TestSchedule:
    def test_warmup_then_cosine(self):
        cfg = TrainConfig(base_lr=1.0, total_steps=1000, warmup_steps=100)
        assert lr_at_step(0, cfg) == pytest.approx(0.01)
        assert lr_at_step(99, cfg) == pytest.approx(1.0)
        assert lr_at_step(550, cfg) == pytest.approx(0.55, abs=0.01)
        assert lr_at_step(999, cfg) == pytest.approx(cfg.min_lr_ratio, abs=1e-4)

    def test_default_warmup_is_one_percent(self):
        assert TrainConfig(total_steps=2000).effective_warmup == 20

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(table_lr_multiplier=0.0)
        with pytest.raises(ValueError):
            TrainConfig(total_steps=100, warmup_steps=200)


class TestTrainStep:
    def test_zero_lr_keeps_params_bit_identical(self, small_dataset):
        model = LanguageModel(tiny_model_cfg(), seed=0)
        opt = Adam(list(model.named_parameters()), TrainConfig())
        before = params_bytes(model)
        batch = small_dataset.sample_batch(np.random.default_rng(0), 2, 32)
        train_step(model, batch, opt, lr=0.0)
        assert params_bytes(model) == before

    def test_single_batch_memorization(self, small_dataset):
        model = LanguageModel(micro_model_cfg(), seed=1)
        tcfg = TrainConfig(base_lr=3e-3, total_steps=200, warmup_steps=10)
        opt = Adam(list(model.named_parameters()), tcfg)
        batch = small_dataset.sample_batch(np.random.default_rng(1), 2, 32)
        for step in range(200):
            loss = train_step(model, batch, opt, lr_at_step(step, tcfg))
        assert loss < 0.1

    def test_deterministic_trajectories(self, small_dataset):
        losses = []
        for _ in range(2):
            model = LanguageModel(tiny_model_cfg(), seed=7)
            opt = Adam(list(model.named_parameters()), TrainConfig())
            rng = np.random.default_rng(7)
            run = [train_step(model, small_dataset.sample_batch(rng, 2, 32), opt, 1e-3)
                   for _ in range(10)]
            losses.append((run, params_bytes(model)))
        assert losses[0][0] == losses[1][0]
        assert losses[0][1] == losses[1][1]

    def test_divergence_raises(self, small_dataset):
        model = LanguageModel(tiny_model_cfg(), seed=0)
        next(iter(model.memory_layers()))[1].tables.value[...] = np.inf
        opt = Adam(list(model.named_parameters()), TrainConfig())
        batch = small_dataset.sample_batch(np.random.default_rng(0), 2, 32)
        with pytest.raises(TrainingDiverged):
            train_step(model, batch, opt, 1e-3)


class TestOptimizerScoping:
    def _one_step(self, multiplier, small_dataset, sparse=False):
        model = LanguageModel(tiny_model_cfg(), seed=3)
        tcfg = TrainConfig(table_lr_multiplier=multiplier, sparse_table_moments=sparse)
        opt = Adam(list(model.named_parameters()), tcfg)
        batch = small_dataset.sample_batch(np.random.default_rng(3), 2, 32)
        train_step(model, batch, opt, 1e-3)
        return model

    def test_multiplier_only_touches_tables(self, small_dataset):
        m1 = self._one_step(1.0, small_dataset)
        m3 = self._one_step(3.0, small_dataset)
        for (name, p1), (_, p3) in zip(m1.named_parameters(), m3.named_parameters()):
            if p1.kind == "table":
                assert not np.array_equal(p1.value, p3.value), name
            else:
                np.testing.assert_array_equal(p1.value, p3.value, err_msg=name)

    def test_first_step_table_update_is_scaled(self, small_dataset):
        init = LanguageModel(tiny_model_cfg(), seed=3)
        m1 = self._one_step(1.0, small_dataset)
        m3 = self._one_step(3.0, small_dataset)
        name, p0 = next((n, p) for n, p in init.named_parameters() if p.kind == "table")
        d1 = dict(m1.named_parameters())[name].value - p0.value
        d3 = dict(m3.named_parameters())[name].value - p0.value
        moved = np.abs(d1) > 1e-7
        assert moved.any()
        ratio = d3[moved] / d1[moved]
        np.testing.assert_allclose(ratio, 3.0, atol=1e-2)

    @pytest.mark.parametrize("sparse", [False, True])
    def test_untouched_rows_stay_put_on_fresh_state(self, small_dataset, sparse):
        model = self._one_step(3.0, small_dataset, sparse=sparse)
        fresh = LanguageModel(tiny_model_cfg(), seed=3)
        fresh_params = dict(fresh.named_parameters())
        for name, layer in model.memory_layers():
            touched_rows = {k: set(layer.trace.indices[:, k])
                            for k in range(layer.spec.K)}
            init_tables = fresh_params[f"{name}.tables"].value
            for k in range(layer.spec.K):
                for row in range(layer.spec.n_buckets):
                    if row not in touched_rows[k]:
                        np.testing.assert_array_equal(
                            layer.tables.value[k, row], init_tables[k, row],
                            err_msg=f"{name} table {k} row {row}")


class TestEvaluation:
    def test_untrained_ppl_near_vocab_size(self, small_dataset):
        model = LanguageModel(micro_model_cfg(), seed=5)
        loss, ppl = evaluate_ppl(model, small_dataset, max_tokens=4096)
        assert ppl == pytest.approx(256.0, rel=0.10)
        assert ppl == pytest.approx(np.exp(loss), rel=1e-9)

    def test_training_reduces_ppl(self, small_dataset):
        model = LanguageModel(tiny_model_cfg(), seed=6)
        _, before = evaluate_ppl(model, small_dataset, max_tokens=4096)
        tcfg = TrainConfig(total_steps=150, batch_size=4)
        opt = Adam(list(model.named_parameters()), tcfg)
        rng = np.random.default_rng(6)
        for step in range(150):
            train_step(model, small_dataset.sample_batch(rng, 4, 32), opt,
                       lr_at_step(step, tcfg))
        _, after = evaluate_ppl(model, small_dataset, max_tokens=4096)
        assert after < before

    def test_too_small_validation_shard_rejected(self):
        from memoryformer.corpus import CorpusDataset

        ds = CorpusDataset(b"ab" * 100, eval_frac=0.05)  # 10-token val shard
        model = LanguageModel(tiny_model_cfg(context=32), seed=0)
        with pytest.raises(ValueError):
            evaluate_ppl(model, ds)


class TestRunTraining:
    def test_writes_metrics_and_eval_csv(self, tmp_path, small_dataset):
        tcfg = TrainConfig(total_steps=6, batch_size=2, eval_interval=3)
        result = run_training(tiny_model_cfg(context=32), tcfg, str(tmp_path),
                              dataset=small_dataset)
        metrics = (tmp_path / "metrics.csv").read_text().strip().splitlines()
        assert metrics[0] == "step,loss,lr,tokens_per_sec"
        assert len(metrics) == 1 + 6
        evals = (tmp_path / "eval.csv").read_text().strip().splitlines()
        assert evals[0] == "step,val_loss,val_ppl"
        assert len(evals) == 1 + 2
        assert np.isfinite(result.val_loss)

    def test_monotone_validation_improvement_early(self, micro_runs):
        # held-out loss over the first 500 steps, one eval per 100-step window
        history = dict(micro_runs["mf"].eval_history)
        window_losses = [history[step] for step in (100, 200, 300, 400, 500)]
        assert all(a > b for a, b in zip(window_losses, window_losses[1:])), window_losses


class TestAblation:
    def test_grid_of_one_equals_single_run(self, small_dataset, tmp_path, small_corpus_file):
        mcfg = tiny_model_cfg(context=32)
        tcfg = TrainConfig(total_steps=5, batch_size=2, corpus=small_corpus_file)
        records = run_ablation([("only", mcfg, tcfg)], str(tmp_path))
        assert len(records) == 1 and records[0]["status"] == "ok"
        direct = run_training(mcfg, tcfg, None)
        assert records[0]["val_loss"] == pytest.approx(direct.val_loss, rel=1e-6)
        assert (tmp_path / "ablation_results.csv").exists()

    def test_per_run_failures_are_recorded(self, tmp_path, small_corpus_file):
        good = (tiny_model_cfg(context=32),
                TrainConfig(total_steps=2, batch_size=2, corpus=small_corpus_file))
        bad = (tiny_model_cfg(context=32),
               TrainConfig(total_steps=2, batch_size=2, corpus="/nonexistent.txt"))
        records = run_ablation([("good", *good), ("bad", *bad)], str(tmp_path))
        assert records[0]["status"] == "ok"
        assert records[1]["status"].startswith("failed")
        assert records[1]["val_loss"] is None
