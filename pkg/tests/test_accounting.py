import numpy as np
import pytest

from memoryformer.accounting import (
    GIGA,
    MEGABYTE,
    crossover_ratio,
    flops_memory_layer,
    flops_memoryformer_block,
    flops_standard_block,
    memory_block_bytes,
    synthetic_bucket_histogram,
    table_memory_bytes,
    verify_flops_cells,
    verify_memory_cells,
)


class TestStandardBlockFlops:
    @pytest.mark.parametrize("d,non_attn,total", [
        (512, 6.4, 10.7), (768, 14.5, 20.9), (1024, 25.8, 34.4),
    ])
    def test_published_cells(self, d, non_attn, total):
        rep = flops_standard_block(2048, d)
        assert rep.non_attention_flops / GIGA == pytest.approx(non_attn, abs=0.05)
        assert rep.total / GIGA == pytest.approx(total, abs=0.05)

    def test_closed_forms(self):
        s, d = 100, 32
        rep = flops_standard_block(s, d)
        assert rep.attention_flops == 2 * s * s * d
        assert rep.non_attention_flops == 12 * s * d * d
        assert rep.total == sum(rep.components.values())

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            flops_standard_block(0, 8)


class TestMemoryFormerBlockFlops:
    def test_paper_mode_closed_form(self):
        s, d, tau, K = 100, 32, 4, 8
        rep = flops_memoryformer_block(s, d, tau, K)
        assert rep.attention_flops == 2 * s * s * d
        assert rep.non_attention_flops == 6 * K * s * d

    def test_exact_mode_counts_five_layers(self):
        s, d, tau, K, e = 100, 32, 4, 8, 2
        rep = flops_memoryformer_block(s, d, tau, K, e, mode="exact")
        expected = (3 * s * K * (tau + d)
                    + s * K * (tau + (tau + e) * K)
                    + s * K * ((tau + e) + d))
        assert rep.non_attention_flops == expected
        assert rep.total == rep.attention_flops + expected

    def test_width_must_factor(self):
        with pytest.raises(ValueError):
            flops_memoryformer_block(2048, 512, 8, 63)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            flops_memoryformer_block(2048, 512, 8, 64, mode="other")

    @pytest.mark.parametrize("d,K,non_attn,total", [
        (512, 64, 0.4, 4.7), (1024, 128, 1.6, 10.2),
    ])
    def test_reproducible_published_cells(self, d, K, non_attn, total):
        rep = flops_memoryformer_block(2048, d, 8, K)
        assert rep.non_attention_flops / GIGA == pytest.approx(non_attn, abs=0.05)
        assert rep.total / GIGA == pytest.approx(total, abs=0.05)

    def test_d768_column_is_inconsistent_with_its_own_closed_form(self):
        # The published 1.0 G / 7.4 G figures for the d=768 configuration sit
        # ~0.09 G above the 6Ksd closed form; pin the formula values so any
        # accidental "fix" that games the table check is caught here.
        rep = flops_memoryformer_block(2048, 768, 8, 96)
        assert rep.non_attention_flops / GIGA == pytest.approx(0.906, abs=0.001)
        assert rep.total / GIGA == pytest.approx(7.348, abs=0.001)

    def test_verify_cells_status(self):
        results = verify_flops_cells()
        assert len(results) == 12
        failing = {(r["label"], r["quantity"]) for r in results if not r["passed"]}
        assert failing == {("table-small", "non_attention"), ("table-small", "total")}


class TestCrossover:
    def test_published_ratio(self):
        assert 0.19 <= crossover_ratio(2048, 2048, 8) <= 0.20

    def test_long_sequence_limit(self):
        # attention dominates both variants as s grows
        assert crossover_ratio(10_000_000, 64, 8) == pytest.approx(1.0, abs=1e-2)

    def test_max_tau_limit(self):
        # tau = d collapses the table term toward s/(s+6d)
        s, d = 2048, 64
        expected = (2 * s * s * d + 6 * s * d) / (2 * s * s * d + 12 * s * d * d)
        assert crossover_ratio(s, d, d) == pytest.approx(expected, rel=1e-12)

    def test_requires_divisibility(self):
        with pytest.raises(ValueError):
            crossover_ratio(2048, 100, 8)


class TestMemorySizes:
    @pytest.mark.parametrize("tau,K,h,mb", [
        (4, 128, 512, 2.1), (8, 64, 512, 16.8), (10, 51, 512, 53.5),
    ])
    def test_published_layer_cells(self, tau, K, h, mb):
        assert table_memory_bytes(tau, K, h) / MEGABYTE == pytest.approx(mb, abs=0.1)

    def test_trivial_case(self):
        assert table_memory_bytes(1, 1, 1, 1) == 2

    @pytest.mark.parametrize("e,mb", [(0, 33.6), (1, 52.4), (2, 88.1), (3, 157.3)])
    def test_published_block_cells(self, e, mb):
        rep = memory_block_bytes(8, 64, 512, e)
        assert rep.block_megabytes == pytest.approx(mb, abs=0.1)

    def test_block_is_sum_of_layers(self):
        rep = memory_block_bytes(4, 8, 32, 2)
        assert rep.block_bytes == sum(rep.per_layer_bytes.values())

    def test_verify_cells_all_pass(self):
        results = verify_memory_cells()
        assert len(results) == 7
        assert all(r["passed"] for r in results)

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            table_memory_bytes(0, 1, 1)
        with pytest.raises(ValueError):
            memory_block_bytes(8, 63, 512, 2)


class TestAblationFlopsColumn:
    @pytest.mark.parametrize("tau,K,gflops", [(4, 128, 0.14), (8, 64, 0.07)])
    def test_per_layer_published_cells(self, tau, K, gflops):
        assert flops_memory_layer(2048, tau, K, 512) / GIGA == pytest.approx(
            gflops, abs=0.005)


class TestBucketHistograms:
    def test_synthetic_counts_concentrate(self):
        counts = synthetic_bucket_histogram(tau=8, samples=65536, seed=0)
        assert counts.sum() == 65536
        assert counts.min() >= 176 and counts.max() <= 336

    def test_single_sample(self):
        counts = synthetic_bucket_histogram(tau=4, samples=1, seed=1)
        assert counts.sum() == 1 and (counts > 0).sum() == 1

    def test_model_stats_count_every_token(self):
        from memoryformer.accounting import bucket_stats
        from memoryformer.model import LanguageModel, ModelConfig

        cfg = ModelConfig(n_layers=1, hidden=16, heads=2, tau=4, chunks=4,
                          vocab=11, context=8)
        model = LanguageModel(cfg, seed=0)
        stream = np.random.default_rng(1).integers(0, 11, 64)
        stats = bucket_stats(model, stream)
        assert len(stats) == 5
        for hist in stats.values():
            np.testing.assert_array_equal(hist.counts.sum(axis=1), 64)

    def test_single_token_counts_once_per_table(self):
        from memoryformer.accounting import bucket_stats
        from memoryformer.model import LanguageModel, ModelConfig

        cfg = ModelConfig(n_layers=1, hidden=16, heads=2, tau=4, chunks=4,
                          vocab=11, context=8)
        model = LanguageModel(cfg, seed=0)
        stats = bucket_stats(model, np.array([3]), seq_len=1)
        for hist in stats.values():
            np.testing.assert_array_equal(hist.counts.sum(axis=1), 1)

    def test_empty_stream_rejected(self):
        from memoryformer.accounting import bucket_stats
        from memoryformer.model import LanguageModel, ModelConfig

        cfg = ModelConfig(n_layers=1, hidden=16, heads=2, tau=4, chunks=4,
                          vocab=11, context=8)
        with pytest.raises(ValueError):
            bucket_stats(LanguageModel(cfg, seed=0), np.array([], dtype=int))
