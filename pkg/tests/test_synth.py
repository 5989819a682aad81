"""Synthetic benchmark generator: determinism, planted structure, splits."""

from __future__ import annotations

import collections

import numpy as np
import pytest

from relrank import (
    SynthConfig,
    evaluate,
    generate,
    similarity_matrix,
    split_relevance,
    top_k,
    write_dataset,
)
from relrank.synth import load_splits, save_splits


SMALL = SynthConfig(n_items=80, n_clusters=8, raw_dim=12, truth_list_len=10, seed=5)


class TestConfigValidation:
    def test_truth_len_must_be_smaller_than_items(self):
        with pytest.raises(ValueError, match="truth_list_len"):
            SynthConfig(n_items=10, truth_list_len=30)

    def test_cluster_count_bounded(self):
        with pytest.raises(ValueError, match="n_clusters"):
            SynthConfig(n_items=10, n_clusters=11, truth_list_len=5)

    def test_zero_noise_allowed(self):
        assert SynthConfig(noise_sigma=0.0).noise_sigma == 0.0

    @pytest.mark.parametrize("field", ["n_items", "n_clusters", "raw_dim", "n_channels"])
    def test_counts_positive(self, field):
        with pytest.raises(ValueError, match=field):
            SynthConfig(**{field: 0})


class TestGenerate:
    def test_deterministic(self):
        a = generate(SMALL)
        b = generate(SMALL)
        assert a.relevance.entries == b.relevance.entries
        assert a.splits == b.splits
        for ca, cb in zip(a.channels, b.channels):
            assert ca == cb

    def test_seed_matters(self):
        a = generate(SMALL)
        b = generate(SynthConfig(n_items=80, n_clusters=8, raw_dim=12, truth_list_len=10, seed=6))
        assert a.channels[0] != b.channels[0]

    def test_truth_lists_exact_length_and_no_self(self):
        ds = generate(SMALL)
        for query, members in ds.relevance.entries.items():
            assert len(members) == SMALL.truth_list_len
            assert query not in members
            assert len(set(members)) == len(members)

    def test_truth_len_capped_by_pool(self):
        ds = generate(SynthConfig(n_items=8, n_clusters=2, raw_dim=4, truth_list_len=7, seed=1))
        for members in ds.relevance.entries.values():
            assert len(members) == 7  # n_items - 1

    def test_channels_share_registry_and_differ(self):
        ds = generate(SMALL)
        assert len(ds.channels) == SMALL.n_channels
        ids = ds.channels[0].ids
        for channel in ds.channels:
            assert channel.ids == ids
            assert channel.pooled
            assert channel.dim == SMALL.raw_dim
        assert ds.channels[0] != ds.channels[1]

    def test_split_partition_and_balance(self):
        ds = generate(SMALL)
        counts = collections.Counter(ds.splits.values())
        assert sum(counts.values()) == SMALL.n_items
        # 45/10/45 of 80, cluster-balanced: 10 per cluster -> 4/1/5 or so
        assert counts["train"] == pytest.approx(0.45 * SMALL.n_items, abs=4)
        assert counts["val"] == pytest.approx(0.10 * SMALL.n_items, abs=4)
        assert counts["test"] == pytest.approx(0.45 * SMALL.n_items, abs=4)

    def test_zero_noise_lists_start_with_own_cluster(self):
        config = SynthConfig(
            n_items=60, n_clusters=6, raw_dim=8, truth_list_len=12, noise_sigma=0.0, seed=2
        )
        ds = generate(config)
        ids = list(ds.relevance.candidate_ids)
        cluster = {item: i % config.n_clusters for i, item in enumerate(ids)}
        per_cluster = 60 // 6
        for query, members in ds.relevance.entries.items():
            same = per_cluster - 1  # cluster mates, excluding the query
            head = members[:same]
            assert all(cluster[m] == cluster[query] for m in head)
            # ties broken by ascending id
            assert head == sorted(head)


class TestSplitRelevance:
    def test_filters_queries_keeps_pool(self):
        ds = generate(SMALL)
        test_table = split_relevance(ds, "test")
        assert all(ds.splits[q] == "test" for q in test_table.entries)
        assert test_table.candidate_ids == ds.relevance.candidate_ids
        total = sum(len(split_relevance(ds, s).entries) for s in ("train", "val", "test"))
        assert total == SMALL.n_items

    def test_unknown_split(self):
        ds = generate(SMALL)
        with pytest.raises(ValueError, match="unknown split"):
            split_relevance(ds, "dev")


class TestDatasetFiles:
    def test_writes_expected_files(self, tmp_path):
        ds = generate(SMALL)
        written = write_dataset(ds, tmp_path / "data")
        names = [p.name for p in written]
        assert names == [
            "channel_0.cbvf",
            "channel_1.cbvf",
            "train.rel",
            "val.rel",
            "test.rel",
            "candidates.cand",
            "splits.txt",
        ]
        for path in written:
            assert path.exists() and path.stat().st_size > 0

    def test_splits_round_trip(self, tmp_path):
        ds = generate(SMALL)
        path = tmp_path / "splits.txt"
        save_splits(ds.splits, path)
        assert load_splits(path) == ds.splits


class TestPlantedSignal:
    def test_baseline_beats_random_ranking_five_fold(self):
        # defaults: random ranking recovers 50/(n-1) of any truth list in
        # expectation; the raw cosine baseline must exceed five times that
        config = SynthConfig(seed=0)
        ds = generate(config)
        test_table = split_relevance(ds, "test")
        random_recall = 50.0 / (config.n_items - 1)
        for channel in ds.channels:
            matrix = similarity_matrix(channel, channel)
            predictions = top_k(matrix, 300)
            report = evaluate(test_table, predictions, k_recall=(50,))
            assert report.recall_at[50] >= 5.0 * random_recall

    def test_more_noise_does_not_help_baseline(self):
        # mean baseline recall@50 over 5 seeds, non-increasing in sigma
        def mean_recall(sigma: float) -> float:
            values = []
            for seed in range(5):
                ds = generate(SynthConfig(noise_sigma=sigma, seed=seed))
                table = split_relevance(ds, "test")
                matrix = similarity_matrix(ds.channels[0], ds.channels[0])
                report = evaluate(table, top_k(matrix, 300), k_recall=(50,))
                values.append(report.recall_at[50])
            return float(np.mean(values))

        recalls = [mean_recall(sigma) for sigma in (0.0, 0.5, 1.0)]
        assert recalls[0] >= recalls[1] >= recalls[2]
