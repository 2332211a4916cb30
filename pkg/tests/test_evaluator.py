import logging

import numpy as np
import pytest

from gckd.data.synth import DatasetSpec, generate
from gckd.errors import ShapeError, UsageError
from gckd.evaluation.evaluator import RetrievalIndex, build_index, evaluate
from gckd.model.params import ModelConfig, init_model

from conftest import unit_rows


def _brute_force(index, ks):
    """Per-query loops over an explicitly sorted gallery."""
    ranks = {k: [] for k in ks}
    aps = []
    for q, qid in zip(index.queries, index.query_ids):
        scored = sorted(range(len(index.gallery)), key=lambda g: (-float(np.dot(q, index.gallery[g])), g))
        relevant = [index.gallery_ids[g] == qid for g in scored]
        if not any(relevant):
            continue
        first = relevant.index(True)
        for k in ks:
            ranks[k].append(first < k)
        hits, precisions = 0, []
        for pos, rel in enumerate(relevant, start=1):
            if rel:
                hits += 1
                precisions.append(hits / pos)
        aps.append(sum(precisions) / hits)
    return {k: 100.0 * sum(v) / len(v) for k, v in ranks.items()}, 100.0 * sum(aps) / len(aps)


def test_single_correct_query():
    gallery = np.array([[1.0, 0.0], [0.0, 1.0]])
    index = RetrievalIndex(gallery, [7, 8], np.array([[1.0, 0.0]]), [7])
    report = evaluate(index, ks=(1,))
    assert report.rank1 == 100.0
    assert report.map == 100.0


def test_correct_item_at_rank_two():
    angles = np.linspace(0.0, 1.2, 10)
    gallery = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    ids = np.arange(10)
    ids[1] = 99
    index = RetrievalIndex(gallery, ids, gallery[:1], [99])
    report = evaluate(index)
    assert report.rank1 == 0.0
    assert report.rank5 == 100.0
    assert report.map == pytest.approx(50.0)


def test_matches_bruteforce_oracle(rng):
    ks = (1, 5, 10)
    gallery, queries = unit_rows(rng, 50, 6), unit_rows(rng, 20, 6)
    gallery_ids = rng.integers(0, 10, size=50)
    query_ids = rng.integers(0, 10, size=20)
    index = RetrievalIndex(gallery, gallery_ids, queries, query_ids)
    report = evaluate(index, ks)
    expected_rank, expected_map = _brute_force(index, ks)
    for k in ks:
        assert report.rank[k] == pytest.approx(expected_rank[k])
    assert report.map == pytest.approx(expected_map)


def test_permuting_queries_changes_nothing(rng):
    gallery, queries = unit_rows(rng, 30, 4), unit_rows(rng, 12, 4)
    gallery_ids, query_ids = rng.integers(0, 6, size=30), rng.integers(0, 6, size=12)
    base = evaluate(RetrievalIndex(gallery, gallery_ids, queries, query_ids))
    perm = rng.permutation(12)
    shuffled = evaluate(RetrievalIndex(gallery, gallery_ids, queries[perm], query_ids[perm]))
    assert shuffled.rank == pytest.approx(base.rank)
    assert shuffled.map == pytest.approx(base.map)


def test_permuting_gallery_rows_changes_nothing(rng):
    gallery, queries = unit_rows(rng, 30, 4), unit_rows(rng, 12, 4)
    gallery_ids, query_ids = rng.integers(0, 6, size=30), rng.integers(0, 6, size=12)
    base = evaluate(RetrievalIndex(gallery, gallery_ids, queries, query_ids))
    perm = rng.permutation(30)
    shuffled = evaluate(RetrievalIndex(gallery[perm], gallery_ids[perm], queries, query_ids))
    assert shuffled.rank == pytest.approx(base.rank)
    assert shuffled.map == pytest.approx(base.map)


def test_full_map_needs_every_match_ranked_first():
    angles = np.deg2rad([0.0, 10.0, 20.0, 90.0])
    gallery = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    query = np.array([[1.0, 0.0]])
    assert evaluate(RetrievalIndex(gallery, [1, 1, 2, 2], query, [1]), ks=(1,)).map == pytest.approx(100.0)
    # the wrong item at 10 degrees now sits between the two matches
    report = evaluate(RetrievalIndex(gallery, [1, 2, 1, 2], query, [1]), ks=(1,))
    assert report.rank1 == 100.0
    assert report.map == pytest.approx(100.0 * (1.0 + 2.0 / 3.0) / 2.0)


@pytest.mark.parametrize("seed", range(20))
def test_full_map_iff_matches_outrank_the_rest(seed):
    rng = np.random.default_rng(seed)
    gallery, queries = unit_rows(rng, 4, 2), unit_rows(rng, 3, 2)
    gallery_ids, query_ids = np.array([0, 0, 1, 1]), rng.integers(0, 2, size=3)
    sims = queries @ gallery.T
    separated = all(sims[q, gallery_ids == qid].min() > sims[q, gallery_ids != qid].max()
                    for q, qid in enumerate(query_ids))
    report = evaluate(RetrievalIndex(gallery, gallery_ids, queries, query_ids), ks=(1,))
    assert (report.map > 100.0 - 1e-9) == separated


def test_rank_is_monotone_in_k(rng):
    index = RetrievalIndex(unit_rows(rng, 40, 5), rng.integers(0, 8, size=40),
                           unit_rows(rng, 15, 5), rng.integers(0, 8, size=15))
    report = evaluate(index, ks=(1, 2, 5, 10, 20))
    values = [report.rank[k] for k in sorted(report.rank)]
    assert values == sorted(values)
    assert 0.0 <= report.map <= 100.0


def test_queries_without_gallery_identity_are_excluded(caplog):
    gallery = np.array([[1.0, 0.0], [0.0, 1.0]])
    queries = np.array([[1.0, 0.0], [0.0, 1.0]])
    with caplog.at_level(logging.WARNING, logger="gckd.evaluation.evaluator"):
        report = evaluate(RetrievalIndex(gallery, [1, 2], queries, [1, 5]), ks=(1,))
    assert report.num_queries == 1 and report.num_excluded == 1
    assert report.rank1 == 100.0
    assert "excluded" in caplog.text
    with pytest.raises(UsageError):
        evaluate(RetrievalIndex(gallery, [1, 2], queries, [3, 4]))


def test_malformed_index_rejected(rng):
    with pytest.raises(ShapeError):
        RetrievalIndex(unit_rows(rng, 3, 4), [0, 1, 2], unit_rows(rng, 2, 5), [0, 1])
    with pytest.raises(ShapeError):
        RetrievalIndex(unit_rows(rng, 3, 4), [0, 1], unit_rows(rng, 2, 4), [0, 1])
    with pytest.raises(UsageError):
        RetrievalIndex(unit_rows(rng, 3, 4), [0, 1, 2], np.zeros((0, 4)), [])


def test_build_index_both_splits(tiny_config, tiny_data):
    dataset, truth = tiny_data
    params = init_model(0, ModelConfig(embed_dim=8), 8, 2)
    target = build_index(params, dataset, truth, "target")
    assert target.gallery.shape == (len(dataset.target_images), 8)
    np.testing.assert_array_equal(target.query_ids, truth.text_ids)
    source = build_index(params, dataset, None, "source")
    assert source.queries.shape[0] == len(dataset.source_texts)
    with pytest.raises(UsageError):
        build_index(params, dataset, truth, "validation")


def test_random_init_is_chance_level():
    spec = DatasetSpec(num_identities_source=1, num_identities_target=100, samples_per_identity_per_modality=1,
                       d_raw=8, rng_seed=5)
    dataset, truth = generate(spec)
    scores = [evaluate(build_index(init_model(seed, ModelConfig(embed_dim=8), 8, 2), dataset, truth)).rank1
              for seed in range(10)]
    assert abs(np.mean(scores) - 1.0) <= 3.0
