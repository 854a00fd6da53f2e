import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from oracles import brute_force_mining, unit_distance
from udgan.estimator import PairMiner
from udgan.mining import (MinedPair, distance_matrix, mine_pairs, rank_all, read_pairs_csv,
                          reid_distance, top1_precision, validate_mining, write_pairs_csv)


def _angles(*degrees):
    return np.array([[math.cos(math.radians(d)), math.sin(math.radians(d))] for d in degrees])


def test_reid_distance_cases():
    assert reid_distance([1, 0], [5, 0]) == 0.0
    assert reid_distance([1, 0], [0, 3]) == pytest.approx(math.sqrt(2))
    assert reid_distance([1, 1], [-2, -2]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        reid_distance([0, 0], [1, 0])
    with pytest.raises(ValueError):
        reid_distance([1, 0, 0], [1, 0])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-10, 10)).filter(
    lambda a: np.all(np.linalg.norm(a, axis=1) > 1e-3)))
def test_distance_matrix_matches_scalar_oracle(points):
    d = distance_matrix(points)
    for i in range(5):
        for j in range(5):
            assert d[i, j] == pytest.approx(unit_distance(points[i], points[j]), abs=1e-6)
    assert np.allclose(d, d.T) and np.all(d >= 0) and np.all(d <= 2 + 1e-12)


def test_rank_all_example():
    order = rank_all([[1, 0], [0.99, 0.14], [0, 1]])
    assert order.tolist() == [[1, 2], [0, 2], [1, 0]]


def test_rank_all_ties_go_to_smaller_index():
    pts = [[1, 0], [0, 1], [0, 1], [0, 1]]
    assert rank_all(pts)[0].tolist() == [1, 2, 3]
    assert rank_all(pts)[2].tolist() == [1, 3, 0]


def test_rank_all_invariant_to_scaling_and_rotation():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(12, 4))
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    scaled = pts * rng.uniform(0.5, 3.0, size=(12, 1))
    assert np.array_equal(rank_all(pts), rank_all(scaled @ q))


def test_rank_all_permutation_equivariant():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(10, 3))
    perm = rng.permutation(10)
    inv = np.argsort(perm)
    ranked = rank_all(pts[perm])
    assert np.array_equal(perm[ranked[inv]], rank_all(pts))


def test_two_clusters_keep_everything():
    pairs, report = mine_pairs(_angles(0, 5, 90, 95), k=1)
    assert [(p.query_index, p.match_index) for p in pairs] == [(0, 1), (1, 0), (2, 3), (3, 2)]
    assert report.kept_pairs == 4 and report.self_pairs == 0


def test_outlier_becomes_self_pair():
    pts = _angles(0, 10, 20, 90)
    pairs, report = mine_pairs(pts, k=2)
    assert pairs[3] == MinedPair(3, 3, True, 0.0)
    assert report.self_pairs == 1 and report.kept_fraction == 0.75
    # with k >= M-1 every nearest neighbour is mutual
    assert mine_pairs(pts, k=3)[1].self_pairs == 0


def test_two_points_pair_with_each_other():
    pairs, _ = mine_pairs([[1, 0], [0, 1]], k=5)
    assert [(p.query_index, p.match_index, p.is_self_pair) for p in pairs] == [(0, 1, False),
                                                                            (1, 0, False)]


def test_mining_rejects_degenerate_input():
    with pytest.raises(ValueError):
        mine_pairs([[1, 0]])
    with pytest.raises(ValueError):
        mine_pairs([[1, 0], [0, 1]], k=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 25), st.integers(1, 6), st.integers(0, 10_000))
def test_mining_matches_brute_force(m, k, seed):
    pts = np.random.default_rng(seed).normal(size=(m, 3))
    got = [(p.query_index, p.match_index, p.is_self_pair) for p in mine_pairs(pts, k)[0]]
    assert got == brute_force_mining(pts, k)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 20), st.integers(0, 10_000))
def test_kept_pairs_monotone_in_k(m, seed):
    pts = np.random.default_rng(seed).normal(size=(m, 4))
    kept = [mine_pairs(pts, k)[1].kept_pairs for k in range(1, m)]
    assert kept == sorted(kept)
    assert kept[-1] == m


def test_validate_mining_precision():
    pairs = [MinedPair(0, 1, False, 0.1), MinedPair(1, 0, False, 0.1),
             MinedPair(2, 3, False, 0.2), MinedPair(3, 0, False, 0.3), MinedPair(4, 4, True, 0.0)]
    report = validate_mining(pairs, [7, 7, 8, 8, 9])
    assert report.precision == 0.75 and report.correct_pairs == 3
    assert validate_mining(pairs[:2], [1, 1]).precision == 1.0
    assert validate_mining([MinedPair(0, 0, True, 0.0)], [1]).precision is None
    with pytest.raises(ValueError):
        validate_mining(pairs, [1, 2])


def test_top1_precision():
    pts = _angles(0, 5, 90, 95)
    assert top1_precision(pts, [0, 0, 1, 1]) == 1.0
    assert top1_precision(pts, [0, 1, 1, 0]) == 0.0


def test_pairs_csv_round_trip(tmp_path):
    paths = [f"train/{i:04d}_c1.png" for i in range(4)]
    pairs, _ = mine_pairs(_angles(0, 10, 20, 90), k=2)
    write_pairs_csv(tmp_path / "pairs.csv", pairs, paths)
    assert read_pairs_csv(tmp_path / "pairs.csv", paths) == pairs
    assert (tmp_path / "pairs.csv").read_text().splitlines()[0] == \
        "query_path,match_path,is_self_pair,distance"
    with pytest.raises(ValueError):
        read_pairs_csv(tmp_path / "pairs.csv", paths[:2])


def test_pair_miner_estimator():
    est = PairMiner(k=2)
    assert clone(est).get_params() == {"k": 2}
    match = est.fit_predict(_angles(0, 10, 20, 90), y=[0, 0, 0, 1])
    assert match.tolist() == [1, 0, 1, 3]
    assert est.report_.precision == 1.0 and est.n_features_in_ == 2
    with pytest.raises(ValueError):
        PairMiner().fit(np.zeros((3, 2)))


@pytest.mark.parametrize("noise", [0.6, 0.8, 1.0, 1.3, 1.6, 2.0])
def test_filter_never_hurts_precision_on_clustered_data(noise):
    filtered, raw = [], []
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        labels = np.repeat(np.arange(20), 4)
        emb = rng.normal(size=(20, 16))[labels] + noise * rng.normal(size=(80, 16))
        filtered.append(validate_mining(mine_pairs(emb, 5)[0], labels).precision)
        raw.append(top1_precision(emb, labels))
    assert np.mean(filtered) >= np.mean(raw)
