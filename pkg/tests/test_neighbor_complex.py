import math

import numpy as np
import pytest

from oracles import brute_complex_edges, brute_knn_sets
from trainscape.errors import ContractError
from trainscape.neighbor_complex import (EDGE_BB, EDGE_XB, EDGE_XX,
                                         attach_fuzzy_weights, build_complex,
                                         build_knn, export_complex_jsonl,
                                         sample_pair_batches, smooth_knn_bandwidth)


class TestKnn:
    def test_three_collinear_points(self):
        pts = np.array([[0.0], [1.0], [3.0]], dtype=np.float32)
        index = build_knn(pts, 1)
        assert index.indices[:, 0].tolist() == [1, 0, 1]

    def test_symmetric_square(self):
        pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float32)
        index = build_knn(pts, 2)
        expected = {0: {1, 3}, 1: {0, 2}, 2: {1, 3}, 3: {0, 2}}
        for i, row in enumerate(index.indices):
            assert set(row.tolist()) == expected[i]

    def test_matches_brute_force_exactly(self):
        rng = np.random.default_rng(17)
        pts = rng.standard_normal((200, 32)).astype(np.float32)
        index = build_knn(pts, 10)
        oracle = brute_knn_sets(pts, 10)
        for i in range(200):
            assert index.indices[i].tolist() == oracle[i]

    def test_neighbor_rows_sorted_and_self_free(self):
        rng = np.random.default_rng(2)
        pts = rng.standard_normal((40, 4)).astype(np.float32)
        index = build_knn(pts, 5)
        for i in range(40):
            assert i not in index.indices[i]
            d = index.distances[i]
            assert np.all(np.diff(d) >= 0)

    def test_k_out_of_range(self):
        pts = np.zeros((3, 2), dtype=np.float32)
        with pytest.raises(ContractError):
            build_knn(pts, 3)


class TestComplex:
    def test_boundary_smaller_than_k_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ContractError):
            build_complex(rng.standard_normal((20, 3)), rng.standard_normal((2, 3)), k=2)

    def test_two_clusters_with_midpoints(self):
        # 2 clusters of 5 data points, boundary = 3 points between them; with
        # k=2 every data point connects to its 2 nearest boundary points.
        rng = np.random.default_rng(4)
        left = rng.standard_normal((5, 2)) * 0.1
        right = rng.standard_normal((5, 2)) * 0.1 + [10.0, 0.0]
        X = np.vstack([left, right]).astype(np.float32)
        B = (np.array([[5.0, -0.2], [5.0, 0.0], [5.0, 0.2]])
             + rng.standard_normal((3, 2)) * 0.01).astype(np.float32)
        complex_ = build_complex(X, B, k=2)
        oracle = brute_complex_edges(X, B, 2)
        assert complex_.edges == oracle

    @pytest.mark.parametrize("k", [5, 15])
    def test_matches_brute_force_definition(self, k):
        rng = np.random.default_rng(k)
        X = rng.standard_normal((80, 8)).astype(np.float32)
        B = rng.standard_normal((25, 8)).astype(np.float32)
        complex_ = build_complex(X, B, k)
        assert complex_.edges == brute_complex_edges(X, B, k)

    def test_edge_count_bound(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((60, 5)).astype(np.float32)
        B = rng.standard_normal((20, 5)).astype(np.float32)
        k = 4
        complex_ = build_complex(X, B, k)
        assert len(complex_.edges) <= k * (2 * len(X) + len(B))

    def test_kinds_partition_by_vertex_type(self):
        rng = np.random.default_rng(10)
        complex_ = build_complex(rng.standard_normal((30, 3)).astype(np.float32),
                                 rng.standard_normal((10, 3)).astype(np.float32), 3)
        nx = complex_.n_data
        for (u, v), kind in complex_.edges.items():
            assert u < v
            if kind == EDGE_XX:
                assert v < nx
            elif kind == EDGE_XB:
                assert u < nx <= v
            else:
                assert u >= nx


class TestFuzzyWeights:
    def make_weighted(self, seed=1, nx=40, nb=12, k=4):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((nx, 6)).astype(np.float32)
        B = rng.standard_normal((nb, 6)).astype(np.float32)
        return attach_fuzzy_weights(build_complex(X, B, k))

    def test_nearest_neighbor_membership_is_one(self):
        complex_ = self.make_weighted()
        index = complex_.xx_index
        for i in range(complex_.n_data):
            j = int(index.indices[i, 0])
            key = (i, j) if i < j else (j, i)
            assert complex_.weights[key] >= 1.0 - 1e-12

    def test_fuzzy_union_hand_value(self):
        from trainscape.neighbor_complex import _fuzzy_union
        assert _fuzzy_union(0.5, 0.4) == pytest.approx(0.7)

    def test_membership_sums_hit_log2_k(self):
        rng = np.random.default_rng(3)
        pts = rng.standard_normal((50, 5)).astype(np.float32)
        k = 8
        index = build_knn(pts, k)
        for i in range(0, 50, 7):
            rho, sigma = smooth_knn_bandwidth(index.distances[i], math.log2(k))
            members = np.exp(-np.maximum(index.distances[i] - rho, 0.0) / sigma)
            assert members.sum() == pytest.approx(math.log2(k), abs=1e-3)

    def test_weights_in_unit_interval(self):
        complex_ = self.make_weighted(seed=5)
        values = np.array(list(complex_.weights.values()))
        assert np.all(values > 0)
        assert np.all(values <= 1.0 + 1e-12)

    def test_every_edge_weighted_once(self):
        complex_ = self.make_weighted(seed=6)
        assert set(complex_.weights) == set(complex_.edges)


class TestPairBatches:
    def make_complex(self, seed=0):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((30, 4)).astype(np.float32)
        B = rng.standard_normal((10, 4)).astype(np.float32)
        return attach_fuzzy_weights(build_complex(X, B, 3))

    def collect(self, complex_, rate, seed, batch_size=64):
        rng = np.random.default_rng(seed)
        return list(sample_pair_batches(complex_, rate, rng, batch_size))

    def test_counts_per_pass(self):
        complex_ = self.make_complex()
        batches = self.collect(complex_, rate=5, seed=1)
        total = sum(len(b) for b in batches)
        positives = sum(int((b.target > 0).sum()) for b in batches)
        negatives = sum(int((b.target == 0).sum()) for b in batches)
        assert positives == len(complex_.edges)
        assert negatives == 5 * len(complex_.edges)
        assert total == 6 * len(complex_.edges)

    def test_negatives_never_collide_with_edges(self):
        complex_ = self.make_complex(seed=2)
        for batch in self.collect(complex_, rate=6, seed=3):
            for u, v, t in zip(batch.left, batch.right, batch.target):
                if t == 0:
                    key = (int(min(u, v)), int(max(u, v)))
                    assert key not in complex_.edges
                    assert u != v

    def test_negatives_respect_vertex_kind(self):
        complex_ = self.make_complex(seed=4)
        nx = complex_.n_data
        for batch in self.collect(complex_, rate=4, seed=5):
            for u, v, t, kind in zip(batch.left, batch.right, batch.target, batch.kind):
                if t > 0:
                    continue
                if kind == EDGE_XX:
                    assert u < nx and v < nx
                elif kind == EDGE_XB:
                    assert u < nx <= v
                else:
                    assert u >= nx and v >= nx

    def test_fixed_seed_reproduces_stream(self):
        complex_ = self.make_complex(seed=8)

        def stream_bytes(seed):
            out = b""
            for b in self.collect(complex_, rate=5, seed=seed):
                out += b.left.tobytes() + b.right.tobytes() + b.target.tobytes()
            return out

        assert stream_bytes(7) == stream_bytes(7)
        assert stream_bytes(7) != stream_bytes(8)

    def test_positive_targets_are_edge_weights(self):
        complex_ = self.make_complex(seed=9)
        for batch in self.collect(complex_, rate=1, seed=2):
            for u, v, t in zip(batch.left, batch.right, batch.target):
                if t > 0:
                    key = (int(min(u, v)), int(max(u, v)))
                    assert t == pytest.approx(complex_.weights[key], rel=1e-6)


class TestExport:
    def test_jsonl_header_and_edges(self, tmp_path):
        rng = np.random.default_rng(12)
        complex_ = attach_fuzzy_weights(build_complex(
            rng.standard_normal((25, 3)).astype(np.float32),
            rng.standard_normal((8, 3)).astype(np.float32), 3))
        path = tmp_path / "complex.jsonl"
        export_complex_jsonl(complex_, path)
        import json
        lines = [json.loads(line) for line in path.read_text().splitlines()]
        assert lines[0] == {"k": 3, "n_data": 25, "n_boundary": 8,
                            "metric": "euclidean"}
        assert len(lines) - 1 == len(complex_.edges)
        kinds = {line["kind"] for line in lines[1:]}
        assert kinds == {EDGE_XX, EDGE_XB, EDGE_BB}
