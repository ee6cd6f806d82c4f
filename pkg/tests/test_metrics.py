import numpy as np
import pytest

from oracles import (brute_boundary_preserving, brute_eval_sem, brute_nn_preserving,
                     brute_pearson)
from trainscape.errors import ContractError, DegenerateInputError
from trainscape.metrics import (MetricsReport, SplitMetrics, boundary_preserving,
                                eval_sem, nn_preserving, pca_fit, pca_project,
                                pca_reconstruct, pearson, ppr, temporal_pv)
from trainscape.numerics import MlpParams
from trainscape.subject import SubjectCheckpoint
from trainscape.visualizer import VisualizationModel


class TestNnPreserving:
    def test_isometric_projection_scores_one(self):
        rng = np.random.default_rng(0)
        Y = rng.standard_normal((40, 2))
        X = np.hstack([Y, np.zeros((40, 6))])
        assert nn_preserving(X, Y, k=5) == 1.0

    def test_line_with_order_preserving_projection(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        Y = 2.0 * X + 7.0
        assert nn_preserving(np.hstack([X, np.zeros((4, 2))]),
                             np.hstack([Y, np.zeros((4, 1))]), k=1) == 1.0

    def test_scrambled_assignment_scores_near_chance(self):
        rng = np.random.default_rng(1)
        n, k = 100, 10
        rates = []
        for trial in range(30):
            Y = rng.standard_normal((n, 2))
            X = np.hstack([Y, np.zeros((n, 4))])[rng.permutation(n)]
            rates.append(nn_preserving(X, Y, k))
        assert np.mean(rates) == pytest.approx(k / (n - 1), abs=0.05)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((60, 8))
        Y = rng.standard_normal((60, 2))
        assert nn_preserving(X, Y, 7) == pytest.approx(
            brute_nn_preserving(X, Y, 7), abs=1e-12)

    def test_invariant_under_isometry(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((50, 6))
        Y = rng.standard_normal((50, 2))
        theta = 1.1
        rot = np.array([[np.cos(theta), -np.sin(theta)],
                        [np.sin(theta), np.cos(theta)]])
        moved = Y @ rot.T + np.array([4.0, -2.0])
        assert nn_preserving(X, Y, 9) == pytest.approx(
            nn_preserving(X, moved, 9), abs=1e-12)


class TestBoundaryPreserving:
    def test_identity_projection_scores_one(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((30, 2))
        B = rng.standard_normal((12, 2))
        assert boundary_preserving(X, X.copy(), B, B.copy(), k=4) == 1.0

    def test_reversed_boundary_rows_drop_below_one(self):
        # 8 data points on a ring, boundary points at distinct radii; reversing
        # the low-dimensional boundary rows misaligns every counterpart
        angles = np.linspace(0, 2 * np.pi, 8, endpoint=False)
        X = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        B = np.array([[0.1 * r, 0.0] for r in range(1, 6)])
        B_rev = B[::-1].copy()
        rate = boundary_preserving(X, X.copy(), B, B_rev, k=2)
        brute = brute_boundary_preserving(X, X.copy(), B, B_rev, 2)
        assert rate == pytest.approx(brute, abs=1e-12)
        assert rate < 1.0

    def test_rate_bounded(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((25, 3))
        Y = rng.standard_normal((25, 2))
        B = rng.standard_normal((10, 3))
        B2 = rng.standard_normal((10, 2))
        rate = boundary_preserving(X, Y, B, B2, 3)
        assert 0.0 <= rate <= 1.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((40, 5))
        Y = rng.standard_normal((40, 2))
        B = rng.standard_normal((15, 5))
        B2 = rng.standard_normal((15, 2))
        assert boundary_preserving(X, Y, B, B2, 5) == pytest.approx(
            brute_boundary_preserving(X, Y, B, B2, 5), abs=1e-12)

    def test_small_boundary_set_rejected(self):
        X = np.zeros((10, 2))
        B = np.zeros((3, 2))
        with pytest.raises(ContractError):
            boundary_preserving(X, X, B, B, k=3)


def identity_model(h):
    eye = np.eye(h, dtype=np.float32)
    enc = MlpParams([h, 2], [eye[:, :2].copy()], [np.zeros((1, 2), dtype=np.float32)],
                    ["identity"])
    dec = MlpParams([2, h], [eye[:2, :].copy()], [np.zeros((1, h), dtype=np.float32)],
                    ["identity"])
    return VisualizationModel(1, enc, dec)


def plane_checkpoint(h=4, class_count=3, seed=0):
    rng = np.random.default_rng(seed)
    feature = MlpParams([h, h], [np.eye(h, dtype=np.float32)],
                        [np.zeros((1, h), dtype=np.float32)], ["identity"])
    head = MlpParams([h, class_count],
                     [rng.standard_normal((h, class_count)).astype(np.float32)],
                     [np.zeros((1, class_count), dtype=np.float32)], ["identity"])
    return SubjectCheckpoint(1, feature, head)


class TestPpr:
    def test_identity_roundtrip_is_one(self):
        # data living on the first two axes survives the identity autoencoder
        rng = np.random.default_rng(7)
        X = np.hstack([rng.standard_normal((20, 2)), np.zeros((20, 2))]).astype(np.float32)
        ckpt = plane_checkpoint(h=4)
        assert ppr(ckpt, identity_model(4), X) == 1.0

    def test_constant_decoder_maps_to_single_class(self):
        rng = np.random.default_rng(8)
        ckpt = plane_checkpoint(h=4, seed=8)
        model = identity_model(4)
        model.decoder.weights[0][:] = 0
        model.decoder.biases[0][:] = np.float32([5.0, 0.0, 0.0, 0.0])
        X = rng.standard_normal((50, 4)).astype(np.float32)
        from trainscape.subject import predict
        _, direct, _ = predict(ckpt, X)
        const_rep = np.array([[5.0, 0, 0, 0]], dtype=np.float32)
        _, const_class, _ = predict(ckpt, const_rep)
        expected = float((direct == const_class[0]).mean())
        assert ppr(ckpt, model, X) == pytest.approx(expected)

    def test_invariant_under_monotone_logit_transform(self):
        rng = np.random.default_rng(9)
        ckpt = plane_checkpoint(h=3, seed=9)
        X = rng.standard_normal((30, 3)).astype(np.float32)
        model = identity_model(3)
        base = ppr(ckpt, model, X)
        scaled = SubjectCheckpoint(1, ckpt.feature_net,
                                   MlpParams([3, 3],
                                             [ckpt.head.weights[0] * 3.0],
                                             [ckpt.head.biases[0] * 3.0],
                                             ["identity"]))
        assert ppr(scaled, model, X) == base


class TestEvalSem:
    def test_identical_epochs_give_ones(self):
        rng = np.random.default_rng(10)
        X = rng.standard_normal((30, 4))
        assert np.all(eval_sem(X, X.copy(), 5) == 1.0)

    def test_bounded_with_denominator_k(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((25, 3))
        b = rng.standard_normal((25, 3))
        sem = eval_sem(a, b, 6)
        assert np.all((sem >= 0) & (sem <= 1))
        assert np.all(np.abs(sem * 6 - np.round(sem * 6)) < 1e-9)

    def test_single_moved_point_matches_brute_force(self):
        rng = np.random.default_rng(12)
        prev = np.vstack([rng.standard_normal((5, 2)) * 0.1,
                          rng.standard_normal((5, 2)) * 0.1 + 10.0])
        curr = prev.copy()
        curr[0] = [10.0, 10.0]   # swap one point into the other cluster
        got = eval_sem(prev, curr, 3)
        expected = brute_eval_sem(prev, curr, 3)
        assert np.allclose(got, expected)
        assert got[0] < 1.0


class TestPearson:
    def test_perfect_anticorrelation(self):
        sem = np.array([0.1, 0.5, 0.9, 0.3])
        disp = -sem + 2.0
        assert temporal_pv(sem, disp) == pytest.approx(-1.0)

    def test_two_level_case(self):
        assert temporal_pv(np.array([0.0, 1.0, 0.0, 1.0]),
                           np.array([1.0, 0.0, 1.0, 0.0])) == pytest.approx(-1.0)

    def test_matches_independent_oracle(self):
        sem = np.array([0.2, 0.4, 0.9])
        disp = np.array([3.0, 2.0, 0.5])
        assert pearson(sem, disp) == pytest.approx(brute_pearson(sem, disp), abs=1e-9)

    def test_random_inputs_match_oracle(self):
        rng = np.random.default_rng(13)
        a = rng.standard_normal(50)
        b = 0.3 * a + rng.standard_normal(50)
        assert pearson(a, b) == pytest.approx(brute_pearson(a, b), abs=1e-9)
        assert -1.0 <= pearson(a, b) <= 1.0

    def test_zero_variance_rejected(self):
        with pytest.raises(DegenerateInputError):
            pearson(np.ones(5), np.arange(5.0))


class TestPca:
    def test_planar_data_reconstructs_exactly(self):
        rng = np.random.default_rng(14)
        basis = np.linalg.qr(rng.standard_normal((8, 2)))[0]
        coords = rng.standard_normal((60, 2)) * [3.0, 1.5]
        X = coords @ basis.T + 0.7
        baseline = pca_fit(X)
        recon = pca_reconstruct(baseline, pca_project(baseline, X))
        assert float(((X - recon) ** 2).sum(axis=1).mean()) < 1e-4

    def test_axes_orthonormal(self):
        rng = np.random.default_rng(15)
        X = rng.standard_normal((100, 6)) * np.linspace(3, 1, 6)
        baseline = pca_fit(X)
        gram = baseline.axes.T @ baseline.axes
        assert np.allclose(gram, np.eye(2), atol=1e-5)

    def test_matches_eigendecomposition(self):
        rng = np.random.default_rng(16)
        X = rng.standard_normal((200, 5)) * np.array([4.0, 2.0, 1.0, 0.5, 0.2])
        baseline = pca_fit(X)
        cov = np.cov(X.T)
        values, vectors = np.linalg.eigh(cov)
        top = vectors[:, np.argsort(values)[::-1][:2]]
        for i in range(2):
            dot = abs(float(baseline.axes[:, i] @ top[:, i]))
            assert dot == pytest.approx(1.0, abs=1e-6)
        assert baseline.explained[0] == pytest.approx(
            values.max() / values.sum(), rel=1e-6)

    def test_isotropic_gaussian_explains_about_two_over_h(self):
        rng = np.random.default_rng(17)
        h = 16
        X = rng.standard_normal((5000, h))
        baseline = pca_fit(X)
        top2 = baseline.explained[0] + baseline.explained[1]
        assert top2 == pytest.approx(2.0 / h, rel=0.2)
        # cross-check the fractions against a full eigendecomposition
        values = np.sort(np.linalg.eigvalsh(np.cov(X.T)))[::-1]
        assert baseline.explained[0] == pytest.approx(values[0] / values.sum(),
                                                      rel=1e-4)


class TestReport:
    def test_json_round_trip_structure(self):
        report = MetricsReport()
        m = SplitMetrics({10: 0.5, 15: 0.6}, {10: 0.3}, 0.2, 0.9)
        report.epochs[1] = {"train": m}
        report.temporal["train"] = {(1, 2): {10: -0.4, 15: -0.5, 20: -0.6}}
        data = report.to_json()
        assert data["epochs"]["1"]["train"]["nn_pv"]["15"] == 0.6
        assert data["temporal"]["train"]["1-2"]["15"] == -0.5
        assert data["temporal_mean"]["train"]["15"] == -0.5

    def test_table_renders(self):
        report = MetricsReport()
        report.epochs[1] = {"train": SplitMetrics({15: 0.5}, {15: 0.4}, 0.1, 0.95)}
        report.temporal["train"] = {(1, 2): {10: -0.1, 15: -0.2, 20: -0.3}}
        table = report.to_table()
        assert "epoch" in table and "tpv(15)" in table
        assert "1-2" in table
