import numpy as np
import pytest

from visreg.anchored import (SingularSystemError, build_projections, load_projections, nearest_anchor,
                             predict_cold, regress_queries, regress_query, save_projections,
                             solve_anchor_weights)
from visreg.core import FeatureStore, Hyperparams, LatentModel, Scale, predict_rating


def objective_terms(V, g, lam, kappa):
    """Neighbour matrix, target and weights of the similarity-weighted ridge
    problem, assembled directly from the definitions."""
    nbrs = [j for j in range(len(V)) if j != g]
    N = np.column_stack([V[j] for j in nbrs])
    s = np.array([V[g] @ V[j] / np.linalg.norm(V[g]) / np.linalg.norm(V[j]) for j in nbrs])
    return N, V[g], 1.0 - s


def ridge_by_gradient_descent(N, y, gamma, lam, kappa, tol=1e-12):
    """Minimise |y - N b|^2 + lam (kappa |G b|^2 + (1 - kappa)|b|^2) by plain
    gradient descent with step 1/L."""
    w = lam * (kappa * gamma**2 + (1 - kappa))
    H = N.T @ N + np.diag(w)
    L = np.linalg.eigvalsh(H).max()
    b = np.zeros(N.shape[1])
    for _ in range(2_000_000):
        grad = N.T @ (N @ b - y) + w * b
        if np.linalg.norm(grad) < tol:
            break
        b -= grad / L
    return b


def textbook_ridge(X, y, lam):
    """Ridge through the augmented least-squares system."""
    A = np.vstack([X, np.sqrt(lam) * np.eye(X.shape[1])])
    return np.linalg.lstsq(A, np.concatenate([y, np.zeros(X.shape[1])]), rcond=None)[0]


class TestSolveAnchorWeights:
    def test_identical_pair(self):
        fs = FeatureStore([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
        beta, nbrs = solve_anchor_weights(0, fs, Hyperparams(ridge_lambda=1e-6, ridge_kappa=0.0))
        assert nbrs.tolist() == [1]
        np.testing.assert_allclose(beta, [1.0], atol=1e-4)

    @pytest.mark.parametrize("seed", range(5))
    def test_kappa_zero_is_ridge(self, seed):
        rng = np.random.default_rng(seed)
        V = rng.standard_normal((6, 4))
        beta, _ = solve_anchor_weights(2, FeatureStore(V), Hyperparams(ridge_lambda=0.3, ridge_kappa=0.0))
        N, y, _ = objective_terms(V, 2, 0.3, 0.0)
        np.testing.assert_allclose(beta, textbook_ridge(N, y, 0.3), atol=1e-8)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_objective_minimiser(self, seed):
        rng = np.random.default_rng(100 + seed)
        V = rng.standard_normal((5, 3))
        beta, _ = solve_anchor_weights(0, FeatureStore(V), Hyperparams(ridge_lambda=0.1, ridge_kappa=0.5))
        N, y, gamma = objective_terms(V, 0, 0.1, 0.5)
        np.testing.assert_allclose(beta, ridge_by_gradient_descent(N, y, gamma, 0.1, 0.5), atol=1e-6)

    def test_small_lambda_reconstructs_in_span(self, rng):
        # three neighbours spanning R^3, anchor inside their span
        nb = rng.standard_normal((3, 3))
        anchor = nb.T @ np.array([0.5, -0.25, 1.0])
        fs = FeatureStore(np.vstack([anchor, nb]))
        beta, nbrs = solve_anchor_weights(0, fs, Hyperparams(ridge_lambda=1e-10, ridge_kappa=0.5))
        resid = anchor - fs.vectors[nbrs].T @ beta
        assert np.linalg.norm(resid) < 1e-6

    def test_more_similar_neighbour_gets_larger_weight(self):
        # neighbours equally useful for reconstruction, one more similar to the anchor
        anchor = np.array([1.0, 0.0])
        near = np.array([np.cos(0.3), np.sin(0.3)])
        far = np.array([np.cos(1.2), -np.sin(1.2)])
        fs = FeatureStore(np.vstack([anchor, near, far]))
        beta, nbrs = solve_anchor_weights(0, fs, Hyperparams(ridge_lambda=5.0, ridge_kappa=1.0))
        assert nbrs.tolist() == [1, 2]
        assert abs(beta[0]) > abs(beta[1])

    def test_singular_system(self):
        fs = FeatureStore([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
        with pytest.raises(SingularSystemError, match="ridge_lambda > 0"):
            solve_anchor_weights(0, fs, Hyperparams(ridge_lambda=0.0, ridge_kappa=0.0))

    def test_zero_anchor(self):
        with pytest.raises(ValueError, match="zero-norm"):
            solve_anchor_weights(0, FeatureStore([[0.0, 0.0], [1.0, 0.0]]), Hyperparams())


def projection_oracle(Q, V, g, lam, kappa):
    n = len(V)
    nbrs = [j for j in range(n) if j != g]
    NV = np.column_stack([V[j] for j in nbrs])
    NQ = np.column_stack([Q[:, j] for j in nbrs])
    gam = np.diag([1 - V[g] @ V[j] / np.linalg.norm(V[g]) / np.linalg.norm(V[j]) for j in nbrs])
    inner = NV.T @ NV + lam * (kappa * gam.T @ gam + (1 - kappa) * np.eye(len(nbrs)))
    return NQ @ np.linalg.inv(inner) @ NV.T


class TestProjections:
    def test_identity_with_weights(self, rng):
        V, Q = rng.standard_normal((7, 4)), rng.standard_normal((3, 7))
        fs, hp = FeatureStore(V), Hyperparams(ridge_lambda=0.2, ridge_kappa=0.4)
        proj = build_projections(LatentModel(np.zeros((3, 1)), Q), fs, hp)
        for g in range(7):
            beta, nbrs = solve_anchor_weights(g, fs, hp)
            np.testing.assert_allclose(proj.matrices[g] @ V[g], Q[:, nbrs] @ beta, atol=1e-10)

    def test_duplicate_corpus(self):
        V = np.tile([0.3, -1.0, 2.0], (5, 1))
        Q = np.tile([[1.0], [-0.5]], (1, 5))
        proj = build_projections(LatentModel(np.zeros((2, 1)), Q), FeatureStore(V),
                                 Hyperparams(ridge_lambda=1e-6, ridge_kappa=0.5))
        for g in range(5):
            np.testing.assert_allclose(proj.matrices[g] @ V[g], Q[:, 0], atol=1e-4)

    def test_matches_reassembly_oracle(self, rng):
        V, Q = rng.standard_normal((6, 5)), rng.standard_normal((4, 6))
        proj = build_projections(LatentModel(np.zeros((4, 1)), Q), FeatureStore(V),
                                 Hyperparams(ridge_lambda=0.1, ridge_kappa=0.5))
        assert proj.num_anchors == 6
        for g in range(6):
            np.testing.assert_allclose(proj.matrices[g], projection_oracle(Q, V, g, 0.1, 0.5), atol=1e-8)

    def test_anchor_subset_and_threads(self, rng):
        V, Q = rng.standard_normal((9, 4)), rng.standard_normal((2, 9))
        m, fs, hp = LatentModel(np.zeros((2, 1)), Q), FeatureStore(V), Hyperparams()
        anchors = np.array([0, 2, 3, 7])
        a = build_projections(m, fs, hp, anchors=anchors)
        b = build_projections(m, fs, hp, anchors=anchors, threads=3)
        np.testing.assert_array_equal(a.matrices, b.matrices)
        sub = build_projections(LatentModel(np.zeros((2, 1)), Q[:, anchors]), fs.take(anchors), hp)
        np.testing.assert_allclose(a.matrices, sub.matrices, atol=1e-12)

    def test_max_neighbors_cap(self, rng):
        V, Q = rng.standard_normal((8, 3)), rng.standard_normal((2, 8))
        fs, hp = FeatureStore(V), Hyperparams()
        full = build_projections(LatentModel(np.zeros((2, 1)), Q), fs, hp)
        capped = build_projections(LatentModel(np.zeros((2, 1)), Q), fs, hp, max_neighbors=7)
        np.testing.assert_allclose(full.matrices, capped.matrices, atol=1e-12)
        beta, nbrs = solve_anchor_weights(0, fs, hp, max_neighbors=3)
        assert len(nbrs) == 3 and len(beta) == 3


class TestQueries:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.V = rng.standard_normal((20, 5))
        self.fs = FeatureStore(self.V)
        self.model = LatentModel(rng.standard_normal((3, 4)), rng.standard_normal((3, 20)))
        self.proj = build_projections(self.model, self.fs, Hyperparams())

    def test_self_match(self):
        for g in range(20):
            assert nearest_anchor(self.V[g], self.proj, self.fs) == g

    def test_scaled_query(self):
        q = self.V[4]
        assert nearest_anchor(2.5 * q, self.proj, self.fs) == 4
        np.testing.assert_allclose(regress_query(2.5 * q, self.proj, self.fs),
                                   2.5 * regress_query(q, self.proj, self.fs), rtol=1e-12)

    def test_random_query_matches_scan(self, rng):
        for _ in range(25):
            q = rng.standard_normal(5)
            best, best_s = None, -np.inf
            for g in range(20):
                s = q @ self.V[g] / np.linalg.norm(q) / np.linalg.norm(self.V[g])
                if s > best_s:
                    best, best_s = g, s
            assert nearest_anchor(q, self.proj, self.fs) == best

    def test_linear_for_fixed_anchor(self, rng):
        q = self.V[3] + 0.01 * rng.standard_normal(5)
        d = 0.01 * rng.standard_normal(5)
        g = nearest_anchor(q, self.proj, self.fs)
        assert nearest_anchor(q + d, self.proj, self.fs) == g
        np.testing.assert_allclose(regress_query(q + d, self.proj, self.fs),
                                   self.proj.matrices[g] @ q + self.proj.matrices[g] @ d, atol=1e-12)

    def test_batch_matches_single(self, rng):
        qs = rng.standard_normal((6, 5))
        batch = regress_queries(qs, self.proj, self.fs)
        for j in range(6):
            np.testing.assert_allclose(batch[:, j], regress_query(qs[j], self.proj, self.fs), atol=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError, match="zero norm"):
            regress_query(np.zeros(5), self.proj, self.fs)
        with pytest.raises(ValueError, match="dim"):
            regress_query(np.ones(4), self.proj, self.fs)

    def test_predict_cold_zero_preferences(self):
        m = LatentModel(np.zeros((3, 4)), self.model.Q)
        assert predict_cold(self.V[0], self.proj, self.fs, m, 1, Scale.BINARY, majority=-1.0) == -1.0

    def test_predict_cold_reconstruction_identity(self):
        # duplicated corpus: every anchor reconstructs its own factor exactly
        V = np.vstack([self.V[:3]] * 2)
        Q = np.hstack([self.model.Q[:, :3]] * 2)
        m = LatentModel(self.model.P, Q)
        fs = FeatureStore(V)
        proj = build_projections(m, fs, Hyperparams(ridge_lambda=1e-9, ridge_kappa=0.0))
        for f in range(3):
            for rater in range(4):
                expect = np.sign(predict_rating(m, rater, f))
                assert predict_cold(V[f], proj, fs, m, rater, "binary", 1.0) == expect


def test_projection_file_round_trip(tmp_path, rng):
    V, Q = rng.standard_normal((5, 3)), rng.standard_normal((2, 5))
    fs = FeatureStore(V, np.array([10, 20, 30, 40, 50]))
    proj = build_projections(LatentModel(np.zeros((2, 1)), Q), fs, Hyperparams(ridge_lambda=0.25, ridge_kappa=0.75),
                             anchors=[1, 3, 4])
    p1, p2 = tmp_path / "a.vanr", tmp_path / "b.vanr"
    save_projections(p1, proj)
    raw = p1.read_bytes()
    assert raw[:4] == b"VANR" and len(raw) == 32 + 3 * (8 + 8 * 2 * 3)
    back = load_projections(p1, fs)
    np.testing.assert_array_equal(back.anchors, [1, 3, 4])
    np.testing.assert_array_equal(back.matrices, proj.matrices)
    assert (back.ridge_lambda, back.ridge_kappa) == (0.25, 0.75)
    save_projections(p2, back)
    assert p2.read_bytes() == raw
    with pytest.raises(ValueError, match="missing"):
        load_projections(p1, fs.take([0, 1]))
