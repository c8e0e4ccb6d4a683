import math

import numpy as np
import pytest

from zsdkit.dataio import BenchSpec, SemanticTable, generate_benchmark, find_similar_pairs
from zsdkit.errors import ValidationError
from zsdkit.semantics import (
    covariance_of_semantics,
    margin_matrix,
    pairwise_mahalanobis,
    save_margin_matrix,
)


def _table(vectors, dim=None):
    vectors = np.asarray(vectors, dtype=float)
    dim = vectors.shape[1] if dim is None else dim
    return SemanticTable(dim, {i: (f"c{i}", v) for i, v in enumerate(vectors)})


def brute_force_margins(vectors, shrinkage, lo, hi):
    """Independent oracle: explicit covariance, inverse, all-pairs loop, rescale."""
    vectors = np.asarray(vectors, dtype=float)
    n, d = vectors.shape
    mu = vectors.mean(0)
    sigma = sum(np.outer(v - mu, v - mu) for v in vectors) / n
    reg = (1 - shrinkage) * sigma + shrinkage * (np.trace(sigma) / d) * np.eye(d)
    inv = np.linalg.inv(reg)
    raw = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            diff = vectors[i] - vectors[j]
            raw[i, j] = math.sqrt(max(diff @ inv @ diff, 0.0))
    off = [raw[i, j] for i in range(n) for j in range(n) if i < j]
    d_min, d_max = min(off), max(off)
    out = lo + (raw - d_min) / (d_max - d_min) * (hi - lo)
    np.fill_diagonal(out, 0.0)
    return out


class TestCovariance:
    def test_full_shrinkage_is_scaled_identity(self):
        rng = np.random.default_rng(0)
        table = _table(rng.standard_normal((6, 4)))
        sigma = covariance_of_semantics(table, 1.0)
        vectors = table.matrix()
        centered = vectors - vectors.mean(0)
        scale = np.trace(centered.T @ centered / 6) / 4
        assert np.allclose(sigma, scale * np.eye(4), atol=1e-12)

    def test_population_denominator(self):
        # Two 1-D classes at 0 and 2: population covariance is 1 (not 2).
        table = _table([[0.0], [2.0]])
        sigma = covariance_of_semantics(table, 0.0)
        assert sigma.shape == (1, 1)
        assert abs(sigma[0, 0] - 1.0) < 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            table = _table(rng.standard_normal((8, 5)))
            sigma = covariance_of_semantics(table, rng.uniform(0.1, 0.9))
            assert np.abs(sigma - sigma.T).max() < 1e-12

    def test_too_few_classes(self):
        with pytest.raises(ValidationError):
            covariance_of_semantics(_table([[1.0, 2.0]]), 0.5)

    def test_singular_without_shrinkage(self):
        # 3 classes in 5-D span at most a 2-D subspace: rank-deficient.
        rng = np.random.default_rng(2)
        table = _table(rng.standard_normal((3, 5)))
        with pytest.raises(ValidationError, match="increase shrinkage"):
            covariance_of_semantics(table, 0.0)
        covariance_of_semantics(table, 0.5)  # shrinkage rescues it


class TestMarginMatrix:
    def test_identity_covariance_equals_euclidean(self):
        rng = np.random.default_rng(3)
        vectors = rng.standard_normal((7, 4))
        # Rescale so tr(Sigma)/d = 1, making the regularized covariance exactly I.
        table = _table(vectors)
        sigma = covariance_of_semantics(table, 1.0)
        vectors = vectors / math.sqrt(sigma[0, 0])
        table = _table(vectors)
        sigma = covariance_of_semantics(table, 1.0)
        assert np.allclose(sigma, np.eye(4), atol=1e-12)
        maha = pairwise_mahalanobis(vectors, sigma)
        diffs = vectors[:, None, :] - vectors[None, :, :]
        euol = np.sqrt((diffs**2).sum(-1))
        assert np.abs(maha - euol).max() < 1e-9

    def test_rescale_endpoints(self):
        rng = np.random.default_rng(4)
        mm = margin_matrix(_table(rng.standard_normal((9, 5))), 0.5, (0.1, 1.0))
        off = mm.values[np.triu_indices(9, 1)]
        assert abs(off.min() - 0.1) < 1e-12
        assert abs(off.max() - 1.0) < 1e-12

    def test_three_colinear_classes_oracle(self):
        # Hand case: classes at (0,0), (1,0), (4,0); with full shrinkage the
        # metric is a scaled identity, so margins rescale the Euclidean gaps
        # 1, 3, 4 into [0.1, 1.0]: closest 0.1, middle 0.7, farthest 1.0.
        vectors = [[0.0, 0.0], [1.0, 0.0], [4.0, 0.0]]
        mm = margin_matrix(_table(vectors), 1.0, (0.1, 1.0))
        oracle = brute_force_margins(vectors, 1.0, 0.1, 1.0)
        assert np.abs(mm.values - oracle).max() < 1e-12
        assert abs(mm.margin(0, 1) - 0.1) < 1e-12
        assert abs(mm.margin(1, 2) - 0.7) < 1e-12
        assert abs(mm.margin(0, 2) - 1.0) < 1e-12

    def test_matches_brute_force_on_random_tables(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            n, d = int(rng.integers(3, 9)), int(rng.integers(2, 6))
            vectors = rng.standard_normal((n, d))
            s = float(rng.uniform(0.2, 1.0))
            mm = margin_matrix(_table(vectors), s, (0.2, 2.0))
            oracle = brute_force_margins(vectors, s, 0.2, 2.0)
            assert np.abs(mm.values - oracle).max() < 1e-9

    def test_margin_lookup(self):
        vectors = [[0.0, 0.0], [1.0, 0.0], [4.0, 0.0]]
        mm = margin_matrix(_table(vectors), 1.0, (0.1, 1.0))
        assert mm.margin(2, 2) == 0.0
        assert mm.margin(0, 2) == mm.margin(2, 0)
        with pytest.raises(ValidationError):
            mm.margin(0, 99)

    def test_degenerate_semantics(self):
        vectors = np.ones((4, 3)) * 2.0
        with pytest.raises(ValidationError):
            margin_matrix(_table(vectors), 1.0, (0.1, 1.0))

    def test_bad_range(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ValidationError):
            margin_matrix(_table(rng.standard_normal((4, 3))), 0.5, (1.0, 0.5))
        with pytest.raises(ValidationError):
            margin_matrix(_table(rng.standard_normal((4, 3))), 0.5, (0.0, 1.0))


class TestMarginProperties:
    def test_monotone_in_raw_distance(self):
        rng = np.random.default_rng(7)
        vectors = rng.standard_normal((8, 4))
        table = _table(vectors)
        s = 0.5
        sigma = covariance_of_semantics(table, s)
        raw = pairwise_mahalanobis(vectors, sigma)
        mm = margin_matrix(table, s, (0.1, 1.0))
        iu = np.triu_indices(8, 1)
        order_raw = np.argsort(raw[iu], kind="stable")
        rescaled_sorted = mm.values[iu][order_raw]
        assert (np.diff(rescaled_sorted) >= -1e-12).all()

    def test_engineered_pairs_below_median(self):
        spec = BenchSpec(
            n_classes=14, n_unseen=4, d=8, D=16, images=10, objects_per_image=(1, 2),
            similar_pair_count=2, seed=21,
        )
        table, split, _, _, _ = generate_benchmark(spec)
        mm = margin_matrix(table, 0.5, (0.1, 1.0))
        median = np.median(mm.values[np.triu_indices(len(mm.class_ids), 1)])
        for u, s in find_similar_pairs(table, split):
            assert mm.margin(u, s) < median

    def test_global_scale_invariance(self):
        rng = np.random.default_rng(8)
        vectors = rng.standard_normal((6, 5))
        base = margin_matrix(_table(vectors), 0.5, (0.1, 1.0))
        for k in (0.25, 3.0, 40.0):
            scaled = margin_matrix(_table(vectors * k), 0.5, (0.1, 1.0))
            assert np.abs(base.values - scaled.values).max() < 1e-9

    def test_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(9)
        mm = margin_matrix(_table(rng.standard_normal((7, 3))), 0.5, (0.1, 1.0))
        assert np.abs(mm.values - mm.values.T).max() == 0.0
        assert np.abs(np.diag(mm.values)).max() == 0.0


def test_export_csv(tmp_path):
    rng = np.random.default_rng(10)
    mm = margin_matrix(_table(rng.standard_normal((4, 3))), 0.5, (0.1, 1.0))
    path = tmp_path / "margins.csv"
    save_margin_matrix(mm, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("class_id,")
    assert len(lines) == 5
