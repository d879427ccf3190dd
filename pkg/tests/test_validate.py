import numpy as np
import pytest
from oracles import (
    ari_pair_counting,
    best_two_partition_wcss,
    nmi_entropy_sums,
    silhouette_direct,
    wcss,
)

from celldict.validate import (
    ClusterConfig,
    _lloyd,
    ari,
    as_label_array,
    bootstrap_ci,
    descriptor_preprocess,
    fidelity,
    kmeans,
    nmi,
    pca_reduce,
    permutation_test,
    psnr,
    run_validation,
    silhouette,
    success_rate,
)


def two_blobs(rng, n_per=10, dim=3, spread=0.2, gap=8.0):
    a = rng.standard_normal((n_per, dim)) * spread
    b = rng.standard_normal((n_per, dim)) * spread
    b[:, 0] += gap
    pts = np.vstack([a, b])
    labels = np.array([0] * n_per + [1] * n_per)
    return pts, labels


class TestFidelityPsnr:
    def test_fidelity_extremes(self, rng):
        x = rng.random((5, 5))
        assert fidelity(x, x) == 100.0
        assert fidelity(x, np.zeros_like(x)) == pytest.approx(0.0, abs=1e-12)

    def test_psnr_identical_is_infinite(self, rng):
        x = rng.random((4, 4))
        assert psnr(x, x, peak=1.0) == np.inf

    def test_psnr_zero_db_at_peak_mse(self):
        ref = np.zeros((3, 3))
        recon = np.ones((3, 3))
        assert psnr(ref, recon, peak=1.0) == pytest.approx(0.0, abs=1e-12)

    def test_psnr_validation(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.zeros((3, 3)))
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.zeros((2, 2)), peak=0.0)


class TestSuccessRate:
    def test_all_zero_errors(self):
        assert success_rate([[0.0, 0.0], [0.0]], eps=0.01, target_fraction=1.0) == 100.0

    def test_all_errors_above_threshold(self):
        assert success_rate([[0.5], [0.9, 0.7]], eps=0.01, target_fraction=0.5) == 0.0

    def test_matches_direct_counting(self, rng):
        runs = [list(rng.random(20)) for _ in range(30)]
        eps, target = 0.5, 0.6
        expected = 0
        for run in runs:
            hits = sum(1 for e in run if e <= eps)
            if hits / len(run) >= target:
                expected += 1
        assert success_rate(runs, eps, target) == pytest.approx(100.0 * expected / 30)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            success_rate([], 0.1, 0.5)


class TestAri:
    def test_identical_labelings(self):
        labels = [0, 0, 1, 1, 2, 2]
        assert ari(labels, labels) == 1.0

    def test_relabeling_invariance(self):
        a = [0, 0, 1, 1, 2, 2]
        b = [2, 2, 0, 0, 1, 1]  # same partition, renamed classes
        assert ari(a, b) == 1.0

    def test_hand_case_matches_pair_counting_oracle(self):
        a = [0, 0, 0, 1, 1, 1]
        b = [0, 0, 1, 1, 1, 1]  # one point moved across
        assert ari(a, b) == pytest.approx(ari_pair_counting(a, b), abs=1e-12)

    def test_random_cases_match_oracle(self, rng):
        for _ in range(20):
            a = rng.integers(0, 3, size=12)
            b = rng.integers(0, 3, size=12)
            assert ari(a, b) == pytest.approx(ari_pair_counting(a, b), abs=1e-12)

    def test_label_permutation_invariance(self, rng):
        a = rng.integers(0, 3, size=30)
        b = rng.integers(0, 4, size=30)
        swapped = np.choose(a, [2, 0, 1])
        assert ari(swapped, b) == pytest.approx(ari(a, b), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ari([0, 1], [0, 1, 1])

    def test_agrees_with_sklearn(self, rng):
        metrics = pytest.importorskip("sklearn.metrics")
        for _ in range(20):
            a = rng.integers(0, 4, size=25)
            b = rng.integers(0, 3, size=25)
            assert ari(a, b) == pytest.approx(
                metrics.adjusted_rand_score(a, b), abs=1e-12
            )


class TestNmi:
    def test_identical_labelings(self):
        assert nmi([0, 1, 1, 0, 2], [0, 1, 1, 0, 2]) == 1.0

    def test_hand_case_matches_entropy_oracle(self):
        a = [0, 0, 0, 1, 1, 1]
        b = [0, 0, 1, 1, 1, 1]
        assert nmi(a, b) == pytest.approx(nmi_entropy_sums(a, b), abs=1e-12)

    def test_random_cases_match_oracle(self, rng):
        for _ in range(20):
            a = rng.integers(0, 3, size=15)
            b = rng.integers(0, 2, size=15)
            assert nmi(a, b) == pytest.approx(nmi_entropy_sums(a, b), abs=1e-12)

    def test_independent_labelings_trend_to_zero(self, rng):
        a = rng.integers(0, 2, size=4000)
        b = rng.integers(0, 2, size=4000)
        assert nmi(a, b) < 0.01

    def test_bounds(self, rng):
        for _ in range(20):
            a = rng.integers(0, 4, size=10)
            b = rng.integers(0, 4, size=10)
            assert 0.0 <= nmi(a, b) <= 1.0

    def test_agrees_with_sklearn(self, rng):
        # the arithmetic-mean normalization is sklearn's default
        metrics = pytest.importorskip("sklearn.metrics")
        for _ in range(20):
            a = rng.integers(0, 4, size=25)
            b = rng.integers(0, 3, size=25)
            assert nmi(a, b) == pytest.approx(
                metrics.normalized_mutual_info_score(a, b), abs=1e-10
            )


class TestSilhouette:
    def test_two_far_blobs_near_one(self, rng):
        pts, labels = two_blobs(rng, n_per=8, gap=50.0)
        value = silhouette(pts, labels)
        assert value > 0.9
        assert value == pytest.approx(silhouette_direct(pts, labels), abs=1e-12)

    def test_identical_points_across_clusters(self):
        pts = np.zeros((6, 2))
        labels = [0, 0, 0, 1, 1, 1]
        assert silhouette(pts, labels) == 0.0

    def test_four_point_hand_case(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]])
        labels = [0, 0, 1, 1]
        assert silhouette(pts, labels) == pytest.approx(
            silhouette_direct(pts, labels), abs=1e-12
        )

    def test_single_cluster_rejected(self):
        with pytest.raises(ValueError):
            silhouette(np.zeros((4, 2)), [0, 0, 0, 0])

    def test_singletons_score_zero(self, rng):
        pts = rng.random((5, 2))
        labels = [0, 0, 0, 0, 1]  # last point is a singleton cluster
        direct = silhouette_direct(pts, labels)
        assert silhouette(pts, labels) == pytest.approx(direct, abs=1e-12)


class TestKmeans:
    def test_k_one_groups_everything(self, rng):
        labels = kmeans(rng.random((7, 2)), k=1, seed=0, n_init=3)
        assert set(labels) == {0}

    def test_k_equals_n_gives_zero_wcss(self, rng):
        pts = rng.random((6, 2)) + np.arange(6)[:, None]  # distinct points
        labels = kmeans(pts, k=6, seed=0, n_init=5)
        assert wcss(pts, labels, 6) == pytest.approx(0.0, abs=1e-20)
        assert len(set(labels.tolist())) == 6

    def test_two_blobs_match_exhaustive_partition_search(self, rng):
        pts, _ = two_blobs(rng, n_per=6, dim=2, gap=6.0)
        labels = kmeans(pts, k=2, seed=1, n_init=10)
        best_value, best_labels = best_two_partition_wcss(pts)
        assert wcss(pts, labels, 2) == pytest.approx(best_value, rel=1e-12)
        # same partition up to renaming
        assert ari(labels, best_labels) == 1.0

    def test_deterministic(self, rng):
        pts = rng.random((15, 3))
        a = kmeans(pts, k=3, seed=7, n_init=20)
        b = kmeans(pts, k=3, seed=7, n_init=20)
        assert np.array_equal(a, b)

    def test_best_of_restarts_selection(self, rng):
        pts = rng.random((20, 2))
        chosen = kmeans(pts, k=4, seed=3, n_init=15)
        chosen_obj = wcss(pts, chosen, 4)
        for restart in range(15):
            labels, value = _lloyd(pts, 4, np.random.default_rng([3, restart]))
            assert chosen_obj <= value + 1e-12

    def test_k_too_large_rejected(self, rng):
        with pytest.raises(ValueError):
            kmeans(rng.random((3, 2)), k=4)


class TestPca:
    def test_planar_points_fully_explained(self, rng):
        basis = np.linalg.qr(rng.standard_normal((5, 2)))[0]
        pts = rng.standard_normal((30, 2)) @ basis.T + 3.0
        reduced, explained = pca_reduce(pts, 2)
        assert explained == pytest.approx(1.0, abs=1e-12)
        # reconstruct through the same eigenbasis route used as oracle
        centered = pts - pts.mean(axis=0)
        assert np.linalg.norm(reduced @ np.linalg.pinv(reduced) @ centered - centered) <= 1e-8

    def test_full_dimension_keeps_all_variance(self, rng):
        pts = rng.standard_normal((12, 4))
        _, explained = pca_reduce(pts, 4)
        assert explained == pytest.approx(1.0, abs=1e-12)

    def test_retained_fraction_matches_covariance_eigenvalues(self, rng):
        pts = rng.standard_normal((40, 6)) * np.array([5, 3, 2, 1, 0.5, 0.1])
        _, explained = pca_reduce(pts, 2)
        centered = pts - pts.mean(axis=0)
        evals = np.linalg.svd(centered, compute_uv=False) ** 2
        assert explained == pytest.approx(evals[:2].sum() / evals.sum(), rel=1e-10)

    def test_reconstruction_error_monotone_in_components(self, rng):
        pts = rng.standard_normal((25, 5))
        centered = pts - pts.mean(axis=0)
        errors = []
        for comps in range(1, 6):
            reduced, _ = pca_reduce(pts, comps)
            # project back through least squares onto the reduced coordinates
            recon, *_ = np.linalg.lstsq(reduced, centered, rcond=None)
            errors.append(np.linalg.norm(centered - reduced @ recon))
        assert all(b <= a + 1e-10 for a, b in zip(errors, errors[1:]))

    def test_deterministic_sign_convention(self, rng):
        pts = rng.standard_normal((20, 4))
        r1, _ = pca_reduce(pts, 3)
        r2, _ = pca_reduce(pts.copy(), 3)
        assert np.array_equal(r1, r2)

    def test_component_bounds(self, rng):
        with pytest.raises(ValueError):
            pca_reduce(rng.random((5, 3)), 4)


class TestDescriptorPreprocess:
    def test_block_norms_become_unit(self, rng):
        phi = rng.standard_normal((10, 6))
        out = descriptor_preprocess(phi, n_channels=2, standardize_atoms=False)
        norms = np.linalg.norm(out.reshape(10, 2, 3), axis=2)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_block_of_norm_two_scaled_by_half(self):
        phi = np.array([[2.0, 0.0, 0.0, 1.0]])
        out = descriptor_preprocess(phi, n_channels=2, standardize_atoms=False)
        np.testing.assert_allclose(out, [[1.0, 0.0, 0.0, 1.0]])

    def test_zero_blocks_left_alone(self):
        phi = np.array([[0.0, 0.0, 3.0, 4.0]])
        out = descriptor_preprocess(phi, n_channels=2, standardize_atoms=False)
        np.testing.assert_allclose(out, [[0.0, 0.0, 0.6, 0.8]])

    def test_standardization_moments(self, rng):
        phi = rng.standard_normal((50, 8)) * 3 + 1
        out = descriptor_preprocess(phi, n_channels=2)
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-12)

    def test_single_cell_zeros_after_centering(self, rng):
        phi = rng.standard_normal((1, 6))
        out = descriptor_preprocess(phi, n_channels=3)
        assert np.all(out == 0.0)

    def test_indivisible_length_rejected(self, rng):
        with pytest.raises(ValueError):
            descriptor_preprocess(rng.random((4, 7)), n_channels=2)


class TestLabels:
    def test_contiguous_accepted(self):
        out = as_label_array([1, 0, 2, 1])
        assert out.dtype == np.int64

    def test_gap_rejected(self):
        with pytest.raises(ValueError):
            as_label_array([0, 2, 2])


class TestPermutationTest:
    def test_separable_blobs_give_minimal_p(self, rng):
        pts, labels = two_blobs(rng, n_per=8, gap=20.0)
        cfg = ClusterConfig(k=2, n_init=5, seed=0, pca_components=2)
        result = permutation_test(pts, labels, cfg, n_perm=200)
        assert result.observed_ari == 1.0
        assert result.p_ari == pytest.approx(1.0 / 201.0)

    def test_observed_below_null_median_gives_large_p(self, rng):
        # labels split each blob in half: agreement with the blob clustering
        # is maximally bad, worse than a typical shuffle
        pts, _ = two_blobs(rng, n_per=8, gap=20.0)
        labels = np.array(([0] * 4 + [1] * 4) * 2)
        cfg = ClusterConfig(k=2, n_init=5, seed=0, pca_components=2)
        result = permutation_test(pts, labels, cfg, n_perm=200)
        assert result.observed_ari <= np.median(result.null_ari)
        assert result.p_ari > 0.5

    def test_seeded_determinism(self, rng):
        pts, labels = two_blobs(rng, n_per=6)
        cfg = ClusterConfig(k=2, n_init=3, seed=9, pca_components=2)
        r1 = permutation_test(pts, labels, cfg, n_perm=50)
        r2 = permutation_test(pts, labels, cfg, n_perm=50)
        assert np.array_equal(r1.null_ari, r2.null_ari)
        assert np.array_equal(r1.null_nmi, r2.null_nmi)

    def test_null_mean_ari_near_zero(self, rng):
        # 30-point two-class set: chance-adjusted agreement averages to ~0
        pts, labels = two_blobs(rng, n_per=15, gap=10.0)
        cfg = ClusterConfig(k=2, n_init=5, seed=0, pca_components=2)
        result = permutation_test(pts, labels, cfg, n_perm=1000)
        assert abs(result.null_ari.mean()) <= 0.02


class TestBootstrap:
    def test_single_resample_interval_collapses(self, rng):
        pts, labels = two_blobs(rng, n_per=6, dim=4)
        cfg = ClusterConfig(k=2, n_init=3, seed=1, pca_components=2)
        result = bootstrap_ci(pts, labels, cfg, n_boot=1, n_channels=2)
        assert result.ari_ci[0] == result.ari_ci[1] == result.ari_samples[0]

    def test_interval_ordering(self, rng):
        pts, labels = two_blobs(rng, n_per=8, dim=4, gap=3.0)
        cfg = ClusterConfig(k=2, n_init=3, seed=1, pca_components=2)
        result = bootstrap_ci(pts, labels, cfg, n_boot=40, n_channels=2)
        assert result.ari_ci[0] <= result.ari_ci[1]
        assert result.nmi_ci[0] <= result.nmi_ci[1]

    def test_degenerate_resamples_scored_zero_and_counted(self, rng):
        pts = rng.standard_normal((12, 4))
        labels = np.array([0] * 11 + [1])  # minority class often missed
        cfg = ClusterConfig(k=2, n_init=3, seed=2, pca_components=2)
        result = bootstrap_ci(pts, labels, cfg, n_boot=60, n_channels=2)
        assert len(result.ari_samples) == 60
        assert np.any(result.ari_samples == 0.0)


class TestRunValidation:
    def _blob_descriptors(self, rng, n_per=10, k=6, channels=2):
        # classes of opposite sign in every coordinate survive block
        # normalization and per-atom standardization cleanly
        dim = channels * k
        a = 1.0 + rng.standard_normal((n_per, dim)) * 0.05
        b = -1.0 + rng.standard_normal((n_per, dim)) * 0.05
        phi = np.vstack([a, b])
        labels = np.array([0] * n_per + [1] * n_per)
        return phi, labels, channels

    def test_separable_descriptors_validate_cleanly(self, rng):
        phi, labels, channels = self._blob_descriptors(rng)
        cfg = ClusterConfig(k=2, n_init=5, seed=0, pca_components=4)
        report = run_validation(phi, labels, cfg, n_channels=channels, n_perm=100, n_boot=50)
        assert report.ari == 1.0
        assert report.p_ari <= 1.0 / 101.0
        assert -1.0 <= report.silhouette <= 1.0
        assert 0.0 <= report.explained_variance <= 1.0
        assert report.bootstrap_ari_ci[0] <= report.bootstrap_ari_ci[1]

    def test_deterministic_report(self, rng):
        phi, labels, channels = self._blob_descriptors(rng, n_per=6)
        cfg = ClusterConfig(k=2, n_init=3, seed=4, pca_components=3)
        r1 = run_validation(phi, labels, cfg, n_channels=channels, n_perm=30, n_boot=20)
        r2 = run_validation(phi, labels, cfg, n_channels=channels, n_perm=30, n_boot=20)
        assert r1.ari == r2.ari and r1.nmi == r2.nmi
        assert r1.p_ari == r2.p_ari and r1.p_nmi == r2.p_nmi
        assert r1.bootstrap_ari_ci == r2.bootstrap_ari_ci
        assert np.array_equal(r1.permutation.null_ari, r2.permutation.null_ari)

    def test_too_few_labeled_cells_rejected(self, rng):
        phi = rng.random((1, 4))
        with pytest.raises(ValueError, match="labeled cells"):
            run_validation(phi, [0], ClusterConfig(k=2), n_channels=2, n_perm=5, n_boot=5)

    def test_report_serialization(self, rng, tmp_path):
        phi, labels, channels = self._blob_descriptors(rng, n_per=5)
        cfg = ClusterConfig(k=2, n_init=3, seed=4, pca_components=3)
        report = run_validation(phi, labels, cfg, n_channels=channels, n_perm=20, n_boot=10)
        report.to_json(tmp_path / "validation.json")
        report.null_csv(tmp_path / "null.csv")
        import json

        payload = json.loads((tmp_path / "validation.json").read_text())
        assert payload["ari"] == report.ari
        assert len((tmp_path / "null.csv").read_text().splitlines()) == 21
