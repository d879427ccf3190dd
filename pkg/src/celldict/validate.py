"""Reconstruction metrics and the clustering validation protocol.

Everything here is deterministic: k-means restarts, permutation
shuffles, and bootstrap resamples each draw from counter-derived
substreams of a master seed, so results are independent of scheduling
and reproducible bit-for-bit.

The clustering metrics are implemented from their contingency-table and
entropy definitions rather than delegated to a library, because the
protocol pins details a library would choose for us: NMI is normalized
by the arithmetic mean of the label entropies, k-means restarts use
seeded distinct-point initialization with ties between restarts broken
by restart index, and PCA fixes eigenvector signs (largest-magnitude
coordinate positive).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "ClusterConfig",
    "ValidationReport",
    "PermutationResult",
    "BootstrapResult",
    "fidelity",
    "psnr",
    "success_rate",
    "ari",
    "nmi",
    "silhouette",
    "kmeans",
    "pca_reduce",
    "descriptor_preprocess",
    "permutation_test",
    "bootstrap_ci",
    "run_validation",
    "as_label_array",
]

_PERM_STREAM = 101
_BOOT_STREAM = 202


@dataclass(frozen=True)
class ClusterConfig:
    """Knobs of the clustering protocol."""

    k: int = 2
    n_init: int = 20
    seed: int = 0
    pca_components: int = 15
    l2_normalize_channels: bool = True
    standardize_atoms: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if self.pca_components < 1:
            raise ValueError("pca_components must be >= 1")


# ---------------------------------------------------------------------------
# reconstruction metrics


def fidelity(x, recon) -> float:
    """Percentage fidelity ``100 * (1 - |x - recon| / |x|)``."""
    from .dictlearn import relative_error

    return 100.0 * (1.0 - relative_error(x, recon))


def psnr(reference, recon, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give +inf."""
    reference = np.asarray(reference, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if reference.shape != recon.shape:
        raise ValueError(f"shape mismatch: {reference.shape} vs {recon.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((reference - recon) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def success_rate(runs: Sequence[Sequence[float]], eps: float, target_fraction: float) -> float:
    """Percentage of runs whose fraction of samples with error <= eps
    reaches ``target_fraction``."""
    if not 0.0 < target_fraction <= 1.0:
        raise ValueError("target_fraction must lie in (0, 1]")
    if len(runs) == 0:
        raise ValueError("at least one run is required")
    successes = 0
    for errors in runs:
        errors = np.asarray(errors, dtype=np.float64)
        if errors.size == 0:
            raise ValueError("runs must contain at least one sample error")
        if float(np.mean(errors <= eps)) >= target_fraction:
            successes += 1
    return 100.0 * successes / len(runs)


# ---------------------------------------------------------------------------
# clustering agreement metrics


def as_label_array(values) -> np.ndarray:
    """Validate a contiguous 0-based class labeling and return it as int64."""
    labels = np.asarray(values, dtype=np.int64)
    if labels.ndim != 1:
        raise ValueError("labels must be a 1-D sequence")
    present = np.unique(labels)
    if not np.array_equal(present, np.arange(len(present))):
        raise ValueError(f"labels must form a contiguous 0-based class set, got {present}")
    return labels


def _contingency(labels_a, labels_b) -> np.ndarray:
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError("labelings must be equal-length 1-D sequences")
    if a.shape[0] < 2:
        raise ValueError("at least two points are required")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((int(ai.max()) + 1, int(bi.max()) + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def ari(labels_a, labels_b) -> float:
    """Adjusted Rand index via the pair-counting contingency formula."""
    table = _contingency(labels_a, labels_b)
    n = table.sum()

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_cells = comb2(table.astype(np.float64)).sum()
    sum_rows = comb2(table.sum(axis=1).astype(np.float64)).sum()
    sum_cols = comb2(table.sum(axis=0).astype(np.float64)).sum()
    expected = sum_rows * sum_cols / comb2(float(n))
    max_index = 0.5 * (sum_rows + sum_cols)
    denom = max_index - expected
    if denom == 0.0:
        # both partitions are trivial in the same way (all-singletons or one block)
        return 1.0
    return float((sum_cells - expected) / denom)


def nmi(labels_a, labels_b) -> float:
    """Mutual information normalized by the arithmetic mean of entropies.

    All logarithm arguments are ratios of integer counts, so identical
    partitions give bitwise-equal numerator and denominator and the
    result is exactly 1.
    """
    table = _contingency(labels_a, labels_b).astype(np.float64)
    n = table.sum()
    rows = table.sum(axis=1)
    cols = table.sum(axis=0)
    ha = float(np.sum((rows / n) * np.log(n / rows)))
    hb = float(np.sum((cols / n) * np.log(n / cols)))
    mask = table > 0
    ratio = (n * table[mask]) / (rows[:, None] * cols[None, :])[mask]
    mi = float(np.sum((table[mask] / n) * np.log(ratio)))
    denom = 0.5 * (ha + hb)
    if denom == 0.0:
        return 1.0  # both labelings are single-class
    return float(min(1.0, max(0.0, mi / denom)))


def silhouette(points, labels) -> float:
    """Mean silhouette score with Euclidean distances; singletons score 0."""
    pts = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("silhouette requires at least two clusters")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    n = pts.shape[0]
    scores = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        n_own = int(own.sum())
        if n_own == 1:
            scores[i] = 0.0
            continue
        a = dist[i, own].sum() / (n_own - 1)
        b = min(float(dist[i, labels == c].mean()) for c in classes if c != labels[i])
        top = max(a, b)
        scores[i] = 0.0 if top == 0.0 else (b - a) / top
    return float(scores.mean())


# ---------------------------------------------------------------------------
# clustering and dimension reduction


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 300):
    """One k-means run from distinct-point initialization; returns (labels, wcss)."""
    n = points.shape[0]
    centers = points[rng.choice(n, size=k, replace=False)].copy()
    labels = None
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        if len(np.unique(new_labels)) < k:
            # reseat each empty cluster at the farthest unclaimed point
            claimed = set()
            dist_own = d2[np.arange(n), new_labels]
            order = np.argsort(-dist_own, kind="stable")
            for c in range(k):
                if np.any(new_labels == c):
                    continue
                for i in order:
                    if int(i) not in claimed:
                        new_labels[int(i)] = c
                        claimed.add(int(i))
                        break
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centers = np.stack([points[labels == c].mean(axis=0) for c in range(k)])
    wcss = float(((points - centers[labels]) ** 2).sum())
    return labels, wcss


def kmeans(points, k: int, seed: int = 0, n_init: int = 20) -> np.ndarray:
    """Best-of-``n_init`` Lloyd clustering (lowest within-cluster sum of
    squares); restart r draws from the substream ``[seed, r]`` and ties
    keep the earliest restart."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if not 1 <= k <= pts.shape[0]:
        raise ValueError(f"k must lie in [1, {pts.shape[0]}]")
    best_labels, best_wcss = None, np.inf
    for restart in range(n_init):
        labels, wcss = _lloyd(pts, k, np.random.default_rng([seed, restart]))
        if wcss < best_wcss:
            best_labels, best_wcss = labels, wcss
    return best_labels


def pca_reduce(points, components: int):
    """Project centered points onto the top covariance eigenvectors.

    Returns ``(reduced, explained_variance)``.  Eigenvector signs are
    fixed by making the largest-magnitude coordinate positive, so the
    projection is a deterministic function of the input.
    """
    pts = np.asarray(points, dtype=np.float64)
    n, dim = pts.shape
    if not 1 <= components <= min(n, dim):
        raise ValueError(f"components must lie in [1, {min(n, dim)}]")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / max(1, n - 1)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, 0.0)
    order = np.argsort(evals, kind="stable")[::-1]
    top = evecs[:, order[:components]].copy()
    for col in range(top.shape[1]):
        lead = int(np.argmax(np.abs(top[:, col])))
        if top[lead, col] < 0:
            top[:, col] = -top[:, col]
    reduced = centered @ top
    total = float(evals.sum())
    explained = 1.0 if total == 0.0 else float(evals[order[:components]].sum()) / total
    return reduced, min(1.0, explained)


def descriptor_preprocess(
    phi_matrix,
    n_channels: int,
    l2_normalize_channels: bool = True,
    standardize_atoms: bool = True,
) -> np.ndarray:
    """Channel-blockwise l2 normalization followed by per-coordinate
    standardization across cells.

    Zero blocks stay zero; zero-variance coordinates are left at zero
    after centering.
    """
    pts = np.array(phi_matrix, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("descriptor matrix must be 2-D (cells x C*K)")
    n_cells, dim = pts.shape
    if dim % n_channels != 0:
        raise ValueError(f"descriptor length {dim} is not divisible by {n_channels} channels")
    k = dim // n_channels
    if l2_normalize_channels:
        blocks = pts.reshape(n_cells, n_channels, k)
        norms = np.linalg.norm(blocks, axis=2, keepdims=True)
        np.divide(blocks, norms, out=blocks, where=norms > 0)
        pts = blocks.reshape(n_cells, dim)
    if standardize_atoms:
        pts = pts - pts.mean(axis=0)
        std = pts.std(axis=0)
        np.divide(pts, std, out=pts, where=std > 0)
    return pts


# ---------------------------------------------------------------------------
# statistical significance


@dataclass
class PermutationResult:
    observed_ari: float
    observed_nmi: float
    p_ari: float
    p_nmi: float
    null_ari: np.ndarray
    null_nmi: np.ndarray

    def null_stats(self) -> dict:
        return {
            "ari_null_mean": float(self.null_ari.mean()),
            "ari_null_p95": float(np.percentile(self.null_ari, 95)),
            "nmi_null_mean": float(self.null_nmi.mean()),
            "nmi_null_p95": float(np.percentile(self.null_nmi, 95)),
        }


def permutation_test(points, labels, cfg: ClusterConfig, n_perm: int) -> PermutationResult:
    """Label-shuffling null for the clustering agreement metrics.

    The clustering is computed once on the fixed points; each of the
    ``n_perm`` draws shuffles the ground-truth labels with its own
    substream and rescores.  p-values use the add-one estimator
    ``(1 + #{null >= observed}) / (1 + n_perm)`` and are therefore never
    exactly zero.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    labels = np.asarray(labels)
    predicted = kmeans(points, cfg.k, seed=cfg.seed, n_init=cfg.n_init)
    observed_ari = ari(labels, predicted)
    observed_nmi = nmi(labels, predicted)
    null_ari = np.empty(n_perm)
    null_nmi = np.empty(n_perm)
    for i in range(n_perm):
        rng = np.random.default_rng([cfg.seed, _PERM_STREAM, i])
        shuffled = labels[rng.permutation(len(labels))]
        null_ari[i] = ari(shuffled, predicted)
        null_nmi[i] = nmi(shuffled, predicted)
    p_ari = (1.0 + int(np.sum(null_ari >= observed_ari))) / (1.0 + n_perm)
    p_nmi = (1.0 + int(np.sum(null_nmi >= observed_nmi))) / (1.0 + n_perm)
    return PermutationResult(observed_ari, observed_nmi, p_ari, p_nmi, null_ari, null_nmi)


@dataclass
class BootstrapResult:
    ari_ci: tuple
    nmi_ci: tuple
    ari_samples: np.ndarray
    nmi_samples: np.ndarray


def _cluster_and_score(phi_matrix, labels, cfg: ClusterConfig, n_channels: int):
    points = descriptor_preprocess(
        phi_matrix, n_channels, cfg.l2_normalize_channels, cfg.standardize_atoms
    )
    comps = min(cfg.pca_components, points.shape[0], points.shape[1])
    reduced, explained = pca_reduce(points, comps)
    predicted = kmeans(reduced, cfg.k, seed=cfg.seed, n_init=cfg.n_init)
    return reduced, predicted, explained, ari(labels, predicted), nmi(labels, predicted)


def bootstrap_ci(
    phi_matrix, labels, cfg: ClusterConfig, n_boot: int, n_channels: int
) -> BootstrapResult:
    """Percentile bootstrap over cells of the full preprocess+cluster+score
    chain.  Resamples whose labels collapse to a single class are scored
    zero on both metrics and counted."""
    if n_boot < 1:
        raise ValueError("n_boot must be >= 1")
    phi_matrix = np.asarray(phi_matrix, dtype=np.float64)
    labels = np.asarray(labels)
    n = phi_matrix.shape[0]
    ari_samples = np.empty(n_boot)
    nmi_samples = np.empty(n_boot)
    for i in range(n_boot):
        rng = np.random.default_rng([cfg.seed, _BOOT_STREAM, i])
        idx = rng.integers(0, n, size=n)
        sub_labels = labels[idx]
        if len(np.unique(sub_labels)) < 2:
            ari_samples[i] = 0.0
            nmi_samples[i] = 0.0
            continue
        _, _, _, a, m = _cluster_and_score(phi_matrix[idx], sub_labels, cfg, n_channels)
        ari_samples[i] = a
        nmi_samples[i] = m
    ari_ci = (float(np.percentile(ari_samples, 2.5)), float(np.percentile(ari_samples, 97.5)))
    nmi_ci = (float(np.percentile(nmi_samples, 2.5)), float(np.percentile(nmi_samples, 97.5)))
    return BootstrapResult(ari_ci, nmi_ci, ari_samples, nmi_samples)


# ---------------------------------------------------------------------------
# report


@dataclass
class ValidationReport:
    n_cells: int
    ari: float
    nmi: float
    silhouette: float
    explained_variance: float
    p_ari: float
    p_nmi: float
    null_stats: dict
    bootstrap_ari_ci: tuple
    bootstrap_nmi_ci: tuple
    n_permutations: int
    n_bootstrap: int
    permutation: Optional[PermutationResult] = None
    bootstrap: Optional[BootstrapResult] = None

    def to_json(self, path, config_hash: Optional[str] = None) -> None:
        payload = {
            "n_cells": self.n_cells,
            "ari": self.ari,
            "nmi": self.nmi,
            "silhouette": self.silhouette,
            "explained_variance": self.explained_variance,
            "p_ari": self.p_ari,
            "p_nmi": self.p_nmi,
            "null_stats": self.null_stats,
            "bootstrap_ari_ci": list(self.bootstrap_ari_ci),
            "bootstrap_nmi_ci": list(self.bootstrap_nmi_ci),
            "n_permutations": self.n_permutations,
            "n_bootstrap": self.n_bootstrap,
        }
        if config_hash is not None:
            payload["config"] = config_hash
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")

    def null_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("draw,null_ari,null_nmi,boot_ari,boot_nmi\n")
            n = max(len(self.permutation.null_ari), len(self.bootstrap.ari_samples))
            for i in range(n):
                na = repr(self.permutation.null_ari[i]) if i < len(self.permutation.null_ari) else ""
                nm = repr(self.permutation.null_nmi[i]) if i < len(self.permutation.null_nmi) else ""
                ba = repr(self.bootstrap.ari_samples[i]) if i < len(self.bootstrap.ari_samples) else ""
                bm = repr(self.bootstrap.nmi_samples[i]) if i < len(self.bootstrap.nmi_samples) else ""
                fh.write(f"{i},{na},{nm},{ba},{bm}\n")


def run_validation(
    phi_matrix,
    labels,
    cfg: ClusterConfig,
    n_channels: int,
    n_perm: int = 1000,
    n_boot: int = 1000,
) -> ValidationReport:
    """Full protocol: preprocess, reduce, cluster, score, and attach
    permutation and bootstrap statistics."""
    phi_matrix = np.asarray(phi_matrix, dtype=np.float64)
    labels = as_label_array(labels)
    if phi_matrix.shape[0] != len(labels):
        raise ValueError("one label per descriptor row is required")
    if len(labels) < cfg.k:
        raise ValueError(f"need at least k = {cfg.k} labeled cells, got {len(labels)}")

    reduced, predicted, explained, observed_ari, observed_nmi = _cluster_and_score(
        phi_matrix, labels, cfg, n_channels
    )
    sil = silhouette(reduced, predicted) if len(np.unique(predicted)) > 1 else 0.0
    perm = permutation_test(reduced, labels, cfg, n_perm)
    boot = bootstrap_ci(phi_matrix, labels, cfg, n_boot, n_channels)
    return ValidationReport(
        n_cells=len(labels),
        ari=observed_ari,
        nmi=observed_nmi,
        silhouette=sil,
        explained_variance=explained,
        p_ari=perm.p_ari,
        p_nmi=perm.p_nmi,
        null_stats=perm.null_stats(),
        bootstrap_ari_ci=boot.ari_ci,
        bootstrap_nmi_ci=boot.nmi_ci,
        n_permutations=n_perm,
        n_bootstrap=n_boot,
        permutation=perm,
        bootstrap=boot,
    )
