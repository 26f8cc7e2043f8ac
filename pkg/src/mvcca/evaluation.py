"""Downstream evaluation of learned features.

Spectral clustering on a binary k-nearest-neighbor graph (symmetrized by
union), clustering accuracy under the optimal label assignment, normalized
mutual information, and one-versus-one linear SVM classification trained
by averaged subgradient descent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (
    CapExceededError,
    DisconnectedGraphWarning,
    LengthMismatchError,
    SingleClassError,
    TooFewSamplesError,
)
from .numerics import as_matrix, sym_eig


@dataclass
class ClusteringResult:
    assignments: np.ndarray
    k_neighbors: int
    kmeans_objective: float


def _pairwise_sq_dists(points: np.ndarray) -> np.ndarray:
    sq = (points * points).sum(axis=0)
    d = sq[:, None] + sq[None, :] - 2.0 * points.T @ points
    np.maximum(d, 0.0, out=d)
    return d


def _knn_adjacency(points: np.ndarray, k: int) -> np.ndarray:
    """Binary adjacency with an edge when either endpoint lists the other."""
    n = points.shape[1]
    d = _pairwise_sq_dists(points)
    np.fill_diagonal(d, np.inf)
    k = min(k, n - 1)
    neighbor_idx = np.argpartition(d, k - 1, axis=1)[:, :k]
    w = np.zeros((n, n), dtype=np.float64)
    rows = np.repeat(np.arange(n), k)
    w[rows, neighbor_idx.ravel()] = 1.0
    return np.maximum(w, w.T)


def _connected_components(w: np.ndarray) -> list[np.ndarray]:
    n = w.shape[0]
    seen = np.zeros(n, dtype=bool)
    components = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        members = [start]
        while stack:
            node = stack.pop()
            for nb in np.flatnonzero(w[node]):
                if not seen[nb]:
                    seen[nb] = True
                    stack.append(nb)
                    members.append(nb)
        components.append(np.asarray(sorted(members)))
    return components


def _kmeans_once(points: np.ndarray, k: int, rng) -> tuple[np.ndarray, float]:
    """One seeded Lloyd run on row vectors; returns (labels, objective)."""
    n = points.shape[0]
    centroids = points[rng.choice(n, size=k, replace=False)].copy()
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(100):
        d = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = d.argmin(axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = points[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                # Revive an empty cluster at the point farthest from its centroid.
                worst = d[np.arange(n), labels].argmax()
                centroids[j] = points[worst]
    objective = float(((points - centroids[labels]) ** 2).sum())
    return labels, objective


def _kmeans_best(points: np.ndarray, k: int, restarts: int, rng) -> tuple[np.ndarray, float]:
    best_labels, best_obj = None, np.inf
    for _ in range(restarts):
        labels, obj = _kmeans_once(points, k, rng)
        if obj < best_obj:
            best_labels, best_obj = labels, obj
    return best_labels, best_obj


def _spectral_embed(w: np.ndarray, dim: int) -> np.ndarray:
    """Rows of the normalized bottom-Laplacian eigenvector embedding."""
    degrees = w.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(degrees, 1e-12))
    sym = inv_sqrt[:, None] * w * inv_sqrt[None, :]
    # Bottom eigenvectors of L_sym = I - sym are the top eigenvectors of sym.
    eig = sym_eig(0.5 * (sym + sym.T))
    embed = eig.eigenvectors[:, :dim]
    norms = np.sqrt((embed * embed).sum(axis=1))
    return embed / np.maximum(norms, 1e-12)[:, None]


def _allocate_clusters(sizes: list[int], k: int) -> list[int]:
    """Largest-remainder allocation of k clusters, at least one each."""
    total = sum(sizes)
    raw = [s * k / total for s in sizes]
    counts = [max(1, int(r)) for r in raw]
    while sum(counts) > k:
        j = max(range(len(counts)), key=lambda i: (counts[i] - raw[i], counts[i]))
        if counts[j] > 1:
            counts[j] -= 1
        else:
            break
    while sum(counts) < k:
        j = max(range(len(counts)), key=lambda i: raw[i] - counts[i])
        counts[j] += 1
    return counts


def spectral_cluster(points, k_clusters: int, k_neighbors: int, seed) -> ClusteringResult:
    """Cluster column vectors with normalized-Laplacian spectral clustering.

    Builds a binary union-symmetrized kNN graph, embeds each connected
    component into the eigenvector space of its normalized Laplacian, and
    runs K-means with 20 seeded restarts, keeping the best objective.
    Disconnected graphs are clustered per component with cluster budgets
    proportional to component size.
    """
    points = as_matrix(points, "points")
    n = points.shape[1]
    if n < k_clusters:
        raise TooFewSamplesError(f"{n} samples for {k_clusters} clusters")
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be >= 1")
    if n == k_clusters:
        return ClusteringResult(np.arange(n, dtype=np.int64), k_neighbors, 0.0)
    rng = np.random.default_rng(seed)
    w = _knn_adjacency(points, k_neighbors)
    components = _connected_components(w)
    if len(components) > 1:
        warnings.warn(
            f"neighbor graph has {len(components)} components; clustered separately",
            DisconnectedGraphWarning,
            stacklevel=2,
        )
    if len(components) > k_clusters:
        # Degenerate: pool everything beyond the k-1 largest components.
        components.sort(key=len, reverse=True)
        pooled = np.concatenate(components[k_clusters - 1:])
        components = components[:k_clusters - 1] + [np.asarray(sorted(pooled))]
    budgets = _allocate_clusters([len(c) for c in components], k_clusters)
    assignments = np.full(n, -1, dtype=np.int64)
    objective = 0.0
    next_label = 0
    for comp, k_j in zip(components, budgets):
        sub = w[np.ix_(comp, comp)]
        if len(comp) <= k_j:
            assignments[comp] = next_label + np.arange(len(comp)) % k_j
            next_label += k_j
            continue
        embed = _spectral_embed(sub, k_j)
        labels, obj = _kmeans_best(embed, k_j, restarts=20, rng=rng)
        assignments[comp] = next_label + labels
        objective += obj
        next_label += k_j
    return ClusteringResult(assignments, k_neighbors, objective)


def _contingency(truth: np.ndarray, pred: np.ndarray) -> np.ndarray:
    t_vals, t_idx = np.unique(truth, return_inverse=True)
    p_vals, p_idx = np.unique(pred, return_inverse=True)
    table = np.zeros((len(t_vals), len(p_vals)), dtype=np.int64)
    np.add.at(table, (t_idx, p_idx), 1)
    return table


def _check_labels(truth, pred):
    truth = np.asarray(truth).ravel()
    pred = np.asarray(pred).ravel()
    if truth.shape != pred.shape:
        raise LengthMismatchError(
            f"label lengths differ: {truth.shape[0]} vs {pred.shape[0]}"
        )
    if truth.size == 0:
        raise LengthMismatchError("labels are empty")
    return truth, pred


def clustering_accuracy(truth, pred, class_cap: int = 1024) -> float:
    """Fraction of samples matched under the best cluster-to-class mapping.

    The optimal one-to-one assignment is found exactly on the contingency
    matrix (Hungarian method).
    """
    truth, pred = _check_labels(truth, pred)
    table = _contingency(truth, pred)
    if max(table.shape) > class_cap:
        raise CapExceededError(f"more than {class_cap} distinct labels")
    size = max(table.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[:table.shape[0], :table.shape[1]] = table
    rows, cols = linear_sum_assignment(-padded)
    return float(padded[rows, cols].sum() / truth.size)


def nmi(truth, pred) -> float:
    """Mutual information normalized by the larger partition entropy.

    Plug-in probabilities from counts, base-2 logs, and 0/0 defined as 0.
    """
    truth, pred = _check_labels(truth, pred)
    table = _contingency(truth, pred).astype(np.float64)
    n = table.sum()
    joint = table / n
    pt = joint.sum(axis=1)
    pp = joint.sum(axis=0)
    outer = pt[:, None] * pp[None, :]
    mask = joint > 0
    mi = float((joint[mask] * np.log2(joint[mask] / outer[mask])).sum())
    h_t = float(-(pt[pt > 0] * np.log2(pt[pt > 0])).sum())
    h_p = float(-(pp[pp > 0] * np.log2(pp[pp > 0])).sum())
    denom = max(h_t, h_p)
    if denom == 0.0:
        return 0.0
    return mi / denom


def _train_binary_svm(x, y, c: float, rng, epochs: int = 20):
    """Averaged subgradient descent on the soft-margin linear SVM.

    x is (d, m), y in {-1, +1}. Uses the standard 1/(lambda t) step size
    with lambda = 1 / (c m) and returns the averaged iterate.
    """
    d, m = x.shape
    lam = 1.0 / (c * m)
    w = np.zeros(d)
    b = 0.0
    w_sum = np.zeros(d)
    b_sum = 0.0
    t = 0
    for _ in range(epochs):
        order = rng.permutation(m)
        for i in order:
            t += 1
            eta = 1.0 / (lam * t)
            margin = y[i] * (w @ x[:, i] + b)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += eta * y[i] * x[:, i]
                b += eta * y[i]
            w_sum += w
            b_sum += b
    return w_sum / t, b_sum / t


@dataclass
class SvmResult:
    error: float
    c: float


def _ovo_predict(classifiers, classes, x):
    n = x.shape[1]
    votes = np.zeros((n, len(classes)))
    scores = np.zeros((n, len(classes)))
    for (i, j), (w, b) in classifiers.items():
        dec = w @ x + b
        pos = dec > 0
        votes[pos, i] += 1
        votes[~pos, j] += 1
        scores[:, i] += dec
        scores[:, j] -= dec
    # Ties broken by the summed decision values, then by class index.
    best = np.zeros(n, dtype=np.int64)
    for s in range(n):
        top = votes[s].max()
        tied = np.flatnonzero(votes[s] == top)
        best[s] = tied[np.argmax(scores[s, tied])]
    return classes[best]


def linear_svm_ovo(
    train_proj, train_labels,
    tune_proj, tune_labels,
    test_proj, test_labels,
    c_grid=(0.1, 1.0, 10.0),
    seed=0,
) -> SvmResult:
    """One-versus-one linear SVMs with the penalty chosen on the tune split.

    Each class pair gets a seeded subgradient-trained classifier; the
    multi-class label is the majority vote. Returns the test error rate
    under the tune-selected penalty.
    """
    train_proj = as_matrix(train_proj, "train_proj")
    tune_proj = as_matrix(tune_proj, "tune_proj")
    test_proj = as_matrix(test_proj, "test_proj")
    train_labels = np.asarray(train_labels).ravel()
    tune_labels = np.asarray(tune_labels).ravel()
    test_labels = np.asarray(test_labels).ravel()
    classes = np.unique(train_labels)
    if len(classes) < 2:
        raise SingleClassError("need at least two classes")
    best = None
    for c in c_grid:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(int(c * 1000),)))
        classifiers = {}
        for i, j in combinations(range(len(classes)), 2):
            mask = (train_labels == classes[i]) | (train_labels == classes[j])
            x = train_proj[:, mask]
            y = np.where(train_labels[mask] == classes[i], 1.0, -1.0)
            classifiers[(i, j)] = _train_binary_svm(x, y, c, rng)
        tune_pred = _ovo_predict(classifiers, classes, tune_proj)
        tune_err = float((tune_pred != tune_labels).mean())
        if best is None or tune_err < best[0]:
            best = (tune_err, c, classifiers)
    _, chosen_c, classifiers = best
    test_pred = _ovo_predict(classifiers, classes, test_proj)
    return SvmResult(error=float((test_pred != test_labels).mean()), c=chosen_c)
