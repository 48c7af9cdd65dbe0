"""Domain relabeling: k-means over classifier embeddings, or soft labels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from datlab.datagen import Dataset
from datlab.nets import MlpSpec, ModelParams, fit_classifier, mlp_forward


class RelabelValidationError(ValueError):
    pass


@dataclass
class StandaloneClassifier:
    """A domain classifier trained on raw features, with its input standardization."""

    params: ModelParams
    mean: np.ndarray
    std: np.ndarray
    losses: list[float] = field(default_factory=list)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


def train_standalone_classifier(dataset: Dataset, hidden=(32,), epochs: int = 10, seed: int = 0,
                                alpha: float = 0.1) -> StandaloneClassifier:
    if len(dataset) == 0:
        raise RelabelValidationError("empty dataset")
    mean = dataset.x.mean(axis=0)
    std = dataset.x.std(axis=0) + 1e-12
    n = int(dataset.d.max()) + 1
    if n < 2:
        raise RelabelValidationError("need at least two domain labels")
    spec = MlpSpec((dataset.x.shape[1], *hidden, n), "tanh", "softmax")
    fit = fit_classifier((dataset.x - mean) / std, dataset.d, spec, epochs=epochs, alpha=alpha, seed=seed)
    return StandaloneClassifier(fit.params, mean, std, fit.losses)


def extract_embeddings(clf: StandaloneClassifier, dataset: Dataset) -> np.ndarray:
    """Penultimate-layer activations, one row per record, in dataset order."""
    _, hidden = mlp_forward(clf.params, clf.standardize(dataset.x), return_hidden=True)
    return hidden.value.copy()


def make_soft_labels(clf: StandaloneClassifier, dataset: Dataset) -> np.ndarray:
    """Raw softmax outputs (temperature 1) of the standalone classifier."""
    probs = mlp_forward(clf.params, clf.standardize(dataset.x)).value
    return probs / probs.sum(axis=1, keepdims=True)


# --------------------------------------------------------------------------
# k-means


@dataclass
class ClusterModel:
    centroids: np.ndarray
    inertia: float
    inertia_history: list[float]
    n_iter: int

    @property
    def k(self) -> int:
        return len(self.centroids)


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.maximum(d, 0.0)


def assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid index; ties go to the lowest index."""
    return _sq_dists(points, centroids).argmin(axis=1)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++: each pick keeps the best of a few D^2-sampled candidates."""
    m = len(points)
    trials = 2 + int(np.log(k))
    chosen = [int(rng.integers(m))]
    closest = _sq_dists(points, points[chosen]).min(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            cand = rng.integers(m, size=trials)
        else:
            cand = rng.choice(m, size=trials, p=closest / total)
        pots = np.minimum(closest[None, :], _sq_dists(points[cand], points))
        best = int(pots.sum(axis=1).argmin())
        chosen.append(int(cand[best]))
        closest = pots[best]
    return points[chosen].copy()


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iters: int, tol: float) -> ClusterModel:
    history = []
    k = len(centroids)
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        d2 = _sq_dists(points, centroids)
        labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(points)), labels].sum()))
        new = centroids.copy()
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                new[j] = points[labels == j].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # re-seed each empty cluster at the point farthest from its centroid
            own = d2[np.arange(len(points)), labels].copy()
            for j in empty:
                far = int(own.argmax())
                new[j] = points[far]
                own[far] = -1.0
        shift = float(np.max(np.abs(new - centroids)))
        centroids = new
        if shift < tol and not empty.size:
            break
    labels = assign(points, centroids)
    history.append(float(_sq_dists(points, centroids)[np.arange(len(points)), labels].sum()))
    centroids, labels = _hartigan(points, centroids, labels, history)
    return ClusterModel(centroids, history[-1], history, n_iter)


def _hartigan(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray,
              history: list[float], max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Single-point transfers that strictly lower inertia; escapes many Lloyd fixed points."""
    k = len(centroids)
    centroids = centroids.copy()
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    for _ in range(max_sweeps):
        moved = False
        for i, x in enumerate(points):
            a = labels[i]
            if counts[a] <= 1:
                continue
            d2 = ((centroids - x) ** 2).sum(axis=1)
            remove_gain = counts[a] / (counts[a] - 1) * d2[a]
            add_cost = counts / (counts + 1) * d2
            add_cost[a] = np.inf
            b = int(add_cost.argmin())
            if add_cost[b] < remove_gain * (1 - 1e-12):
                centroids[a] = (counts[a] * centroids[a] - x) / (counts[a] - 1)
                centroids[b] = (counts[b] * centroids[b] + x) / (counts[b] + 1)
                counts[a] -= 1
                counts[b] += 1
                labels[i] = b
                moved = True
        if not moved:
            break
        for j in range(k):
            centroids[j] = points[labels == j].mean(axis=0)
        history.append(float(((points - centroids[labels]) ** 2).sum()))
    return centroids, labels


def kmeans_fit(points, k: int, seed: int = 0, max_iters: int = 100, tol: float = 1e-6,
               n_restarts: int = 10) -> ClusterModel:
    """k-means++ seeding, Lloyd iterations, then Hartigan transfers; best of ``n_restarts``.

    ``inertia_history`` of the returned model is non-increasing.
    """
    points = np.asarray(points, dtype=np.float64)
    m = len(points)
    if not 1 <= k <= m:
        raise RelabelValidationError(f"k must lie in [1, {m}], got {k}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_restarts):
        model = _lloyd(points, _kmeans_pp(points, k, rng), max_iters, tol)
        if best is None or model.inertia < best.inertia:
            best = model
    return best


def relabel_unsup(dataset: Dataset, model: ClusterModel, embeddings: np.ndarray) -> Dataset:
    """Replace every domain label with the index of the nearest centroid."""
    if len(embeddings) != len(dataset):
        raise RelabelValidationError(f"{len(embeddings)} embeddings for {len(dataset)} records")
    return dataset.with_domains(assign(np.asarray(embeddings), model.centroids))


def relabel_soft(dataset: Dataset, soft: np.ndarray) -> Dataset:
    if len(soft) != len(dataset):
        raise RelabelValidationError(f"{len(soft)} soft rows for {len(dataset)} records")
    return dataset.with_soft(soft)


def silhouette(points: np.ndarray, labels: np.ndarray, seed: int = 0, sample_size: int = 2000) -> float:
    from sklearn.metrics import silhouette_score

    if len(np.unique(labels)) < 2:
        return 0.0
    size = min(sample_size, len(points))
    return float(silhouette_score(points, labels, sample_size=size, random_state=seed))


def best_permutation_agreement(a: np.ndarray, b: np.ndarray) -> float:
    """Fraction of agreeing labels under the best one-to-one relabeling of ``a``."""
    from scipy.optimize import linear_sum_assignment

    ka, kb = int(a.max()) + 1, int(b.max()) + 1
    counts = np.zeros((ka, kb))
    np.add.at(counts, (a, b), 1)
    rows, cols = linear_sum_assignment(-counts)
    return float(counts[rows, cols].sum() / len(a))
