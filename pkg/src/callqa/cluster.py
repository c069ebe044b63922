"""k-means with k-means++ seeding and size-based class assignment.

For two clusters the larger one is taken to be non-malpractice (class 0)
and the smaller one malpractice (class 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, InvalidInputError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class KMeansModel:
    k: int
    centroids: np.ndarray
    inertia: float
    seed: int | None = None
    cluster_to_class: dict[int, int] | None = None
    n_iter: int = 0
    # inertia after every assignment step of the winning restart
    inertia_history: tuple[float, ...] = field(default=(), compare=False)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "k": self.k,
            "centroids": self.centroids.tolist(),
            "cluster_to_class": None if self.cluster_to_class is None else
            {str(c): int(v) for c, v in sorted(self.cluster_to_class.items())},
            "inertia": self.inertia,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "KMeansModel":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported k-means schema {doc.get('schema_version')!r}")
        c2c = doc.get("cluster_to_class")
        return cls(int(doc["k"]), np.asarray(doc["centroids"], dtype=float),
                   float(doc["inertia"]), doc.get("seed"),
                   None if c2c is None else {int(k): int(v) for k, v in c2c.items()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "KMeansModel":
        return cls.from_dict(json.loads(text))


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # explicit differences rather than the |x|^2 - 2xc + |c|^2 expansion:
    # exact zeros matter for tie-breaking
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _assign(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = _sq_dists(x, centroids)
    labels = np.argmin(d2, axis=1)  # first minimum = lowest id
    return labels, d2[np.arange(x.shape[0]), labels]


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(centers, dtype=float)


def _lloyd(x: np.ndarray, centroids: np.ndarray, max_iter: int, tol: float):
    history = []
    labels, d2 = _assign(x, centroids)
    history.append(float(d2.sum()))
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = centroids.copy()
        for j in range(centroids.shape[0]):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
        # an empty cluster takes the point farthest from its own centroid
        for j in range(centroids.shape[0]):
            if not np.any(labels == j):
                far = int(np.argmax(d2))
                new[j] = x[far]
                d2[far] = 0.0
                labels[far] = j
        shift = float(np.sqrt(np.max(np.sum((new - centroids) ** 2, axis=1))))
        centroids = new
        labels, d2 = _assign(x, centroids)
        history.append(float(d2.sum()))
        if shift < tol:
            break
    return centroids, labels, history, n_iter


def kmeans_fit(x, k: int = 2, seed: int = 0, max_iter: int = 300, tol: float = 1e-6,
               n_init: int = 10) -> KMeansModel:
    """Best of ``n_init`` k-means++ restarts, ranked by (inertia, restart index).

    Restart ``r`` draws from ``SeedSequence([seed, r])``, so results do not
    depend on the order restarts are run in.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {x.shape}")
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if x.shape[0] < k:
        raise InvalidInputError(f"need at least k={k} rows, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("input contains non-finite values")
    best = None
    for r in range(n_init):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        init = kmeans_plusplus(x, k, rng)
        centroids, _, history, n_iter = _lloyd(x, init, max_iter, tol)
        key = (history[-1], r)
        if best is None or key < best[0]:
            best = (key, centroids, history, n_iter)
    (inertia, _), centroids, history, n_iter = best
    return KMeansModel(k, centroids, inertia, seed, None, n_iter, tuple(history))


def kmeans_predict(model: KMeansModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return np.empty(0, dtype=int)
    if x.ndim != 2 or x.shape[1] != model.centroids.shape[1]:
        raise DimensionError(
            f"expected n x {model.centroids.shape[1]} input, got shape {x.shape}")
    return _assign(x, model.centroids)[0]


def assign_classes_by_size(model: KMeansModel, train_assignments) -> KMeansModel:
    """Map the larger cluster to class 0 and the smaller to class 1.

    Equal sizes map cluster 0 to class 0.
    """
    if model.k != 2:
        raise InvalidInputError("size-based class assignment needs k = 2")
    a = np.asarray(train_assignments, dtype=int)
    if a.size == 0:
        raise InvalidInputError("no training assignments")
    sizes = np.bincount(a, minlength=2)
    big = 0 if sizes[0] >= sizes[1] else 1
    return replace(model, cluster_to_class={big: 0, 1 - big: 1})


def predict_classes(model: KMeansModel, x) -> np.ndarray:
    if model.cluster_to_class is None:
        raise InvalidInputError("model has no cluster-to-class mapping")
    ids = kmeans_predict(model, x)
    lut = np.array([model.cluster_to_class[j] for j in range(model.k)])
    return lut[ids] if ids.size else ids
