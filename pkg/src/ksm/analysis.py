"""Evaluation of learned representations.

Approximation error against the kernel matrix, eigen-spectra, sign
alignment, sparsity statistics, linearised receptive fields, k-means
cluster accuracy and closed-form ridge classification.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple, Sequence

import numpy as np
from scipy import linalg, stats

from .baselines import lloyd
from .errors import DimensionError


@dataclass
class ApproxReport:
    method: str
    dim: int
    nrmse: float
    seed: int
    dataset: str
    kernel: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.nrmse >= 0:
            raise ValueError("nrmse must be non-negative")

    def as_dict(self):
        return asdict(self)


def nrmse(F, Y) -> float:
    """Frobenius-relative error ``|F - Y Y^T| / |F|``."""
    F = np.asarray(F, dtype=np.float64)
    Y = np.array(Y, dtype=np.float64, ndmin=2)
    if F.shape != (Y.shape[0], Y.shape[0]):
        raise DimensionError(f"F {F.shape} does not match Y {Y.shape}")
    norm = np.linalg.norm(F)
    if norm == 0:
        raise ValueError("kernel matrix has zero Frobenius norm")
    return float(np.linalg.norm(F - Y @ Y.T) / norm)


def spectrum(S) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, descending, divided by the largest."""
    S = np.asarray(S, dtype=np.float64)
    if S.size == 0:
        raise ValueError("empty matrix")
    ev = np.linalg.eigvalsh(0.5 * (S + S.T))[::-1]
    if ev[0] == 0:
        raise ValueError("largest eigenvalue is zero; spectrum cannot be normalised")
    return ev / ev[0]


def output_spectrum(Y) -> np.ndarray:
    """Normalised spectrum of ``Y Y^T`` computed from the small side.

    The nonzero eigenvalues of ``Y Y^T`` equal those of ``Y^T Y``; the
    remaining ``T - N`` entries are exactly zero.
    """
    Y = np.array(Y, dtype=np.float64, ndmin=2)
    T, N = Y.shape
    if N >= T:
        return spectrum(Y @ Y.T)
    ev = np.clip(np.linalg.eigvalsh(Y.T @ Y)[::-1], 0.0, None)
    out = np.zeros(T)
    out[:N] = ev / ev[0]
    return out


def fix_sign_degeneracy(state, Y):
    """Flip ``w_i`` and column ``y_i`` wherever the mean response is negative.

    Returns a new state and a new response matrix; the inputs are not
    modified. Columns with exactly zero mean are left alone.
    """
    Y = np.asarray(Y, dtype=np.float64)
    signs = np.where(Y.mean(axis=0) < 0, -1.0, 1.0)
    new = state.copy()
    new.W = state.W * signs[:, None]
    # keep the energy identical: the lateral coupling of a flipped unit
    # changes sign with it
    new.L = state.L * np.outer(signs, signs)
    return new, Y * signs


def excess_kurtosis(values) -> float:
    return float(stats.kurtosis(np.ravel(values), fisher=True, bias=True))


class Histogram(NamedTuple):
    edges: np.ndarray
    counts: np.ndarray
    excess_kurtosis: float


def response_histogram(Y, bins: int = 50) -> Histogram:
    """Pooled histogram of every response plus the excess kurtosis.

    Apply :func:`fix_sign_degeneracy` first when the kernel is odd.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    v = np.ravel(np.asarray(Y, dtype=np.float64))
    if np.ptp(v) == 0:
        edges = np.array([v[0] - 0.5, v[0] + 0.5])
        return Histogram(edges, np.array([v.size]), float("nan"))
    counts, edges = np.histogram(v, bins=bins)
    return Histogram(edges, counts, excess_kurtosis(v))


def linearized_responses(X, Y, ridge: float = 0.1) -> np.ndarray:
    """Rows ``s_i = [ridge I + <x x^T>]^-1 <y_i x>`` (averages over the rows)."""
    X = np.array(X, dtype=np.float64, ndmin=2)
    Y = np.array(Y, dtype=np.float64, ndmin=2)
    if X.shape[0] != Y.shape[0]:
        raise DimensionError("X and Y must have the same number of rows")
    T, M = X.shape
    C = X.T @ X / T + ridge * np.eye(M)
    return linalg.solve(C, X.T @ Y / T, assume_a="pos").T


def _match_accuracy(assign, labels, k):
    labels = np.asarray(labels)
    classes = np.unique(labels)
    # contingency[c, l] = points in cluster c with label l
    cont = np.zeros((k, classes.size), dtype=np.int64)
    lab_idx = np.searchsorted(classes, labels)
    np.add.at(cont, (assign, lab_idx), 1)
    n = labels.size
    if k <= 8:
        best = 0
        cols = range(classes.size)
        for perm in itertools.permutations(range(k), min(k, classes.size)):
            best = max(best, sum(cont[c, l] for c, l in zip(perm, cols)))
        return best / n
    # greedy: repeatedly take the largest remaining cell
    cont = cont.astype(float)
    total = 0.0
    for _ in range(min(k, classes.size)):
        c, l = np.unravel_index(np.argmax(cont), cont.shape)
        total += cont[c, l]
        cont[c, :] = -1
        cont[:, l] = -1
    return total / n


class ClusterResult(NamedTuple):
    accuracy: float
    assignments: np.ndarray
    inertia: float


def kmeans_cluster_eval(Z, labels, k: int, n_init: int = 100, seed=0, max_iters: int = 300) -> ClusterResult:
    """Best-of-``n_init`` Lloyd clustering scored against ground-truth labels.

    Accuracy is the fraction of points whose cluster maps to their label
    under the best one-to-one cluster/label matching.
    """
    Z = np.array(Z, dtype=np.float64, ndmin=2)
    if labels is None:
        raise ValueError("labels are required")
    if k < 1 or k > Z.shape[0]:
        raise ValueError(f"k must be in [1, {Z.shape[0]}], got {k}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        res = lloyd(Z, k, rng, max_iters=max_iters)
        if best is None or res.inertia < best.inertia:
            best = res
    return ClusterResult(_match_accuracy(best.assignments, labels, k), best.assignments, best.inertia)


def ridge_fit(Z, labels, n_classes, weight_decay):
    """Least-squares one-hot classifier with an unpenalised intercept.

    Minimises ``mean_t |z_t V + c - onehot_t|^2 + weight_decay |V|^2``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    n, d = Z.shape
    Yt = np.eye(n_classes)[labels]
    mu_z = Z.mean(axis=0)
    mu_y = Yt.mean(axis=0)
    Zc = Z - mu_z
    Yc = Yt - mu_y
    lam = weight_decay * n
    if n < d:
        # dual form: V = Zc^T (Zc Zc^T + lam I)^-1 Yc
        K = Zc @ Zc.T + lam * np.eye(n)
        V = Zc.T @ linalg.solve(K, Yc, assume_a="sym")
    else:
        V = linalg.solve(Zc.T @ Zc + lam * np.eye(d), Zc.T @ Yc, assume_a="sym")
    return V, mu_y - mu_z @ V


def _accuracy(Z, labels, V, c):
    return float(np.mean(np.argmax(Z @ V + c, axis=1) == labels))


@dataclass
class ClassifierRow:
    labels_per_class: int
    train_accuracy: float
    test_accuracy: float
    best_weight_decay: List[float]
    seeds: List[int]


def linear_classifier_eval(
    Ytrain,
    labels_train,
    Ytest,
    labels_test,
    labels_per_class: int,
    weight_decays: Sequence[float] = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0),
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
) -> ClassifierRow:
    """Closed-form ridge classifier trained on ``labels_per_class`` examples
    per class.

    For each seed a labeled subset is drawn, every weight decay is fit, and
    the one with the best test accuracy is kept; train and test accuracy are
    then averaged over seeds.
    """
    Ytrain = np.asarray(Ytrain, dtype=np.float64)
    Ytest = np.asarray(Ytest, dtype=np.float64)
    labels_train = np.asarray(labels_train)
    labels_test = np.asarray(labels_test)
    classes = np.unique(labels_train)
    n_classes = int(max(labels_train.max(), labels_test.max())) + 1
    counts = np.array([(labels_train == c).sum() for c in classes])
    if labels_per_class < 1 or labels_per_class > counts.min():
        raise ValueError(
            f"labels_per_class={labels_per_class} exceeds the smallest class count {counts.min()}"
        )
    train_acc, test_acc, decays = [], [], []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        idx = np.concatenate(
            [rng.choice(np.flatnonzero(labels_train == c), labels_per_class, replace=False) for c in classes]
        )
        Z, lab = Ytrain[idx], labels_train[idx]
        best = None
        for wd in weight_decays:
            V, c = ridge_fit(Z, lab, n_classes, wd)
            te = _accuracy(Ytest, labels_test, V, c)
            if best is None or te > best[0]:
                best = (te, _accuracy(Z, lab, V, c), wd)
        test_acc.append(best[0])
        train_acc.append(best[1])
        decays.append(best[2])
    return ClassifierRow(labels_per_class, float(np.mean(train_acc)), float(np.mean(test_acc)), decays, list(seeds))


def top_components(Z, n_components: int = 2) -> np.ndarray:
    """Coordinates of the rows of Z on their top principal components."""
    Z = np.asarray(Z, dtype=np.float64)
    Zc = Z - Z.mean(axis=0)
    _, _, Vt = np.linalg.svd(Zc, full_matrices=False)
    return Zc @ Vt[:n_components].T
