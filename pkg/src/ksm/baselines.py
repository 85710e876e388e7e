"""Reference kernel approximations: kernel PCA, Nystrom features and random
Fourier features, plus landmark selection (uniform sampling and Lloyd's
k-means)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionError
from .kernels import Kernel

LANDMARK_SOURCES = ("uniform_sample", "kmeans", "learned_hebbian")

#: eigenvalues of the landmark Gram matrix below this are treated as zero
PINV_CUTOFF = 1e-10


@dataclass(frozen=True)
class LandmarkSet:
    W: np.ndarray
    source: str

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64, ndmin=2)
        if W.shape[0] < 1 or not np.all(np.isfinite(W)):
            raise ValueError("landmarks must be a non-empty finite matrix")
        if self.source not in LANDMARK_SOURCES:
            raise ValueError(f"unknown landmark source {self.source!r}")
        object.__setattr__(self, "W", W)

    @classmethod
    def from_state(cls, state):
        """Use the feedforward features of a trained network as landmarks."""
        return cls(state.W.copy(), "learned_hebbian")


def kernel_pca_features(F, N: int) -> np.ndarray:
    """Rows ``y^t = (sqrt(l_1) v_1[t], ..., sqrt(l_N) v_N[t])`` of the top-N
    eigenpairs of F. Negative eigenvalues are clamped to zero."""
    F = np.asarray(F, dtype=np.float64)
    T = F.shape[0]
    if F.shape != (T, T):
        raise DimensionError(f"F must be square, got {F.shape}")
    if not 1 <= N <= T:
        raise ValueError(f"N must be in [1, {T}], got {N}")
    evals, evecs = np.linalg.eigh(0.5 * (F + F.T))
    top = np.argsort(evals)[::-1][:N]
    return evecs[:, top] * np.sqrt(np.clip(evals[top], 0.0, None))


def pinv_sqrt(B, cutoff=PINV_CUTOFF) -> np.ndarray:
    """Symmetric square root of the pseudo-inverse of a symmetric matrix."""
    evals, evecs = np.linalg.eigh(0.5 * (B + B.T))
    inv_sqrt = np.zeros_like(evals)
    keep = evals >= cutoff
    inv_sqrt[keep] = 1.0 / np.sqrt(evals[keep])
    return (evecs * inv_sqrt) @ evecs.T


def nystrom_features(kernel: Kernel, X, landmarks: LandmarkSet) -> np.ndarray:
    """Features ``Y = A (B^+)^(1/2)`` with ``A = f(X, W)`` and ``B = f(W, W)``,
    so that ``Y Y^T = A B^+ A^T``."""
    W = landmarks.W if isinstance(landmarks, LandmarkSet) else np.atleast_2d(landmarks)
    A = kernel.cross(X, W)
    return A @ pinv_sqrt(kernel.gram(W))


def select_landmarks_uniform(X, N: int, seed=0) -> LandmarkSet:
    """N distinct rows of X drawn uniformly without replacement."""
    X = np.asarray(X, dtype=np.float64)
    if not 1 <= N <= X.shape[0]:
        raise ValueError(f"N must be in [1, {X.shape[0]}], got {N}")
    idx = np.random.default_rng(seed).choice(X.shape[0], size=N, replace=False)
    return LandmarkSet(X[idx].copy(), "uniform_sample")


class LloydResult(NamedTuple):
    centers: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_history: list
    iterations: int


def _assign(X, centers):
    D = cdist(X, centers, "sqeuclidean")
    a = np.argmin(D, axis=1)
    return a, D[np.arange(len(X)), a]


def lloyd(X, k: int, rng: np.random.Generator, max_iters: int = 100) -> LloydResult:
    """Lloyd's algorithm started from k distinct data points.

    Stops at an assignment fixpoint or after ``max_iters`` center updates.
    An empty cluster is re-seeded with the point farthest from its current
    center. ``inertia_history[j]`` is the inertia of the assignment made
    with the centers after j updates.
    """
    X = np.asarray(X, dtype=np.float64)
    T = X.shape[0]
    if not 1 <= k <= T:
        raise ValueError(f"k must be in [1, {T}], got {k}")
    centers = X[rng.choice(T, size=k, replace=False)].copy()
    assign, d2 = _assign(X, centers)
    history = [float(d2.sum())]
    it = 0
    for it in range(1, max_iters + 1):
        for c in range(k):
            members = assign == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(d2))
                centers[c] = X[far]
                assign[far] = c
                d2[far] = 0.0
        new_assign, d2 = _assign(X, centers)
        history.append(float(d2.sum()))
        if np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign = new_assign
    return LloydResult(centers, assign, float(d2.sum()), history, it)


def select_landmarks_kmeans(X, N: int, seed=0, max_iters: int = 100) -> LandmarkSet:
    """Cluster centers of Lloyd's k-means (templates as the initial means)."""
    res = lloyd(X, N, np.random.default_rng(seed), max_iters=max_iters)
    return LandmarkSet(res.centers, "kmeans")


def random_fourier_features(sigma: float, X, N: int, seed=0) -> np.ndarray:
    """``phi_i(x) = sqrt(2/N) cos(w_i . x + b_i)`` with ``w_i ~ N(0, I/sigma^2)``
    and ``b_i ~ U[0, 2 pi]``; ``phi(x) . phi(x')`` estimates the Gaussian
    kernel of width sigma."""
    X = np.array(X, dtype=np.float64, ndmin=2)
    rng = np.random.default_rng(seed)
    W = rng.normal(scale=1.0 / sigma, size=(N, X.shape[1]))
    b = rng.uniform(0.0, 2.0 * np.pi, size=N)
    return np.sqrt(2.0 / N) * np.cos(X @ W.T + b)
