"""Positive semi-definite kernels and their first-argument gradients.

Every kernel exposes a vectorised core (``cross``, ``weighted_grad_first``,
``grad_self_rows``) which the model and training code use on whole batches,
plus single-pair helpers (``eval``, ``grad_first_arg``, ``grad_self``) that
wrap the core for scalar use and testing.

All arithmetic is done in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, DimensionError

__all__ = [
    "Kernel",
    "LinearKernel",
    "GaussianKernel",
    "PowerCosineKernel",
    "HomogeneousPolynomialKernel",
    "kernel_from_config",
]


def _as_matrix(A, name):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2:
        raise DimensionError(f"{name} must be a vector or a matrix, got ndim={A.ndim}")
    return A


def _check_same_width(A, B):
    if A.shape[1] != B.shape[1]:
        raise DimensionError(
            f"dimension mismatch: {A.shape[1]} vs {B.shape[1]} input coordinates"
        )


class Kernel:
    """Base class. Subclasses implement the vectorised primitives."""

    kind: str = ""
    #: degree d with f(a u, b v) = (ab)^d f(u, v); None if not homogeneous
    homogeneity: Optional[float] = None
    #: f(-u, v) = -f(u, v), so (w_i, y_i) -> (-w_i, -y_i) is a symmetry
    odd: bool = False

    # -- vectorised primitives -------------------------------------------
    def _cross(self, A, B):
        raise NotImplementedError

    def _weighted_grad_first(self, W, X, C):
        raise NotImplementedError

    def _grad_self_rows(self, W):
        raise NotImplementedError

    def _self_values(self, W):
        return np.einsum("ij,ij->i", W, W)

    # -- public API --------------------------------------------------------
    def cross(self, A, B) -> np.ndarray:
        """Matrix of kernel values ``K[s, t] = f(A[s], B[t])``."""
        A = _as_matrix(A, "A")
        B = _as_matrix(B, "B")
        _check_same_width(A, B)
        return self._cross(A, B)

    def gram(self, X) -> np.ndarray:
        """Symmetric Gram matrix ``f(x^s, x^t)`` of the rows of X."""
        X = _as_matrix(X, "X")
        F = self._cross(X, X)
        return 0.5 * (F + F.T)

    def self_values(self, W) -> np.ndarray:
        """Vector of ``f(w_i, w_i)`` over the rows of W."""
        return self._self_values(_as_matrix(W, "W"))

    def weighted_grad_first(self, W, X, C) -> np.ndarray:
        """Return ``G[i] = sum_b C[b, i] * d f(w_i, x^b) / d w_i``.

        Parameters
        ----------
        W : ndarray, shape (N, M)
        X : ndarray, shape (B, M)
        C : ndarray, shape (B, N)
            Per-pair weights.

        Returns
        -------
        ndarray, shape (N, M)
        """
        W = _as_matrix(W, "W")
        X = _as_matrix(X, "X")
        _check_same_width(W, X)
        C = np.asarray(C, dtype=np.float64)
        if C.shape != (X.shape[0], W.shape[0]):
            raise DimensionError(
                f"weights must have shape {(X.shape[0], W.shape[0])}, got {C.shape}"
            )
        return self._weighted_grad_first(W, X, C)

    def grad_self_rows(self, W) -> np.ndarray:
        """Rows ``d f(w_i, w_i) / d w_i`` (total derivative) for every row of W."""
        return self._grad_self_rows(_as_matrix(W, "W"))

    def eval(self, u, v) -> float:
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape or u.size == 0:
            raise DimensionError(f"eval needs two equal-length vectors, got {u.shape} and {v.shape}")
        return float(self._pair(u, v))

    def grad_first_arg(self, w, x) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        if w.ndim != 1 or w.shape != x.shape:
            raise DimensionError(f"gradient needs two equal-length vectors, got {w.shape} and {x.shape}")
        return self._weighted_grad_first(w[None, :], x[None, :], np.ones((1, 1)))[0]

    def grad_self(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 1:
            raise DimensionError(f"grad_self needs a vector, got shape {w.shape}")
        return self._grad_self_rows(w[None, :])[0]

    def _pair(self, u, v):
        # order-symmetric single evaluation; subclasses override where the
        # matrix path is not exactly symmetric in its arguments
        return self._cross(u[None, :], v[None, :])[0, 0]

    def to_config(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in self.to_config().items() if k != "kind")
        return f"{type(self).__name__}({params})"

    def __eq__(self, other):
        return isinstance(other, Kernel) and self.to_config() == other.to_config()

    def __hash__(self):
        return hash(tuple(sorted(self.to_config().items())))


class LinearKernel(Kernel):
    """``f(u, v) = u . v``."""

    kind = "linear"
    homogeneity = 1.0
    odd = True

    def _cross(self, A, B):
        return A @ B.T

    def _pair(self, u, v):
        return np.dot(u, v)

    def _weighted_grad_first(self, W, X, C):
        return C.T @ X

    def _grad_self_rows(self, W):
        return 2.0 * W

    def to_config(self):
        return {"kind": self.kind}


@dataclass(frozen=True, eq=False, repr=False)
class GaussianKernel(Kernel):
    """``f(u, v) = exp(-|u - v|^2 / (2 sigma^2))``, normalised so f(v, v) = 1."""

    sigma: float = 1.0
    kind = "gaussian"
    homogeneity = None

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError("sigma must be a positive finite number", field="kernel.sigma")
        object.__setattr__(self, "sigma", float(self.sigma))

    def _cross(self, A, B):
        # cdist works on explicit differences, so identical rows give exactly 0
        D2 = cdist(A, B, "sqeuclidean")
        return np.exp(-D2 / (2.0 * self.sigma**2))

    def _pair(self, u, v):
        d = u - v
        return np.exp(-np.dot(d, d) / (2.0 * self.sigma**2))

    def _weighted_grad_first(self, W, X, C):
        # d/dw exp(-|w-x|^2/2s^2) = f * (x - w) / s^2
        CF = C * self._cross(X, W)
        return (CF.T @ X - CF.sum(axis=0)[:, None] * W) / self.sigma**2

    def _self_values(self, W):
        return np.ones(len(W))

    def _grad_self_rows(self, W):
        return np.zeros_like(W)

    def to_config(self):
        return {"kind": self.kind, "sigma": self.sigma}


def _ipow(c, a):
    """Integer power by repeated squaring (much faster than ``c ** a``)."""
    if a == 0:
        return np.ones_like(c)
    out = None
    base = c
    while a:
        if a & 1:
            out = base if out is None else out * base
        a >>= 1
        if a:
            base = base * base
    return out


def _check_alpha(alpha):
    if isinstance(alpha, bool) or int(alpha) != alpha or alpha < 1:
        raise ConfigError(f"alpha must be a positive integer, got {alpha!r}", field="kernel.alpha")
    return int(alpha)


@dataclass(frozen=True, eq=False, repr=False)
class PowerCosineKernel(Kernel):
    """``f(u, v) = |u| |v| cos(u, v)^alpha``.

    Degree-1 homogeneous for every alpha. At a zero-norm argument the value
    and both gradients are defined as zero (the continuous extension).
    """

    alpha: int = 1
    kind = "power_cosine"
    homogeneity = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", _check_alpha(self.alpha))

    @property
    def odd(self):
        return self.alpha % 2 == 1

    def _cosines(self, A, B):
        na = np.linalg.norm(A, axis=1)
        nb = np.linalg.norm(B, axis=1)
        denom = np.outer(na, nb)
        G = A @ B.T
        c = np.zeros_like(G)
        np.divide(G, denom, out=c, where=denom > 0)
        np.clip(c, -1.0, 1.0, out=c)
        return c, denom, nb

    def _cross(self, A, B):
        c, denom, _ = self._cosines(A, B)
        return denom * _ipow(c, self.alpha)

    def _pair(self, u, v):
        nu = np.sqrt(np.dot(u, u))
        nv = np.sqrt(np.dot(v, v))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        c = min(1.0, max(-1.0, np.dot(u, v) / (nu * nv)))
        return nu * nv * c**self.alpha

    def _weighted_grad_first(self, W, X, C):
        # grad_w f(w, x) = alpha c^(alpha-1) x + (1 - alpha) f w / |w|^2
        a = self.alpha
        c, denom, nw = self._cosines(X, W)  # c, denom: (B, N); nw: (N,)
        live = denom > 0
        Ceff = np.where(live, C, 0.0)
        G = (Ceff * (a * _ipow(c, a - 1))).T @ X
        if a != 1:
            F = denom * _ipow(c, a)
            coef = (Ceff * F).sum(axis=0)
            inv_n2 = np.zeros_like(nw)
            np.divide(1.0, nw**2, out=inv_n2, where=nw > 0)
            G += (1 - a) * (coef * inv_n2)[:, None] * W
        return G

    def _grad_self_rows(self, W):
        # f(w, w) = |w|^2 for every alpha
        return 2.0 * W

    def to_config(self):
        return {"kind": self.kind, "alpha": self.alpha}


@dataclass(frozen=True, eq=False, repr=False)
class HomogeneousPolynomialKernel(Kernel):
    """``f(u, v) = (u . v)^alpha``; homogeneous of degree alpha."""

    alpha: int = 2
    kind = "homogeneous_polynomial"

    def __post_init__(self):
        object.__setattr__(self, "alpha", _check_alpha(self.alpha))

    @property
    def homogeneity(self):
        return float(self.alpha)

    @property
    def odd(self):
        return self.alpha % 2 == 1

    def _cross(self, A, B):
        return _ipow(A @ B.T, self.alpha)

    def _pair(self, u, v):
        return np.dot(u, v) ** self.alpha

    def _self_values(self, W):
        return np.einsum("ij,ij->i", W, W) ** self.alpha

    def _weighted_grad_first(self, W, X, C):
        a = self.alpha
        G = X @ W.T
        return (C * (a * _ipow(G, a - 1))).T @ X

    def _grad_self_rows(self, W):
        a = self.alpha
        s = np.einsum("ij,ij->i", W, W)
        return (2.0 * a * s ** (a - 1))[:, None] * W

    def to_config(self):
        return {"kind": self.kind, "alpha": self.alpha}


_KINDS = {
    "linear": (LinearKernel, ()),
    "gaussian": (GaussianKernel, ("sigma",)),
    "power_cosine": (PowerCosineKernel, ("alpha",)),
    "homogeneous_polynomial": (HomogeneousPolynomialKernel, ("alpha",)),
}


def kernel_from_config(spec: dict) -> Kernel:
    """Build a kernel from ``{"kind": ..., <params>}``.

    Unknown kinds and unexpected or missing keys raise :class:`ConfigError`.
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("kernel spec must be an object with a 'kind' key", field="kernel")
    kind = spec["kind"]
    if kind not in _KINDS:
        raise ConfigError(
            f"unknown kernel kind {kind!r}; expected one of {sorted(_KINDS)}", field="kernel.kind"
        )
    cls, params = _KINDS[kind]
    extra = set(spec) - {"kind", *params}
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)} for kernel {kind!r}", field="kernel")
    missing = [p for p in params if p not in spec]
    if missing:
        raise ConfigError(f"missing key {missing[0]!r}", field=f"kernel.{missing[0]}")
    return cls(**{p: spec[p] for p in params})
