"""Network parameters, per-sample energy, steady-state responses and gradients.

For an input x the network holds feedforward features ``W`` (N x M), gains
``q`` (N,), a lateral matrix ``L`` (N x N) and the ridge term ``lam``. The
per-sample energy is

    e = -sum_i [q_i y_i f(w_i, x) - q_i^2 f(w_i, w_i) / 2]
        + (1/2) sum_ij [L_ij y_i y_j - L_ij^2 / 2] + (lam/2) |y|^2

Responses minimise e over y; the learning rules are its partial
derivatives with respect to W, q and L.
"""

from __future__ import annotations

import base64
import json
import warnings
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np
from scipy import linalg

from .errors import ConvergenceWarning, DimensionError, NotPositiveDefiniteError, StepSizeError
from .kernels import Kernel, kernel_from_config

CHECKPOINT_FORMAT = "ksm-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelState:
    W: np.ndarray
    q: np.ndarray
    L: np.ndarray
    lam: float
    kernel: Kernel
    seed_history: List[dict] = field(default_factory=list)

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64, ndmin=2)
        self.q = np.array(self.q, dtype=np.float64).reshape(-1)
        self.L = np.array(self.L, dtype=np.float64)
        N = self.W.shape[0]
        if self.q.shape != (N,) or self.L.shape != (N, N):
            raise DimensionError(
                f"inconsistent shapes W{self.W.shape}, q{self.q.shape}, L{self.L.shape}"
            )
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def N(self):
        return self.W.shape[0]

    @property
    def M(self):
        return self.W.shape[1]

    def copy(self):
        return ModelState(
            self.W.copy(), self.q.copy(), self.L.copy(), self.lam, self.kernel, list(self.seed_history)
        )

    def lateral(self):
        """``L + lam * I``."""
        return self.L + self.lam * np.eye(self.N)

    def feedforward(self, X):
        """``A[b, i] = q_i f(w_i, x^b)`` for a batch of inputs."""
        X = _batch(X, self.M)
        return self.kernel.cross(X, self.W) * self.q


class ResponseBatch(NamedTuple):
    Y: np.ndarray
    energies: np.ndarray


def _batch(X, M):
    X = np.array(X, dtype=np.float64, ndmin=2)
    if X.ndim != 2 or X.shape[1] != M:
        raise DimensionError(f"inputs must have {M} columns, got shape {X.shape}")
    return X


def init_state(N: int, M: int, kernel: Kernel, lam: float = 0.001, seed=0) -> ModelState:
    """``W ~ N(0, 1)`` i.i.d., ``q = 1``, ``L = I``."""
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((N, M))
    history = [{"seed": int(seed), "stream": "init"}] if isinstance(seed, (int, np.integer)) else []
    return ModelState(W, np.ones(N), np.eye(N), float(lam), kernel, history)


def _cholesky(state):
    A = state.lateral()
    try:
        return linalg.cho_factor(A, lower=True, check_finite=True)
    except linalg.LinAlgError:
        raise NotPositiveDefiniteError(np.linalg.eigvalsh(0.5 * (A + A.T))[0]) from None


def energies(state: ModelState, X, Y, _feedforward=None) -> np.ndarray:
    """Per-sample energies for rows of X and matching responses Y."""
    X = _batch(X, state.M)
    Y = np.array(Y, dtype=np.float64, ndmin=2)
    if Y.shape != (X.shape[0], state.N):
        raise DimensionError(f"Y must have shape {(X.shape[0], state.N)}, got {Y.shape}")
    A = state.feedforward(X) if _feedforward is None else _feedforward
    self_term = 0.5 * np.sum(state.q**2 * state.kernel.self_values(state.W))
    lateral_term = -0.25 * np.sum(state.L**2)
    quad = 0.5 * np.sum((Y @ state.L) * Y, axis=1) + 0.5 * state.lam * np.sum(Y**2, axis=1)
    return -np.sum(A * Y, axis=1) + self_term + lateral_term + quad


def energy(state: ModelState, x, y) -> float:
    return float(energies(state, np.atleast_2d(x), np.atleast_2d(y))[0])


def response_closed_form(state: ModelState, X) -> ResponseBatch:
    """Minimise the energy over y for every row of X.

    Solves ``(L + lam I) y = q * f(W, x)`` by Cholesky factorisation.

    Raises
    ------
    NotPositiveDefiniteError
        If ``L + lam I`` is not positive definite.
    """
    X = _batch(X, state.M)
    A = state.feedforward(X)
    Y = linalg.cho_solve(_cholesky(state), A.T, check_finite=False).T
    return ResponseBatch(Y, energies(state, X, Y, _feedforward=A))


class DynamicsResult(NamedTuple):
    y: np.ndarray
    converged: bool
    steps: int


def response_dynamics(state: ModelState, x, eta_y: Optional[float] = None, max_steps: int = 10000, tol: float = 1e-7) -> DynamicsResult:
    """Settle the recurrent dynamics ``y <- y + eta_y (a - (L + lam I) y)`` from y = 0.

    The iteration contracts with factor ``rho = max|1 - eta_y mu|`` over the
    eigenvalues ``mu`` of ``L + lam I``, so after a step ``dy`` the distance
    to the fixed point is at most ``rho / (1 - rho) |dy|``. Iteration stops
    once that bound drops below ``tol`` (which also implies ``|dy| < tol``).
    A :class:`ConvergenceWarning` is issued if ``max_steps`` is reached
    first. ``eta_y`` defaults to ``1 / lambda_max(L + lam I)``.

    Raises
    ------
    StepSizeError
        If ``eta_y >= 2 / lambda_max`` or the energy keeps rising for 10
        consecutive steps.
    NotPositiveDefiniteError
        If ``L + lam I`` is not positive definite.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (state.M,):
        raise DimensionError(f"x must have shape ({state.M},), got {x.shape}")
    Lam = state.lateral()
    eig = np.linalg.eigvalsh(0.5 * (Lam + Lam.T))
    if eig[0] <= 0:
        raise NotPositiveDefiniteError(eig[0])
    if eta_y is None:
        eta_y = 1.0 / eig[-1]
    if not (0 < eta_y < 2.0 / eig[-1]):
        raise StepSizeError(
            f"eta_y={eta_y:.6g} must lie in (0, 2/lambda_max) = (0, {2.0 / eig[-1]:.6g})"
        )
    a = state.feedforward(x[None, :])[0]
    y = np.zeros(state.N)
    rho = max(abs(1.0 - eta_y * eig[0]), abs(1.0 - eta_y * eig[-1]))
    gain = max(rho / (1.0 - rho), 1.0)

    def quad(y):
        # the y-dependent part of the energy
        return 0.5 * y @ Lam @ y - a @ y

    e_prev = quad(y)
    rising = 0
    for step in range(1, max_steps + 1):
        dy = eta_y * (a - Lam @ y)
        y = y + dy
        e = quad(y)
        rising = rising + 1 if e > e_prev else 0
        if rising >= 10:
            raise StepSizeError(f"energy increased for 10 consecutive steps (eta_y={eta_y:.6g})")
        e_prev = e
        if gain * np.linalg.norm(dy) < tol:
            return DynamicsResult(y, True, step)
    warnings.warn(f"dynamics did not reach tol={tol:g} in {max_steps} steps", ConvergenceWarning)
    return DynamicsResult(y, False, max_steps)


class Gradients(NamedTuple):
    W: np.ndarray
    q: np.ndarray
    L: np.ndarray


def param_gradients(state: ModelState, X, Y) -> Gradients:
    """Exact partial derivatives of the minibatch-mean energy.

    Y is held fixed (it is expected to be the minimiser for X, in which case
    these are also the total derivatives).
    """
    X = _batch(X, state.M)
    Y = np.array(Y, dtype=np.float64, ndmin=2)
    B = X.shape[0]
    if Y.shape != (B, state.N):
        raise DimensionError(f"Y must have shape {(B, state.N)}, got {Y.shape}")
    k, W, q = state.kernel, state.W, state.q
    F = k.cross(X, W)
    dW = -k.weighted_grad_first(W, X, Y * q) / B + 0.5 * (q**2)[:, None] * k.grad_self_rows(W)
    dq = -np.mean(Y * F, axis=0) + q * k.self_values(W)
    C = Y.T @ Y / B
    dL = 0.25 * (C + C.T) - 0.5 * state.L
    return Gradients(dW, dq, dL)


# ---------------------------------------------------------------------------
# bounds used to derive the energy


def bound_slack(kernel: Kernel, X, y, w, q) -> float:
    """Gap of the single-neuron correlation bound.

    Returns ``(1/2T^2) y^T F y - (1/T) q sum_t y_t f(x_t, w) + q^2 f(w, w) / 2``,
    which is non-negative for any PSD kernel.
    """
    X = np.array(X, dtype=np.float64, ndmin=2)
    y = np.asarray(y, dtype=np.float64)
    T = X.shape[0]
    F = kernel.gram(X)
    fw = kernel.cross(X, np.atleast_2d(w))[:, 0]
    return float(y @ F @ y / (2 * T**2) - q * (y @ fw) / T + 0.5 * q**2 * kernel.eval(w, w))


def correlation_bound_objective(state: ModelState, X, Y) -> float:
    """Correlation-based objective before the lateral matrix is introduced:
    ``-(1/T) sum_t sum_i [q_i y_i f(w_i,x) - q_i^2 f(w_i,w_i)/2] + (1/4) sum_ij C_ij^2``
    with ``C = Y^T Y / T``."""
    X = _batch(X, state.M)
    Y = np.asarray(Y, dtype=np.float64)
    T = X.shape[0]
    A = state.feedforward(X)
    C = Y.T @ Y / T
    linear = -np.sum(A * Y) / T + 0.5 * np.sum(state.q**2 * state.kernel.self_values(state.W))
    return float(linear + 0.25 * np.sum(C**2))


def cmds_y_terms(F, Y) -> float:
    """Y-dependent part of the squared-error objective, scaled by 1/4:
    ``(1/4T^2) sum_st [(y^s . y^t)^2 - 2 F_st y^s . y^t]``."""
    Y = np.asarray(Y, dtype=np.float64)
    T = Y.shape[0]
    G = Y @ Y.T
    return float(np.sum(G**2 - 2.0 * F * G) / (4.0 * T**2))


# ---------------------------------------------------------------------------
# checkpoints


def _encode(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"dtype": "<f8", "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d):
    if d.get("dtype") != "<f8":
        raise ValueError(f"unsupported array dtype {d.get('dtype')!r}")
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def checkpoint_dict(state: ModelState, extra: Optional[dict] = None) -> dict:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "N": state.N,
        "M": state.M,
        "lambda": state.lam,
        "kernel": state.kernel.to_config(),
        "W": _encode(state.W),
        "q": _encode(state.q),
        "L": _encode(state.L),
        "seed_history": state.seed_history,
    }
    if extra:
        doc.update(extra)
    return doc


def save_checkpoint(state: ModelState, path, extra: Optional[dict] = None):
    """Write the state as JSON; arrays are base64 little-endian float64."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(checkpoint_dict(state, extra), fh, indent=1, sort_keys=True)
        fh.write("\n")


def state_from_dict(doc: dict) -> ModelState:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a ksm checkpoint")
    state = ModelState(
        _decode(doc["W"]),
        _decode(doc["q"]),
        _decode(doc["L"]),
        float(doc["lambda"]),
        kernel_from_config(doc["kernel"]),
        list(doc.get("seed_history", [])),
    )
    if (state.N, state.M) != (doc["N"], doc["M"]):
        raise DimensionError("checkpoint N/M fields disagree with the stored arrays")
    return state


def load_checkpoint(path) -> ModelState:
    with open(path, encoding="utf-8") as fh:
        return state_from_dict(json.load(fh))
