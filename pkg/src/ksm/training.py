"""Two-timescale stochastic gradient descent-ascent on the mean energy.

Each iteration draws a minibatch, computes the optimal responses in closed
form, and then updates

    w_i <- w_i - eta_w / max(q_i^2, q_floor) * de/dw_i     (rescaled descent)
    q_i <- q_i - eta_q * de/dq_i                          (descent)
    L   <- L   + eta_l * de/dL                            (ascent)
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .data import Dataset, Phase, TrainConfig, sample_minibatch
from .errors import ConfigError, NotPositiveDefiniteError, TrainingError
from .kernels import Kernel
from .model import ModelState, init_state, param_gradients, response_closed_form

#: Half-moons recipe: 10k iterations, then learning rates annealed 10x for 10k more.
HALF_MOONS_PHASES = (
    Phase(10000, eta_w=0.01, eta_q=0.01, eta_l=0.1),
    Phase(10000, eta_w=0.001, eta_q=0.001, eta_l=0.01),
)

#: MNIST recipe (q pinned at 1): 10k iterations, then 5k at 10x lower rates.
MNIST_PHASES = (
    Phase(10000, eta_w=0.001, eta_q=0.0, eta_l=0.01),
    Phase(5000, eta_w=0.0001, eta_q=0.0, eta_l=0.001),
)

LOG_COLUMNS = ("iter", "mean_energy", "grad_w_norm", "grad_q_norm", "grad_l_norm", "wall_ms")


@dataclass
class TrainLog:
    rows: List[tuple] = field(default_factory=list)

    def append(self, *row):
        self.rows.append(tuple(row))

    def column(self, name):
        j = LOG_COLUMNS.index(name)
        return np.array([r[j] for r in self.rows])

    def to_csv(self, path, header_comment=None, include_timing=True):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for it, e, gw, gq, gl, ms in self.rows:
                w.writerow([it, repr(e), repr(gw), repr(gq), repr(gl), f"{ms:.3f}" if include_timing else ""])


def _check_finite(it, **arrays):
    for name, a in arrays.items():
        if not np.all(np.isfinite(a)):
            raise TrainingError(f"non-finite {name} at iteration {it}", iteration=it, parameter=name)


def train(
    dataset: Dataset,
    kernel: Kernel,
    N: int,
    config: TrainConfig,
    *,
    fix_q: bool = False,
    state: Optional[ModelState] = None,
    on_phase_end: Optional[Callable[[int, ModelState], None]] = None,
):
    """Train a network of ``N`` neurons on ``dataset``.

    Parameters
    ----------
    fix_q : bool
        Keep every gain at its current value (1 after init); used for
        homogeneous kernels.
    state : ModelState, optional
        Start from this state (copied) instead of a fresh initialisation.
    on_phase_end : callable, optional
        Called as ``on_phase_end(phase_index, state)`` after every phase.

    Returns
    -------
    (ModelState, TrainLog)

    Raises
    ------
    TrainingError
        On a non-finite energy or parameter, or if ``L + lam I`` loses
        positive definiteness.
    """
    ss = np.random.SeedSequence(int(config.seed))
    init_seed, batch_seed = ss.spawn(2)
    if state is None:
        state = init_state(N, dataset.M, kernel, config.lam, seed=np.random.default_rng(init_seed))
        state.seed_history = [{"seed": int(config.seed), "stream": "init"}]
    else:
        state = state.copy()
        if state.kernel != kernel or state.N != N or state.M != dataset.M:
            raise ConfigError("starting state does not match kernel/N/M")
        state.kernel = kernel
    state.seed_history.append({"seed": int(config.seed), "stream": "batches"})
    rng = np.random.default_rng(batch_seed)
    if config.batch_size > dataset.T:
        raise ConfigError(f"batch_size {config.batch_size} exceeds dataset size {dataset.T}", field="training.batch_size")

    log = TrainLog()
    t0 = time.perf_counter()
    it = 0
    for p_idx, phase in enumerate(config.phases):
        eta_q = 0.0 if fix_q else phase.eta_q
        for _ in range(phase.iterations):
            it += 1
            Xb = sample_minibatch(dataset, config.batch_size, rng)
            try:
                Y, e = response_closed_form(state, Xb)
            except NotPositiveDefiniteError as exc:
                raise TrainingError(
                    f"L + lambda*I lost positive definiteness at iteration {it} "
                    f"(smallest eigenvalue {exc.smallest_eigenvalue:.6g})",
                    iteration=it,
                    parameter="L",
                ) from exc
            mean_e = float(np.mean(e))
            _check_finite(it, energy=mean_e)
            g = param_gradients(state, Xb, Y)
            if it % config.log_every == 0 or it == 1:
                log.append(
                    it,
                    mean_e,
                    float(np.linalg.norm(g.W)),
                    0.0 if fix_q else float(np.linalg.norm(g.q)),
                    float(np.linalg.norm(g.L)),
                    (time.perf_counter() - t0) * 1e3,
                )
            if phase.eta_w:
                scale = phase.eta_w / np.maximum(state.q**2, config.q_floor)
                state.W = state.W - scale[:, None] * g.W
            if eta_q:
                state.q = state.q - eta_q * g.q
            if phase.eta_l:
                state.L = state.L + phase.eta_l * g.L
            _check_finite(it, W=state.W, q=state.q, L=state.L)
        if on_phase_end is not None:
            on_phase_end(p_idx, state)
    return state, log


def train_homogeneous(dataset: Dataset, kernel: Kernel, N: int, config: TrainConfig, **kwargs):
    """Train with every gain pinned at q_i = 1.

    Only valid for homogeneous kernels, where the gain can be absorbed into
    the norm of the feature vector.
    """
    if kernel.homogeneity is None:
        raise ConfigError(f"{kernel!r} is not homogeneous; q cannot be pinned to 1", field="kernel")
    return train(dataset, kernel, N, config, fix_q=True, **kwargs)


def rescale_for_unit_gain(state: ModelState) -> ModelState:
    """Fold the gains into the features of a homogeneous-kernel state.

    ``w_i' = q_i^(1/d) w_i`` and ``q_i' = 1`` give identical feedforward
    drive and self-similarity terms for every input (requires q_i > 0).
    """
    d = state.kernel.homogeneity
    if d is None:
        raise ConfigError("state kernel is not homogeneous", field="kernel")
    if np.any(state.q <= 0):
        raise ValueError("all gains must be positive")
    out = state.copy()
    out.W = state.W * (state.q ** (1.0 / d))[:, None]
    out.q = np.ones_like(state.q)
    return out
