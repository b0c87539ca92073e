"""Finite function classes, offline regression oracles and their error diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    CmdpModel,
    LayeredStateSpace,
    Trajectory,
    ValidationResult,
    Violation,
    _check_dynamics,
    hellinger_table,
    occupancy_measures,
)


@dataclass
class LossClass:
    """Candidate loss tables, stacked as ``(n, C, S, A)``."""

    candidates: np.ndarray
    truth_index: int

    def __len__(self):
        return self.candidates.shape[0]

    @property
    def truth(self) -> np.ndarray:
        return self.candidates[self.truth_index]


@dataclass
class DynamicsClass:
    """Candidate dynamics tables, stacked as ``(n, C, S, A, S)``."""

    candidates: np.ndarray
    truth_index: int

    def __len__(self):
        return self.candidates.shape[0]

    @property
    def truth(self) -> np.ndarray:
        return self.candidates[self.truth_index]


def validate_classes(model: CmdpModel, loss_class: LossClass, dyn_class: DynamicsClass) -> ValidationResult:
    """Check candidate invariants and realizability against ``model``.

    Dynamics candidates that leave the layered structure are reported here so
    they can be rejected at load time.
    """
    out: list[Violation] = []
    F = loss_class.candidates
    if F.ndim != 4 or F.shape[1:] != model.losses.shape:
        out.append(Violation("shape", (), f"loss class shape {F.shape}"))
    else:
        for idx in np.argwhere((F < 0) | (F > 1)):
            out.append(Violation("loss_range", tuple(int(i) for i in idx), "loss class"))
        if not 0 <= loss_class.truth_index < len(loss_class):
            out.append(Violation("truth_index", (loss_class.truth_index,), "loss class"))
        elif not np.array_equal(loss_class.truth, model.losses):
            out.append(Violation("realizability", (loss_class.truth_index,), "loss class"))
    P = dyn_class.candidates
    if P.ndim != 5 or P.shape[1:] != model.dynamics.shape:
        out.append(Violation("shape", (), f"dynamics class shape {P.shape}"))
    else:
        for j in range(len(dyn_class)):
            _check_dynamics(model.space, P[j], out, label=f"dynamics candidate {j}")
        if not 0 <= dyn_class.truth_index < len(dyn_class):
            out.append(Violation("truth_index", (dyn_class.truth_index,), "dynamics class"))
        elif not np.array_equal(dyn_class.truth, model.dynamics):
            out.append(Violation("realizability", (dyn_class.truth_index,), "dynamics class"))
    return ValidationResult(out)


@dataclass
class TrajectoryDataset:
    trajectories: list[Trajectory] = field(default_factory=list)

    def append(self, trajectory: Trajectory) -> None:
        self.trajectories.append(trajectory)

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)


def _require_nonempty(cls):
    if len(cls) == 0:
        raise ValueError("function class is empty")


def squared_error_scores(dataset: TrajectoryDataset, loss_class: LossClass) -> np.ndarray:
    _require_nonempty(loss_class)
    scores = np.zeros(len(loss_class))
    for traj in dataset:
        for s, a, obs in traj.steps:
            scores += (loss_class.candidates[:, traj.context, s, a] - obs) ** 2
    return scores


def log_likelihood_scores(dataset: TrajectoryDataset, dyn_class: DynamicsClass) -> np.ndarray:
    _require_nonempty(dyn_class)
    scores = np.zeros(len(dyn_class))
    with np.errstate(divide="ignore"):
        for traj in dataset:
            for s, a, s_next in zip(traj.states, traj.actions, traj.next_states()):
                scores += np.log(dyn_class.candidates[:, traj.context, s, a, s_next])
    return scores


def least_squares_fit(dataset: TrajectoryDataset, loss_class: LossClass) -> int:
    """Index of the squared-error minimizer; smallest index on ties."""
    return int(np.argmin(squared_error_scores(dataset, loss_class)))


def log_loss_fit(dataset: TrajectoryDataset, dyn_class: DynamicsClass) -> int:
    """Index of the log-likelihood maximizer; -inf scores rank last, ties to smallest index."""
    return int(np.argmax(log_likelihood_scores(dataset, dyn_class)))


class LeastSquaresOracle:
    """Running per-candidate squared-error totals; ``fit`` is O(|class|)."""

    def __init__(self, loss_class: LossClass):
        _require_nonempty(loss_class)
        self.loss_class = loss_class
        self.scores = np.zeros(len(loss_class))

    def update(self, traj: Trajectory) -> None:
        F = self.loss_class.candidates
        for s, a, obs in traj.steps:
            self.scores += (F[:, traj.context, s, a] - obs) ** 2

    def fit(self) -> int:
        return int(np.argmin(self.scores))


class LogLossOracle:
    """Running per-candidate log-likelihood totals."""

    def __init__(self, dyn_class: DynamicsClass):
        _require_nonempty(dyn_class)
        self.dyn_class = dyn_class
        self.scores = np.zeros(len(dyn_class))

    def update(self, traj: Trajectory) -> None:
        P = self.dyn_class.candidates
        with np.errstate(divide="ignore"):
            for s, a, s_next in zip(traj.states, traj.actions, traj.next_states()):
                self.scores += np.log(P[:, traj.context, s, a, s_next])

    def fit(self) -> int:
        return int(np.argmax(self.scores))


def _weighted_occupancy(space, past_policies, dynamics, context_weights):
    """sum_c D(c) sum_i q(pi^i_c, P_c) as a ``(C, S, A)`` array."""
    out = np.zeros(dynamics.shape[:3])
    for c, policies in enumerate(past_policies):
        for pi in policies:
            out[c] += occupancy_measures(space, pi, dynamics[c])
        out[c] *= context_weights[c]
    return out


def squared_error_diagnostic(space: LayeredStateSpace, f_hat: np.ndarray, f_star: np.ndarray,
                             past_policies, dynamics: np.ndarray, context_weights) -> float:
    """Exact E_c[sum_i E_{pi^i_c, P*_c} sum_h (f_hat - f*)^2].

    ``past_policies[c]`` is the list of policies pi^1_c..pi^{t-1}_c and
    ``dynamics`` is the true ``(C, S, A, S)`` table.
    """
    if f_hat.shape != f_star.shape or f_hat.shape != dynamics.shape[:3]:
        raise ValueError("dimension mismatch")
    occ = _weighted_occupancy(space, past_policies, dynamics, context_weights)
    return float(np.sum(occ * (f_hat - f_star) ** 2))


def hellinger_diagnostic(space: LayeredStateSpace, P_hat: np.ndarray, P_star: np.ndarray,
                         past_policies, context_weights) -> float:
    """Exact E_c[sum_i E_{pi^i_c, P*_c} sum_h D_H^2(P*_c, P_hat_c)]."""
    if P_hat.shape != P_star.shape:
        raise ValueError("dimension mismatch")
    occ = _weighted_occupancy(space, past_policies, P_star, context_weights)
    return float(np.sum(occ * hellinger_table(P_star, P_hat)))


def squared_error_bound(horizon: int, episodes: int, class_size: int, delta: float) -> float:
    return 68 * horizon * np.log(2 * episodes**3 * class_size / delta)


def hellinger_bound(horizon: int, episodes: int, class_size: int, delta: float) -> float:
    return 2 * horizon * np.log(episodes * horizon * class_size / delta)
