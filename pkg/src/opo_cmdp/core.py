"""Layered contextual MDPs and exact dynamic-programming primitives.

States use one global index space; ``LayeredStateSpace`` records which layer
each index belongs to. Tables are plain numpy arrays:

* dynamics  ``(C, S, A, S)``   ``P[c, s, a, s']``
* losses    ``(C, S, A)``      ``l[c, s, a]``
* policy    ``(S, A)``         ``pi[s, a]``
* occupancy ``(S, A)``         ``q[s, a]`` (the layer is implied by ``s``)

Layers are numbered 1..H+1 to match the usual episodic notation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

INPUT_TOL = 1e-12
COMPUTED_TOL = 1e-10

LOSS_MODES = ("bernoulli", "deterministic")


class DimensionError(ValueError):
    """Tables, policies and state spaces disagree on shape."""


class LayeredStateSpace:
    """Loop-free partition of ``{0..num_states-1}`` into layers S_1..S_{H+1}."""

    def __init__(self, layers: Sequence[Sequence[int]]):
        self.layers = [np.asarray(layer, dtype=np.intp) for layer in layers]
        if len(self.layers) < 2:
            raise ValueError("need at least two layers (H >= 1)")
        self.num_states = int(sum(len(layer) for layer in self.layers))
        layer_of = np.full(self.num_states, -1, dtype=np.intp)
        for h, layer in enumerate(self.layers, start=1):
            if len(layer) == 0:
                raise ValueError(f"layer {h} is empty")
            if layer.min() < 0 or layer.max() >= self.num_states:
                raise ValueError(f"layer {h} has out-of-range state indices")
            if np.any(layer_of[layer] != -1):
                raise ValueError(f"layer {h} repeats a state")
            layer_of[layer] = h
        if len(self.layers[0]) != 1 or len(self.layers[-1]) != 1:
            raise ValueError("first and last layers must be singletons")
        self.layer_of = layer_of

    @classmethod
    def from_widths(cls, widths: Sequence[int]) -> "LayeredStateSpace":
        bounds = np.cumsum([0, *widths])
        return cls([range(bounds[i], bounds[i + 1]) for i in range(len(widths))])

    @property
    def horizon(self) -> int:
        return len(self.layers) - 1

    @property
    def initial_state(self) -> int:
        return int(self.layers[0][0])

    @property
    def terminal_state(self) -> int:
        return int(self.layers[-1][0])

    def layer(self, h: int) -> np.ndarray:
        """States of layer ``h`` (1-based)."""
        return self.layers[h - 1]

    @property
    def widths(self) -> list[int]:
        return [len(layer) for layer in self.layers]

    def __eq__(self, other):
        return isinstance(other, LayeredStateSpace) and all(
            np.array_equal(a, b) for a, b in zip(self.layers, other.layers)
        ) and len(self.layers) == len(other.layers)

    def __repr__(self):
        return f"LayeredStateSpace(widths={self.widths})"


@dataclass
class CmdpModel:
    """Ground-truth contextual MDP over a shared layered state space."""

    space: LayeredStateSpace
    dynamics: np.ndarray
    losses: np.ndarray
    context_weights: np.ndarray
    loss_mode: str = "bernoulli"

    @property
    def num_contexts(self) -> int:
        return self.losses.shape[0]

    @property
    def num_actions(self) -> int:
        return self.losses.shape[2]

    @property
    def horizon(self) -> int:
        return self.space.horizon


@dataclass(frozen=True)
class Violation:
    kind: str
    index: tuple
    detail: str = ""


@dataclass
class ValidationResult:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def _check_dynamics(space, dynamics, violations, label="dynamics"):
    C, S, A, S2 = dynamics.shape
    if S != space.num_states or S2 != space.num_states:
        violations.append(Violation("shape", (), f"{label} shape {dynamics.shape}"))
        return
    if np.any(dynamics < 0):
        for idx in np.argwhere(dynamics < 0):
            violations.append(Violation("negative", tuple(int(i) for i in idx), label))
    for h in range(1, space.horizon + 1):
        layer = space.layer(h)
        nxt = space.layer(h + 1)
        rows = dynamics[:, layer]  # (C, n, A, S)
        sums = rows.sum(axis=-1)
        for c, i, a in np.argwhere(np.abs(sums - 1.0) > INPUT_TOL):
            violations.append(Violation(
                "row_sum", (int(c), int(layer[i]), int(a)), f"{label} row sums to {sums[c, i, a]!r}"))
        outside = np.ones(space.num_states, dtype=bool)
        outside[nxt] = False
        leak = rows[..., outside]
        for c, i, a in np.argwhere(np.any(leak != 0, axis=-1)):
            violations.append(Violation(
                "loop_free", (int(c), int(layer[i]), int(a)),
                f"{label} puts mass outside layer {h + 1}"))


def validate_model(model: CmdpModel) -> ValidationResult:
    """Check every table invariant; violations are returned, never raised."""
    out: list[Violation] = []
    space = model.space
    losses = np.asarray(model.losses)
    if losses.ndim != 3 or losses.shape[1] != space.num_states:
        out.append(Violation("shape", (), f"losses shape {losses.shape}"))
    else:
        for idx in np.argwhere((losses < 0) | (losses > 1) | ~np.isfinite(losses)):
            out.append(Violation("loss_range", tuple(int(i) for i in idx)))
        for c, a in np.argwhere(losses[:, space.terminal_state, :] != 0):
            out.append(Violation("terminal_loss", (int(c), space.terminal_state, int(a))))
    dyn = np.asarray(model.dynamics)
    if dyn.ndim != 4 or dyn.shape[:3] != losses.shape:
        out.append(Violation("shape", (), f"dynamics shape {dyn.shape}"))
    else:
        _check_dynamics(space, dyn, out)
    w = np.asarray(model.context_weights)
    if w.shape != (losses.shape[0],):
        out.append(Violation("shape", (), f"context_weights shape {w.shape}"))
    elif np.any(w < 0) or abs(w.sum() - 1.0) > INPUT_TOL:
        out.append(Violation("context_weights", (), f"sum {w.sum()!r}"))
    if model.loss_mode not in LOSS_MODES:
        out.append(Violation("loss_mode", (), model.loss_mode))
    return ValidationResult(out)


def uniform_policy(num_states: int, num_actions: int) -> np.ndarray:
    return np.full((num_states, num_actions), 1.0 / num_actions)


def _check_dims(space, policy, dynamics=None, loss=None):
    S, A = policy.shape
    if S != space.num_states:
        raise DimensionError(f"policy has {S} states, space has {space.num_states}")
    if dynamics is not None and dynamics.shape != (S, A, S):
        raise DimensionError(f"dynamics shape {dynamics.shape} != {(S, A, S)}")
    if loss is not None and loss.shape != (S, A):
        raise DimensionError(f"loss shape {loss.shape} != {(S, A)}")


def occupancy_measures(space: LayeredStateSpace, policy: np.ndarray, dynamics: np.ndarray) -> np.ndarray:
    """Forward recursion for q_h(s, a | pi, P); rows of the terminal layer stay 0."""
    _check_dims(space, policy, dynamics)
    q = np.zeros_like(policy, dtype=float)
    s1 = space.initial_state
    q[s1] = policy[s1]
    for h in range(1, space.horizon):
        layer, nxt = space.layer(h), space.layer(h + 1)
        reach = np.einsum("sa,sat->t", q[layer], dynamics[layer])
        q[nxt] = reach[nxt, None] * policy[nxt]
    return q


def layer_sums(space: LayeredStateSpace, q: np.ndarray) -> np.ndarray:
    return np.array([q[space.layer(h)].sum() for h in range(1, space.horizon + 1)])


def value_backup(space: LayeredStateSpace, policy: np.ndarray, dynamics: np.ndarray,
                 loss: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bellman backup of ``policy``; returns ``(V, Q)`` indexed by global state."""
    _check_dims(space, policy, dynamics, loss)
    V = np.zeros(space.num_states)
    Q = np.zeros_like(loss, dtype=float)
    for h in range(space.horizon, 0, -1):
        layer = space.layer(h)
        Q[layer] = loss[layer] + dynamics[layer] @ V
        V[layer] = np.einsum("sa,sa->s", Q[layer], policy[layer])
    return V, Q


def policy_value(space, policy, dynamics, loss) -> float:
    return float(value_backup(space, policy, dynamics, loss)[0][space.initial_state])


def optimal_policy(space: LayeredStateSpace, dynamics: np.ndarray,
                   loss: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backward induction; deterministic policy, ties go to the smallest action."""
    S, A = loss.shape
    _check_dims(space, np.zeros((S, A)), dynamics, loss)
    V = np.zeros(S)
    policy = np.zeros((S, A))
    policy[:, 0] = 1.0
    for h in range(space.horizon, 0, -1):
        layer = space.layer(h)
        Q = loss[layer] + dynamics[layer] @ V
        best = np.argmin(Q, axis=1)
        policy[layer] = 0.0
        policy[layer, best] = 1.0
        V[layer] = Q[np.arange(len(layer)), best]
    return policy, V


@dataclass
class Trajectory:
    context: int
    states: list[int]   # s_1..s_H
    actions: list[int]
    losses: list[float]
    terminal: int

    @property
    def steps(self):
        return list(zip(self.states, self.actions, self.losses))

    def next_states(self) -> list[int]:
        return self.states[1:] + [self.terminal]


def _draw(probs: np.ndarray, u: float) -> int:
    cdf = np.cumsum(probs)
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    if i >= len(probs) or probs[i] <= 0:
        i = int(np.flatnonzero(probs > 0)[-1])
    return i


def sample_trajectory(model: CmdpModel, context: int, policy: np.ndarray,
                      rng: np.random.Generator) -> Trajectory:
    """Roll out ``policy`` in context ``context`` of the true model."""
    space = model.space
    _check_dims(space, policy, model.dynamics[context], model.losses[context])
    P = model.dynamics[context]
    means = model.losses[context]
    s = space.initial_state
    states, actions, losses = [], [], []
    for _ in range(space.horizon):
        a = _draw(policy[s], rng.random())
        mean = means[s, a]
        if model.loss_mode == "bernoulli":
            obs = float(rng.random() < mean)
        else:
            obs = float(mean)
        states.append(s)
        actions.append(a)
        losses.append(obs)
        s = _draw(P[s, a], rng.random())
    return Trajectory(context, states, actions, losses, s)


def _as_distribution(p, name):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError(f"{name} must be a 1-d probability vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} is not a probability vector")
    return p


def hellinger_sq(p, q) -> float:
    """Squared Hellinger distance, sum_x (sqrt p(x) - sqrt q(x))^2, in [0, 2]."""
    p, q = _as_distribution(p, "p"), _as_distribution(q, "q")
    if p.shape != q.shape:
        raise ValueError("length mismatch")
    return float(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2))


def tv_distance(p, q) -> float:
    p, q = _as_distribution(p, "p"), _as_distribution(q, "q")
    if p.shape != q.shape:
        raise ValueError("length mismatch")
    return 0.5 * float(np.abs(p - q).sum())


def hellinger_table(P_a: np.ndarray, P_b: np.ndarray) -> np.ndarray:
    """Row-wise squared Hellinger distance over the last axis (no validation)."""
    return np.sum((np.sqrt(P_a) - np.sqrt(P_b)) ** 2, axis=-1)


@dataclass(frozen=True)
class ChangeOfMeasureResult:
    holds: bool
    slack: float
    corollary_holds: bool
    corollary_slack: float


def value_change_of_measure_check(space: LayeredStateSpace, policy: np.ndarray,
                                  dynamics_true: np.ndarray, dynamics_est: np.ndarray,
                                  loss: np.ndarray) -> ChangeOfMeasureResult:
    """Evaluate both change-of-measure inequalities between two dynamics.

    ``V_est <= 3 V_true + 9H^2 E`` and ``V_true <= 3 V_est + (54H^2 + 162H^4) E``
    where ``E`` is the expected summed squared Hellinger distance along
    trajectories of ``policy`` under the true dynamics. Slack is rhs - lhs.
    """
    _check_dims(space, policy, dynamics_est, loss)
    H = space.horizon
    v_true = policy_value(space, policy, dynamics_true, loss)
    v_est = policy_value(space, policy, dynamics_est, loss)
    q = occupancy_measures(space, policy, dynamics_true)
    expected_hel = float(np.sum(q * hellinger_table(dynamics_est, dynamics_true)))
    slack = 3 * v_true + 9 * H**2 * expected_hel - v_est
    cslack = 3 * v_est + (54 * H**2 + 162 * H**4) * expected_hel - v_true
    return ChangeOfMeasureResult(slack >= -COMPUTED_TOL, slack, cslack >= -COMPUTED_TOL, cslack)
