"""Optimistic policy optimization for contextual MDPs.

Policies for a context are never stored globally; they are regenerated by
replaying the estimator history (``EstimatorHistory``) stage by stage. The
``PolicySequenceCache`` keeps each context's computed prefix so repeated
replays only extend it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import LayeredStateSpace, occupancy_measures, uniform_policy
from .oracles import DynamicsClass, LeastSquaresOracle, LogLossOracle, LossClass


@dataclass(frozen=True)
class AlgoParams:
    eta: float
    beta_loss: float
    beta_dyn: float
    bonus_scale: float = 1.0
    delta: float = 0.1

    def __post_init__(self):
        if not (self.eta > 0 and self.beta_loss > 0 and self.beta_dyn > 0):
            raise ValueError("eta, beta_loss and beta_dyn must be positive")
        if self.bonus_scale < 0:
            raise ValueError("bonus_scale must be nonnegative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


def _log_term(T, H, class_sizes, delta):
    n_loss, n_dyn = class_sizes
    return math.log(128 * T**4 * H * n_loss * n_dyn / delta**2)


def default_parameters(T: int, H: int, num_states: int, num_actions: int,
                       class_sizes: tuple[int, int], delta: float,
                       bonus_scale: float = 1.0) -> AlgoParams:
    """Learning rate and bonus scales prescribed by the regret theorem."""
    if min(T, H, num_states, *class_sizes) < 1:
        raise ValueError("T, H, num_states and class sizes must be positive")
    if num_actions < 2:
        raise ValueError("num_actions must be at least 2 (eta vanishes otherwise)")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    log_term = _log_term(T, H, class_sizes, delta)
    denom = num_states * num_actions * math.log(T + 1)
    beta_loss = math.sqrt(5184 * T * H**7 * log_term / (7 * denom))
    beta_dyn = math.sqrt(5184 * T * H**6 * log_term / (14 * denom))
    eta = math.sqrt(2 * math.log(num_actions) / (H**2 * T))
    return AlgoParams(eta, beta_loss, beta_dyn, bonus_scale, delta)


def exploration_bonus(beta, cum_occupancy):
    """min{1, (beta/2) / (1 + cum_occupancy)}, elementwise."""
    return np.minimum(1.0, (beta / 2) / (1.0 + np.asarray(cum_occupancy, dtype=float)))


def combined_bonus(b_loss, b_dyn, horizon: int):
    return b_loss + 2 * horizon * b_dyn


@dataclass
class OptimisticValues:
    Q: np.ndarray  # (S, A)
    V: np.ndarray  # (S,)


def optimistic_backup(space: LayeredStateSpace, f_hat: np.ndarray, P_hat: np.ndarray,
                      bonus: np.ndarray, policy: np.ndarray) -> OptimisticValues:
    """Backward induction on the bonus-reduced loss, clipped below at zero."""
    S, A = policy.shape
    if f_hat.shape != (S, A) or bonus.shape != (S, A) or P_hat.shape != (S, A, S):
        raise ValueError("dimension mismatch")
    V = np.zeros(S)
    Q = np.zeros((S, A))
    loss = f_hat - bonus
    for h in range(space.horizon, 0, -1):
        layer = space.layer(h)
        Q[layer] = np.maximum(0.0, loss[layer] + P_hat[layer] @ V)
        V[layer] = np.einsum("sa,sa->s", Q[layer], policy[layer])
    return OptimisticValues(Q, V)


def policy_improve(policy: np.ndarray, Q_hat, eta: float) -> np.ndarray:
    """Exponential-weights step pi'(a|s) ~ pi(a|s) exp(-eta Q(s,a)).

    Works in log space with a per-row max shift so long runs cannot underflow.
    """
    Q = Q_hat.Q if isinstance(Q_hat, OptimisticValues) else np.asarray(Q_hat)
    with np.errstate(divide="ignore"):
        logits = np.log(policy) - eta * Q
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


class EstimatorHistory:
    """Oracle outputs per round: entry k is the fit on trajectories 1..k-1."""

    def __init__(self):
        self.loss_idx: list[int] = []
        self.dyn_idx: list[int] = []
        self._fingerprints = [0]

    def append(self, loss_idx: int, dyn_idx: int) -> None:
        self.loss_idx.append(int(loss_idx))
        self.dyn_idx.append(int(dyn_idx))
        self._fingerprints.append(hash((self._fingerprints[-1], int(loss_idx), int(dyn_idx))))

    def __len__(self):
        return len(self.loss_idx)

    def fingerprint(self, k: int) -> int:
        """Digest of entries 1..k."""
        return self._fingerprints[k]


class CacheInconsistentError(RuntimeError):
    pass


@dataclass
class _ContextTrack:
    policies: list  # pi^1 .. pi^m
    q_hats: list = field(default_factory=list)  # Q-hat^1 .. Q-hat^{m-1}
    bonuses: dict = field(default_factory=dict)  # stage k -> combined bonus b^k
    # dynamics candidate j -> [n, sum_{i<=n} q(pi^i, P_j)]
    cum_occ: dict = field(default_factory=dict)
    fingerprint: int = 0  # history digest the stages were computed from


class PolicySequenceCache:
    """Per-context policy prefixes plus running occupancy sums per dynamics candidate."""

    def __init__(self, num_states: int, num_actions: int):
        self.num_states = num_states
        self.num_actions = num_actions
        self.tracks: dict[int, _ContextTrack] = {}

    def track(self, context: int) -> _ContextTrack:
        if context not in self.tracks:
            self.tracks[context] = _ContextTrack([uniform_policy(self.num_states, self.num_actions)])
        return self.tracks[context]

    def policies(self, context: int) -> list:
        return self.track(context).policies


def _cumulative_occupancy(space, track, context, j, upto, dyn_class):
    """sum_{i=1}^{upto} q(pi^i_c, P_j,c), summed in index order."""
    entry = track.cum_occ.get(j)
    if entry is None:
        entry = track.cum_occ[j] = [0, np.zeros((space.num_states, track.policies[0].shape[1]))]
    n, total = entry
    if n > upto:
        raise CacheInconsistentError(f"running sum for candidate {j} is past stage {upto}")
    P = dyn_class.candidates[j, context]
    for i in range(n, upto):
        total = total + occupancy_measures(space, track.policies[i], P)
    entry[0], entry[1] = upto, total
    return total


def stage_bonus(space: LayeredStateSpace, context: int, k: int, history: EstimatorHistory,
                dyn_class: DynamicsClass, params: AlgoParams, cache: PolicySequenceCache) -> np.ndarray:
    """Combined bonus b^k_c(s,a); requires policies pi^1..pi^{k-1} in the cache."""
    track = cache.track(context)
    if k in track.bonuses:
        return track.bonuses[k]
    if len(track.policies) < k - 1:
        raise CacheInconsistentError(f"stage {k} needs pi^1..pi^{k - 1}")
    cum = _cumulative_occupancy(space, track, context, history.dyn_idx[k - 1], k - 1, dyn_class)
    b_loss = exploration_bonus(params.beta_loss * params.bonus_scale, cum)
    b_dyn = exploration_bonus(params.beta_dyn * params.bonus_scale, cum)
    bonus = combined_bonus(b_loss, b_dyn, space.horizon)
    track.bonuses[k] = bonus
    return bonus


def replay_policy_sequence(space: LayeredStateSpace, context: int, target_stage: int,
                           history: EstimatorHistory, loss_class: LossClass,
                           dyn_class: DynamicsClass, params: AlgoParams,
                           cache: PolicySequenceCache) -> np.ndarray:
    """Return pi^t_c, extending the cached prefix for ``context`` as needed.

    Stage k evaluates every earlier policy of the context under the stage-k
    dynamics estimate, forms the bonuses, runs the optimistic backup with
    the stage-k estimates and takes one exponential-weights step.
    """
    if target_stage < 1:
        raise ValueError("stages start at 1")
    if len(history) < target_stage - 1:
        raise ValueError(f"history has {len(history)} entries, stage {target_stage} needs {target_stage - 1}")
    track = cache.track(context)
    m = len(track.policies)
    if track.fingerprint != history.fingerprint(m - 1):
        raise CacheInconsistentError(f"cached prefix of context {context} does not match the history")
    for k in range(m, target_stage):
        bonus = stage_bonus(space, context, k, history, dyn_class, params, cache)
        f_hat = loss_class.candidates[history.loss_idx[k - 1], context]
        P_hat = dyn_class.candidates[history.dyn_idx[k - 1], context]
        pi_k = track.policies[k - 1]
        values = optimistic_backup(space, f_hat, P_hat, bonus, pi_k)
        track.q_hats.append(values.Q)
        track.policies.append(policy_improve(pi_k, values, params.eta))
        track.fingerprint = history.fingerprint(k)
    return track.policies[target_stage - 1]


class OPOCMDP:
    """Online learner: oracle refits, on-demand replay, one policy per context and round."""

    def __init__(self, space: LayeredStateSpace, num_actions: int, loss_class: LossClass,
                 dyn_class: DynamicsClass, params: AlgoParams):
        self.space = space
        self.loss_class = loss_class
        self.dyn_class = dyn_class
        self.params = params
        self.history = EstimatorHistory()
        self.cache = PolicySequenceCache(space.num_states, num_actions)
        self.loss_oracle = LeastSquaresOracle(loss_class)
        self.dyn_oracle = LogLossOracle(dyn_class)

    @property
    def round(self) -> int:
        return len(self.history)

    def begin_round(self) -> tuple[int, int]:
        """Refit both oracles on everything observed so far and record the fit."""
        fit = self.loss_oracle.fit(), self.dyn_oracle.fit()
        self.history.append(*fit)
        return fit

    def policy(self, context: int, stage: int | None = None) -> np.ndarray:
        stage = self.round if stage is None else stage
        return replay_policy_sequence(self.space, context, stage, self.history, self.loss_class,
                                      self.dyn_class, self.params, self.cache)

    def bonus(self, context: int, stage: int | None = None) -> np.ndarray:
        stage = self.round if stage is None else stage
        self.policy(context, stage)
        return stage_bonus(self.space, context, stage, self.history, self.dyn_class, self.params, self.cache)

    def observe(self, trajectory) -> None:
        self.loss_oracle.update(trajectory)
        self.dyn_oracle.update(trajectory)
