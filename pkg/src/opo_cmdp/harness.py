"""Environments, the online interaction loop, regret accounting and lemma checks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    COMPUTED_TOL,
    LOSS_MODES,
    CmdpModel,
    LayeredStateSpace,
    hellinger_table,
    occupancy_measures,
    optimal_policy,
    policy_value,
    sample_trajectory,
    uniform_policy,
    validate_model,
    value_change_of_measure_check,
)
from .opo import OPOCMDP, _log_term, default_parameters
from .oracles import (
    DynamicsClass,
    LossClass,
    hellinger_bound,
    squared_error_bound,
    validate_classes,
)

DISTRACTOR_FLOOR = 1e-3


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name


@dataclass(frozen=True)
class ExperimentConfig:
    episodes: int
    layer_widths: tuple[int, ...]
    num_actions: int
    num_contexts: int = 1
    loss_class_size: int = 1
    dyn_class_size: int = 1
    delta: float = 0.1
    bonus_scale: float = 1.0
    loss_mode: str = "bernoulli"
    context_weights: Optional[tuple[float, ...]] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if self.context_weights is not None:
            object.__setattr__(self, "context_weights", tuple(float(w) for w in self.context_weights))
        for name in ("episodes", "num_actions", "num_contexts", "loss_class_size", "dyn_class_size"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(name, f"must be an integer >= 1, got {value!r}")
        if self.num_actions < 2:
            raise ConfigError("num_actions", "must be at least 2")
        w = self.layer_widths
        if len(w) < 2 or w[0] != 1 or w[-1] != 1 or min(w) < 1:
            raise ConfigError("layer_widths", f"need >= 2 positive widths with first and last equal to 1, got {list(w)}")
        if not 0 < self.delta < 1:
            raise ConfigError("delta", "must lie in (0, 1)")
        if not (self.bonus_scale >= 0 and math.isfinite(self.bonus_scale)):
            raise ConfigError("bonus_scale", "must be a finite number >= 0")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError("loss_mode", f"must be one of {LOSS_MODES}")
        if self.context_weights is not None:
            cw = np.asarray(self.context_weights)
            if cw.shape != (self.num_contexts,) or np.any(cw < 0) or abs(cw.sum() - 1) > 1e-12:
                raise ConfigError("context_weights", "must be a probability vector of length num_contexts")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigError("seed", "must be a nonnegative integer")

    @property
    def horizon(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def num_states(self) -> int:
        return sum(self.layer_widths)

    def weights(self) -> np.ndarray:
        if self.context_weights is None:
            return np.full(self.num_contexts, 1.0 / self.num_contexts)
        return np.asarray(self.context_weights, dtype=float)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_widths"] = list(self.layer_widths)
        if self.context_weights is not None:
            d["context_weights"] = list(self.context_weights)
        d["horizon"] = self.horizon
        return d


def standard_config(**overrides) -> ExperimentConfig:
    """The five-context, H=3 instance used throughout the acceptance runs."""
    base = dict(episodes=1000, layer_widths=(1, 2, 2, 1), num_actions=2, num_contexts=5,
                loss_class_size=8, dyn_class_size=8, delta=0.1)
    base.update(overrides)
    return ExperimentConfig(**base)


def _random_dynamics(space, num_contexts, num_actions, rng, floor=0.0):
    S = space.num_states
    P = np.zeros((num_contexts, S, num_actions, S))
    for h in range(1, space.horizon + 1):
        layer, nxt = space.layer(h), space.layer(h + 1)
        rows = rng.dirichlet(np.ones(len(nxt)), size=(num_contexts, len(layer), num_actions))
        if floor > 0:
            rows = np.maximum(rows, floor)
            rows /= rows.sum(axis=-1, keepdims=True)
        P[np.ix_(np.arange(num_contexts), layer, np.arange(num_actions), nxt)] = rows
    return P


def _random_losses(space, num_contexts, num_actions, rng):
    L = rng.random((num_contexts, space.num_states, num_actions))
    L[:, space.terminal_state] = 0.0
    return L


def generate_environment(config: ExperimentConfig, rng: np.random.Generator):
    """Random layered model plus realizable loss/dynamics classes.

    The truth sits at a seed-determined index of each class; all other
    candidates are independent draws, dynamics distractors floored at 1e-3.
    """
    space = LayeredStateSpace.from_widths(config.layer_widths)
    C, A = config.num_contexts, config.num_actions
    losses = _random_losses(space, C, A, rng)
    dynamics = _random_dynamics(space, C, A, rng)
    model = CmdpModel(space, dynamics, losses, config.weights(), config.loss_mode)

    loss_truth = int(rng.integers(config.loss_class_size))
    F = np.stack([losses if i == loss_truth else _random_losses(space, C, A, rng)
                  for i in range(config.loss_class_size)])
    dyn_truth = int(rng.integers(config.dyn_class_size))
    P = np.stack([dynamics if j == dyn_truth else _random_dynamics(space, C, A, rng, DISTRACTOR_FLOOR)
                  for j in range(config.dyn_class_size)])
    loss_class, dyn_class = LossClass(F, loss_truth), DynamicsClass(P, dyn_truth)

    check = validate_model(model)
    check.violations += validate_classes(model, loss_class, dyn_class).violations
    if not check.ok:
        raise RuntimeError(f"generated an invalid environment: {check.violations[:3]}")
    return model, loss_class, dyn_class


@dataclass
class RunRecord:
    episode: int
    context: int
    realized_value: float
    optimal_value: float
    regret_increment: float
    cum_regret: float
    expected_regret_increment: float
    cum_expected_regret: float
    loss_estimator_idx: int
    dyn_estimator_idx: int
    bonus_mass: float
    sq_err_diag: float
    hellinger_diag: float


CSV_COLUMNS = [f.name for f in RunRecord.__dataclass_fields__.values()]


@dataclass
class RunResult:
    config: ExperimentConfig
    model: CmdpModel
    loss_class: LossClass
    dyn_class: DynamicsClass
    records: list[RunRecord]
    optimal_values: np.ndarray
    # true_occupancy[c][t-1] = q(pi^t_c, P*_c); only filled for learner runs
    true_occupancy: list = field(default_factory=list)
    learner: Optional[OPOCMDP] = None


def _streams(seed: int):
    env, ctx, traj = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(env), np.random.default_rng(ctx), np.random.default_rng(traj)


def _setup(config: ExperimentConfig, environment=None):
    env_rng, ctx_rng, traj_rng = _streams(config.seed)
    if environment is None:
        environment = generate_environment(config, env_rng)
    model, loss_class, dyn_class = environment
    contexts = ctx_rng.choice(config.num_contexts, size=config.episodes, p=model.context_weights)
    optimal = np.array([optimal_policy(model.space, model.dynamics[c], model.losses[c])[1][model.space.initial_state]
                        for c in range(config.num_contexts)])
    return model, loss_class, dyn_class, contexts, optimal, traj_rng


def algo_params(config: ExperimentConfig):
    return default_parameters(config.episodes, config.horizon, config.num_states, config.num_actions,
                              (config.loss_class_size, config.dyn_class_size), config.delta,
                              bonus_scale=config.bonus_scale)


def run_experiment(config: ExperimentConfig, environment=None) -> RunResult:
    """Run the learner for ``config.episodes`` rounds; a pure function of the config.

    ``environment`` optionally replaces the generated ``(model, loss_class,
    dyn_class)`` triple; its shapes must agree with ``config``.
    """
    model, loss_class, dyn_class, contexts, optimal, traj_rng = _setup(config, environment)
    space, C, w = model.space, model.num_contexts, model.context_weights
    learner = OPOCMDP(space, model.num_actions, loss_class, dyn_class, algo_params(config))
    f_star, P_star = model.losses, model.dynamics

    true_occ = [[] for _ in range(C)]
    cum_true = np.zeros(model.losses.shape)  # sum_{i<t} q(pi^i_c, P*_c)
    records = []
    cum_regret = cum_expected = 0.0
    for t in range(1, config.episodes + 1):
        li, di = learner.begin_round()
        sq_diag = float(np.sum(w[:, None, None] * cum_true * (loss_class.candidates[li] - f_star) ** 2))
        hel_diag = float(np.sum(w[:, None, None] * cum_true
                                * hellinger_table(P_star, dyn_class.candidates[di])))
        values = np.empty(C)
        for c in range(C):
            pi = learner.policy(c, t)
            q = occupancy_measures(space, pi, P_star[c])
            true_occ[c].append(q)
            cum_true[c] += q
            values[c] = policy_value(space, pi, P_star[c], f_star[c])
        c_t = int(contexts[t - 1])
        bonus_mass = float(np.sum(true_occ[c_t][-1] * learner.bonus(c_t, t)))
        traj = sample_trajectory(model, c_t, learner.policy(c_t, t), traj_rng)
        learner.observe(traj)

        gaps = values - optimal
        inc = float(gaps[c_t])
        exp_inc = float(np.dot(w, gaps))
        cum_regret += inc
        cum_expected += exp_inc
        records.append(RunRecord(t, c_t, float(values[c_t]), float(optimal[c_t]), inc, cum_regret,
                                 exp_inc, cum_expected, li, di, bonus_mass, sq_diag, hel_diag))
    return RunResult(config, model, loss_class, dyn_class, records, optimal,
                     [np.array(q) for q in true_occ], learner)


def _run_fixed(config, policy_for: Callable[[CmdpModel, int], np.ndarray], environment=None) -> RunResult:
    model, loss_class, dyn_class, contexts, optimal, _ = _setup(config, environment)
    space, w = model.space, model.context_weights
    policies = [policy_for(model, c) for c in range(model.num_contexts)]
    values = np.array([policy_value(space, pi, model.dynamics[c], model.losses[c])
                       for c, pi in enumerate(policies)])
    gaps = values - optimal
    exp_inc = float(np.dot(w, gaps))
    records = []
    cum_regret = cum_expected = 0.0
    for t, c_t in enumerate(contexts, start=1):
        c_t = int(c_t)
        cum_regret += float(gaps[c_t])
        cum_expected += exp_inc
        records.append(RunRecord(t, c_t, float(values[c_t]), float(optimal[c_t]), float(gaps[c_t]),
                                 cum_regret, exp_inc, cum_expected, loss_class.truth_index,
                                 dyn_class.truth_index, 0.0, 0.0, 0.0))
    return RunResult(config, model, loss_class, dyn_class, records, optimal)


def baseline_uniform(config: ExperimentConfig, environment=None) -> RunResult:
    """Uniform policy every episode on the same environment and context sequence."""
    return _run_fixed(config, lambda m, c: uniform_policy(m.space.num_states, m.num_actions), environment)


def baseline_known_model(config: ExperimentConfig, environment=None) -> RunResult:
    return _run_fixed(config, lambda m, c: optimal_policy(m.space, m.dynamics[c], m.losses[c])[0], environment)


def _records(obj) -> list[RunRecord]:
    records = obj.records if isinstance(obj, RunResult) else list(obj)
    if not records:
        raise ValueError("no records")
    return records


def pseudo_regret(records) -> float:
    return float(sum(r.realized_value - r.optimal_value for r in _records(records)))


def expected_regret(records) -> float:
    return float(sum(r.expected_regret_increment for r in _records(records)))


def regret_curve(records) -> np.ndarray:
    return np.array([r.cum_regret for r in _records(records)])


def loglog_slope(records, start_fraction: float = 0.5) -> float:
    """Least-squares slope of log cumulative regret vs log t over the tail of the run."""
    cum = regret_curve(records)
    t = np.arange(1, len(cum) + 1)
    keep = (t > start_fraction * len(cum)) & (cum > 0)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(t[keep]), np.log(cum[keep]), 1)[0])


def regret_bound(config: ExperimentConfig) -> float:
    """High-probability regret bound with every constant kept.

    Sum of the unsimplified terms of the expected-regret bound at the theorem's
    bonus scales, plus the Azuma deviation term for the realized regret.
    """
    T, H, delta = config.episodes, config.horizon, config.delta
    S, A = config.num_states, config.num_actions
    nF, nP = config.loss_class_size, config.dyn_class_size
    params = default_parameters(T, H, S, A, (nF, nP), delta)
    bl, bp = params.beta_loss, params.beta_dyn
    log_main = _log_term(T, H, (nF, nP), delta)
    terms = [
        H,
        H * (H + 1),
        224 * T * H**3 * log_main / bl,
        50 * T * H**4 * math.log(8 * T * H * nP / delta) / bp,
        5184 * T * H**7 * math.log(4 * T * H * nP / delta) / min(bl, bp),
        7 * (bl + 2 * H * bp) * S * A * math.log(T + 1),
        math.sqrt(2 * H**4 * T * math.log(A)),
        2 * H * math.sqrt(2 * T * math.log(8 / delta)),
    ]
    return float(math.fsum(terms))


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    worst_slack: float
    checked: int = 0
    violations: int = 0


def azuma_gap_check(records, delta: float, horizon: int | None = None) -> CheckResult:
    """|R_T - E R_T| <= 2H sqrt(2T log(8/delta))."""
    records = _records(records)
    if horizon is None:
        raise ValueError("horizon is required")
    T = len(records)
    allowed = 2 * horizon * math.sqrt(2 * T * math.log(8 / delta))
    gap = abs(pseudo_regret(records) - expected_regret(records))
    return CheckResult(gap <= allowed, allowed - gap, 1, int(gap > allowed))


def concentration_check(result: RunResult) -> dict[str, CheckResult]:
    """Both oracle generalization bounds at every prefix of the run."""
    cfg = result.config
    sq = np.array([r.sq_err_diag for r in result.records])
    hel = np.array([r.hellinger_diag for r in result.records])
    out = {}
    for name, series, bound in (
        ("squared_error", sq, squared_error_bound(cfg.horizon, cfg.episodes, cfg.loss_class_size, cfg.delta)),
        ("hellinger", hel, hellinger_bound(cfg.horizon, cfg.episodes, cfg.dyn_class_size, cfg.delta)),
    ):
        slack = bound - series
        out[name] = CheckResult(bool(np.all(slack >= 0)), float(slack.min()), len(series), int(np.sum(slack < 0)))
    return out


def log_sum_check(x, lam: float = 1.0) -> CheckResult:
    """sum_t x_t / (lam + sum_{k<t} x_k) <= 2 log(T+1) for each column of ``x``.

    ``x`` has time along axis 0; extra axes are independent sequences.
    """
    x = np.asarray(x, dtype=float)
    T = x.shape[0]
    prefix = lam + np.cumsum(x, axis=0) - x
    lhs = np.sum(x / prefix, axis=0)
    slack = 2 * math.log(T + 1) - lhs
    slack = np.atleast_1d(slack)
    return CheckResult(bool(np.all(slack >= 0)), float(slack.min()), slack.size, int(np.sum(slack < 0)))


def omd_check(policies: Sequence[np.ndarray], q_hats: Sequence[np.ndarray], eta: float,
              states: Sequence[int] | None = None) -> CheckResult:
    """Mirror-descent regret inequality per state against every one-hot comparator.

    ``policies[k]`` is the iterate the loss ``q_hats[k]`` was charged to.
    """
    K = len(q_hats)
    if K == 0:
        return CheckResult(True, float("inf"))
    X = np.stack(policies[:K])  # (K, S, A)
    G = np.stack(q_hats)
    if states is not None:
        X, G = X[:, states], G[:, states]
    A = X.shape[-1]
    played = np.sum(G * X, axis=(0, 2))  # (S,)
    comparator = G.sum(axis=0)  # (S, A)
    lhs = played[:, None] - comparator
    rhs = math.log(A) / eta + eta / 2 * np.sum(X * G**2, axis=(0, 2))
    slack = rhs[:, None] - lhs
    return CheckResult(bool(np.all(slack >= -COMPUTED_TOL)), float(slack.min()), slack.size,
                       int(np.sum(slack < -COMPUTED_TOL)))


@dataclass
class LemmaReport:
    checks: dict[str, CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def lines(self) -> list[str]:
        return [f"{name}: {'PASS' if c.passed else 'FAIL'} (checked={c.checked}, "
                f"violations={c.violations}, worst_slack={c.worst_slack:.6g})"
                for name, c in self.checks.items()]


def lemma_suite(result: RunResult) -> LemmaReport:
    """Re-check the auxiliary inequalities on a completed learner run."""
    if result.learner is None:
        raise ValueError("lemma_suite needs a learner run")
    model, space = result.model, result.model.space
    nonterminal = np.flatnonzero(space.layer_of <= space.horizon)

    sums = [log_sum_check(occ[:, nonterminal, :]) for occ in result.true_occupancy]

    eta = result.learner.params.eta
    omd = []
    for c, track in sorted(result.learner.cache.tracks.items()):
        omd.append(omd_check(track.policies, track.q_hats, eta, nonterminal))

    com = []
    for r in result.records:
        c = r.context
        pi = result.learner.cache.policies(c)[r.episode - 1]
        com.append(value_change_of_measure_check(space, pi, model.dynamics[c],
                                                 result.dyn_class.candidates[r.dyn_estimator_idx, c],
                                                 model.losses[c]))

    def merge(results):
        return CheckResult(all(x.passed for x in results), min(x.worst_slack for x in results),
                           sum(x.checked for x in results), sum(x.violations for x in results))

    return LemmaReport({
        "log_sums": merge(sums),
        "omd": merge(omd),
        "change_of_measure": CheckResult(all(x.holds for x in com), min(x.slack for x in com),
                                         len(com), sum(not x.holds for x in com)),
        "change_of_measure_corollary": CheckResult(all(x.corollary_holds for x in com),
                                                   min(x.corollary_slack for x in com), len(com),
                                                   sum(not x.corollary_holds for x in com)),
    })


def with_seed(config: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(config, seed=seed)
