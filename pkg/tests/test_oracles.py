import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opo_cmdp.core import LayeredStateSpace, Trajectory, hellinger_table
from opo_cmdp.oracles import (
    DynamicsClass,
    LeastSquaresOracle,
    LogLossOracle,
    LossClass,
    TrajectoryDataset,
    hellinger_diagnostic,
    least_squares_fit,
    log_likelihood_scores,
    log_loss_fit,
    squared_error_diagnostic,
    squared_error_scores,
)

from conftest import random_instance


def rollout_sums(space, policy, P, g, n, rng):
    """Per-episode sum_h g(s_h, a_h) over ``n`` vectorized rollouts."""
    S, A = policy.shape
    s = np.full(n, space.initial_state)
    total = np.zeros(n)
    for _ in range(space.horizon):
        a = np.minimum((rng.random(n)[:, None] > np.cumsum(policy[s], axis=1)).sum(axis=1), A - 1)
        total += g[s, a]
        s = np.minimum((rng.random(n)[:, None] > np.cumsum(P[s, a], axis=1)).sum(axis=1), S - 1)
    return total


def one_step_dataset(context=0, s=0, a=0, loss=1.0, nxt=1):
    return TrajectoryDataset([Trajectory(context, [s], [a], [loss], nxt)])


def h1_tables(values):
    """Loss class over an H=1 space, one context, one action; ``values`` at (s_1, a_0)."""
    F = np.zeros((len(values), 1, 2, 1))
    F[:, 0, 0, 0] = values
    return LossClass(F, 0)


def h1_dynamics(probs_to_terminal):
    """Dynamics candidates on a [1, 2, 1] space: P(s=1 | s_1, a_0) per candidate."""
    n = len(probs_to_terminal)
    P = np.zeros((n, 1, 4, 1, 4))
    for j, p in enumerate(probs_to_terminal):
        P[j, 0, 0, 0, 1] = p
        P[j, 0, 0, 0, 2] = 1 - p
        P[j, 0, 1:3, 0, 3] = 1.0
    return DynamicsClass(P, 0)


class TestLeastSquares:
    def test_empty_dataset(self):
        assert least_squares_fit(TrajectoryDataset(), h1_tables([0.9, 0.2])) == 0

    def test_picks_smaller_error(self):
        # errors (1-0.2)^2 = 0.64 and (1-0.9)^2 = 0.01
        assert least_squares_fit(one_step_dataset(), h1_tables([0.2, 0.9])) == 1

    def test_singleton(self, rng):
        ds = TrajectoryDataset([Trajectory(0, [0], [0], [float(rng.random())], 1) for _ in range(5)])
        assert least_squares_fit(ds, h1_tables([0.7])) == 0

    def test_ties_to_smallest_index(self):
        assert least_squares_fit(one_step_dataset(loss=0.5), h1_tables([0.4, 0.6, 0.4])) == 0

    def test_empty_class(self):
        with pytest.raises(ValueError):
            least_squares_fit(TrajectoryDataset(), LossClass(np.zeros((0, 1, 2, 1)), 0))


class TestLogLoss:
    def test_empty_dataset(self):
        assert log_loss_fit(TrajectoryDataset(), h1_dynamics([0.1, 0.9])) == 0

    def test_likelier_candidate(self):
        ds = TrajectoryDataset([Trajectory(0, [0, 1], [0, 0], [0.0, 0.0], 3)])
        assert log_loss_fit(ds, h1_dynamics([0.1, 0.9])) == 1

    def test_zero_probability_excluded(self):
        ds = TrajectoryDataset([Trajectory(0, [0, 1], [0, 0], [0.0, 0.0], 3)])
        assert log_loss_fit(ds, h1_dynamics([0.0, 0.5])) == 1
        scores = log_likelihood_scores(ds, h1_dynamics([0.0, 0.5]))
        assert scores[0] == -np.inf

    def test_all_impossible_falls_back_to_zero(self):
        ds = TrajectoryDataset([Trajectory(0, [0, 1], [0, 0], [0.0, 0.0], 3)])
        assert log_loss_fit(ds, h1_dynamics([0.0, 0.0])) == 0


def random_dataset(rng, n_traj, H, widths, A, C):
    bounds = np.cumsum([0, *widths])
    trajs = []
    for _ in range(n_traj):
        states = [int(rng.integers(bounds[h], bounds[h + 1])) for h in range(H + 1)]
        trajs.append(Trajectory(int(rng.integers(C)), states[:-1], list(rng.integers(A, size=H)),
                                list(rng.integers(2, size=H).astype(float)), states[-1]))
    return TrajectoryDataset(trajs)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 30), st.integers(1, 6))
def test_oracles_optimal_and_incremental(seed, n_traj, n_cand):
    rng = np.random.default_rng(seed)
    widths, A, C = [1, 2, 3, 1], 2, 2
    space = LayeredStateSpace.from_widths(widths)
    S = space.num_states
    F = rng.random((n_cand, C, S, A)).round(1)  # coarse grid to provoke ties
    P = np.zeros((n_cand, C, S, A, S))
    for h in range(1, 4):
        nxt = space.layer(h + 1)
        for s in space.layer(h):
            P[:, :, s, :, nxt[0]:nxt[-1] + 1] = rng.dirichlet(np.ones(len(nxt)), size=(n_cand, C, A))
    ds = random_dataset(rng, n_traj, 3, widths, A, C)
    lc, dc = LossClass(F, 0), DynamicsClass(P, 0)

    # independent rescoring: one pass per candidate
    sq = [sum((F[j, t.context, s, a] - l) ** 2 for t in ds for s, a, l in t.steps) for j in range(n_cand)]
    ll = [sum(np.log(P[j, t.context, s, a, s2]) for t in ds
              for s, a, s2 in zip(t.states, t.actions, t.next_states())) for j in range(n_cand)]
    i = least_squares_fit(ds, lc)
    assert all(sq[i] <= x + 1e-12 for x in sq)
    assert all(sq[j] > sq[i] + 1e-12 for j in range(i) if abs(sq[j] - sq[i]) > 1e-12)
    j = log_loss_fit(ds, dc)
    assert all(ll[j] >= x - 1e-9 for x in ll)

    inc_l, inc_d = LeastSquaresOracle(lc), LogLossOracle(dc)
    for t in ds:
        inc_l.update(t)
        inc_d.update(t)
    np.testing.assert_array_equal(inc_l.scores, squared_error_scores(ds, lc))
    np.testing.assert_array_equal(inc_d.scores, log_likelihood_scores(ds, dc))
    assert inc_l.fit() == i and inc_d.fit() == j


class TestDiagnostics:
    def test_exact_estimate_is_zero(self, rng):
        space, pi, P, loss = random_instance(rng)
        w = np.array([1.0])
        assert squared_error_diagnostic(space, loss[None], loss[None], [[pi, pi]], P[None], w) == 0
        assert hellinger_diagnostic(space, P[None], P[None], [[pi]], w) == 0

    def test_h1_single_action(self):
        space = LayeredStateSpace.from_widths([1, 1])
        P = np.zeros((1, 2, 1, 2))
        P[0, 0, 0, 1] = 1.0
        f_hat = np.array([[[0.75], [0.0]]])
        f_star = np.array([[[0.25], [0.0]]])
        pi = np.ones((2, 1))
        assert squared_error_diagnostic(space, f_hat, f_star, [[pi]], P, [1.0]) == 0.25

    def test_disjoint_support_hellinger(self):
        space = LayeredStateSpace.from_widths([1, 2, 1])
        P_star = np.zeros((1, 4, 1, 4))
        P_star[0, 0, 0, 1] = 1.0
        P_star[0, 1:3, 0, 3] = 1.0
        P_hat = P_star.copy()
        P_hat[0, 0, 0] = [0, 0, 1, 0]
        assert hellinger_diagnostic(space, P_hat, P_star, [[np.ones((4, 1))]], [1.0]) == 2.0

    def test_monte_carlo(self):
        rng = np.random.default_rng(2024)
        C, n = 2, 100_000
        space, _, P0, f0 = random_instance(rng, widths=[1, 2, 2, 1], num_actions=2)
        _, _, P1, f1 = random_instance(rng, widths=[1, 2, 2, 1], num_actions=2)
        P_star, f_star = np.stack([P0, P1]), np.stack([f0, f1])
        f_hat = rng.random(f_star.shape)
        _, _, Q0, _ = random_instance(rng, widths=[1, 2, 2, 1], num_actions=2)
        _, _, Q1, _ = random_instance(rng, widths=[1, 2, 2, 1], num_actions=2)
        P_hat = np.stack([Q0, Q1])
        w = np.array([0.3, 0.7])
        policies = [[rng.dirichlet(np.ones(2), size=space.num_states) for _ in range(2)] for _ in range(C)]

        exact_sq = squared_error_diagnostic(space, f_hat, f_star, policies, P_star, w)
        exact_hel = hellinger_diagnostic(space, P_hat, P_star, policies, w)
        for exact, g in ((exact_sq, (f_hat - f_star) ** 2), (exact_hel, hellinger_table(P_star, P_hat))):
            est, var = 0.0, 0.0
            for c in range(C):
                for pi in policies[c]:
                    x = rollout_sums(space, pi, P_star[c], g[c], n, rng)
                    est += w[c] * x.mean()
                    var += w[c] ** 2 * x.var() / n
            assert abs(est - exact) <= 3 * np.sqrt(var)
