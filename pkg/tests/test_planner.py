import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qpensieve.exceptions import InvalidArgumentError, InvalidStateError, NonConvergenceError
from qpensieve.momdp import PreferenceGrid, TabularMOMDP, random_momdp
from qpensieve.planner import (
    PreferenceNeighborhood,
    QPensievePlanner,
    SnapshotSet,
    mo_soft_backup,
    naive_soft_policy_iteration,
    oracle_gap,
    pensieve_improve,
    q_pensieve_policy_iteration,
    scalarized_soft_vi,
    soft_policy_evaluation,
    value_from_q,
)


def self_loop():
    return TabularMOMDP(np.ones((1, 1, 1)), np.array([[[1.0, 0.0]]]), 0.5)


def random_policy(rng, S, A):
    p = rng.random((S, A)) + 0.05
    return p / p.sum(axis=1, keepdims=True)


def brute_force_backup(m, policy, q, alpha):
    S, A, d = m.reward.shape
    out = np.zeros_like(m.reward)
    for s in range(S):
        for a in range(A):
            acc = np.zeros(d)
            for s2 in range(S):
                for a2 in range(A):
                    pi = policy[s2, a2]
                    ent = pi * np.log(pi) if pi > 0 else 0.0
                    acc += m.transition[s, a, s2] * (pi * q[s2, a2] - alpha * ent)
            out[s, a] = m.reward[s, a] + m.gamma * acc
    return out


class TestBackup:
    def test_self_loop_fixed_point(self):
        res = soft_policy_evaluation(self_loop(), np.ones((1, 1)), alpha=0.3, tol=1e-10)
        assert np.allclose(res.q[0, 0], [2.0, 0.0], atol=1e-9)

    def test_zero_discount_like(self):
        # smallest admissible discount: the continuation is scaled away
        m = random_momdp(1, 3, 2, 2, 1e-300)
        q = np.random.default_rng(0).normal(size=m.reward.shape)
        assert np.allclose(mo_soft_backup(m, np.full((3, 2), 0.5), q, 0.7), m.reward)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(2)
        m = random_momdp(4, 4, 3, 2, 0.9)
        pol = random_policy(rng, 4, 3)
        pol[1, 0] = 0.0
        pol[1] /= pol[1].sum()
        q = rng.normal(size=m.reward.shape)
        assert np.allclose(mo_soft_backup(m, pol, q, 0.4), brute_force_backup(m, pol, q, 0.4), atol=1e-13)

    def test_linear_solve_oracle(self):
        m = random_momdp(9, 5, 3, 3, 0.9)
        pol = np.full((5, 3), 1 / 3)
        alpha = 0.2
        S, A = 5, 3
        P_pi = np.einsum("sat,tb->satb", m.transition, pol).reshape(S * A, S * A)
        r_ent = m.reward.reshape(S * A, -1) + m.gamma * alpha * np.log(3) * np.ones((S * A, 3))
        exact = np.linalg.solve(np.eye(S * A) - m.gamma * P_pi, r_ent).reshape(S, A, 3)
        res = soft_policy_evaluation(m, pol, alpha, tol=1e-12)
        assert np.max(np.abs(res.q - exact)) <= 1e-10

    @given(st.integers(0, 5000), st.sampled_from([0.5, 0.9, 0.99]), st.floats(0.01, 2.0))
    def test_contraction(self, seed, gamma, alpha):
        rng = np.random.default_rng(seed)
        m = random_momdp(seed, 4, 3, 2, gamma)
        pol = random_policy(rng, 4, 3)
        q1, q2 = rng.normal(size=(2, *m.reward.shape)) * 5
        lhs = np.max(np.abs(mo_soft_backup(m, pol, q1, alpha) - mo_soft_backup(m, pol, q2, alpha)))
        assert lhs <= gamma * np.max(np.abs(q1 - q2)) + 1e-12

    @given(st.integers(0, 5000), st.sampled_from([0.8, 0.95]))
    def test_residual_ratios(self, seed, gamma):
        m = random_momdp(seed, 5, 3, 2, gamma)
        pol = random_policy(np.random.default_rng(seed), 5, 3)
        r = soft_policy_evaluation(m, pol, 0.3, tol=1e-9).residuals
        assert all(b <= gamma * a + 1e-12 for a, b in zip(r, r[1:]))

    def test_non_convergence(self):
        m = random_momdp(0, 3, 2, 2, 0.99)
        with pytest.raises(NonConvergenceError) as err:
            soft_policy_evaluation(m, np.full((3, 2), 0.5), 0.1, tol=1e-12, max_iter=5)
        assert err.value.residual > 0


class TestValue:
    def test_deterministic_policy(self):
        q = np.arange(12.0).reshape(2, 3, 2)
        pol = np.array([[0, 1, 0], [0, 0, 1.0]])
        assert np.allclose(value_from_q(q, pol, 0.5), [q[0, 1], q[1, 2]])

    def test_uniform_two_actions(self):
        q = np.full((1, 2, 2), 3.0)
        assert np.allclose(value_from_q(q, np.full((1, 2), 0.5), 0.7), 3.0 + 0.7 * np.log(2))

    def test_brute_force(self):
        rng = np.random.default_rng(8)
        q = rng.normal(size=(4, 3, 2))
        pol = random_policy(rng, 4, 3)
        expected = np.array([sum(pol[s, a] * (q[s, a] - 0.3 * np.log(pol[s, a])) for a in range(3)) for s in range(4)])
        assert np.allclose(value_from_q(q, pol, 0.3), expected, atol=1e-14)


class TestImprove:
    def test_two_point_softmax(self):
        q = np.array([[[[1.0, 0.0], [0.0, 0.0]]]])  # (P=1, S=1, A=2, d=2)
        pol = pensieve_improve([1.0, 0.0], [0], [q], alpha=1.0)
        assert np.allclose(pol, [[np.e / (1 + np.e), 1 / (1 + np.e)]])
        assert np.allclose(pol, [[0.7311, 0.2689]], atol=1e-4)

    def test_envelope_over_snapshots(self):
        a = np.array([[[[1.0, 1.0], [0.0, 0.0]]]])
        b = np.array([[[[0.0, 0.0], [2.0, 2.0]]]])
        pol, arg = pensieve_improve([0.5, 0.5], [0], [a, b], alpha=1.0, return_argmax=True)
        e = np.array([1.0, 2.0])
        assert np.allclose(pol[0], np.exp(e) / np.exp(e).sum())
        assert arg[0, 0].tolist() == [0, 0] and arg[0, 1].tolist() == [1, 0]

    def test_envelope_brute_force(self):
        rng = np.random.default_rng(3)
        snaps = [rng.normal(size=(4, 3, 2, 2)) for _ in range(3)]
        w, nbr, alpha = np.array([0.3, 0.7]), [2, 0, 3], 0.4
        pol = pensieve_improve(w, nbr, snaps, alpha)
        for s in range(3):
            e = [max(w @ q[j, s, a] for q in snaps for j in nbr) for a in range(2)]
            ref = np.exp(np.array(e) / alpha)
            assert np.allclose(pol[s], ref / ref.sum(), atol=1e-14)

    def test_high_temperature(self):
        q = np.random.default_rng(0).normal(size=(1, 2, 4, 2))
        assert np.allclose(pensieve_improve([0.5, 0.5], [0], [q], alpha=1e6), 0.25, atol=1e-5)

    def test_empty_snapshots_rejected(self):
        with pytest.raises(InvalidStateError):
            pensieve_improve([0.5, 0.5], [0], [], alpha=1.0)

    def test_neighborhood_must_contain_self(self):
        with pytest.raises(InvalidArgumentError):
            PreferenceNeighborhood([(1,), (1, 0)])
        nb = PreferenceNeighborhood.nearest(PreferenceGrid.linear_2d(5), 3)
        assert all(nb[i][0] == i for i in range(5))
        assert nb[2] == (2, 1, 3)
        assert nb[0] == (0, 1, 2)

    def test_snapshot_set_always_has_current(self):
        s = SnapshotSet(3)
        with pytest.raises(InvalidStateError):
            s.candidates(None)
        for k in range(5):
            s.push(np.full((1, 1, 1, 1), k), k)
        assert s.iterations == [3, 4]
        cands = s.candidates(np.full((1, 1, 1, 1), 9.0))
        assert [float(c.ravel()[0]) for c in cands] == [3.0, 4.0, 9.0]
        assert len(SnapshotSet(1).candidates(np.zeros(1))) == 1


class TestIteration:
    def test_degenerate_identity(self):
        m = random_momdp(21, 4, 3, 2, 0.9)
        grid = PreferenceGrid.linear_2d(5)
        a = q_pensieve_policy_iteration(m, grid, w_size=1, snapshot_capacity=1, alpha=0.2)
        b = naive_soft_policy_iteration(m, grid, alpha=0.2)
        assert a.diagnostics.n_iter == b.diagnostics.n_iter
        assert np.max(np.abs(a.q - b.q)) <= 1e-12
        assert np.max(np.abs(a.policy - b.policy)) <= 1e-12

    @given(st.integers(0, 10_000), st.sampled_from([1, 2, 3, 5]), st.sampled_from([1, 2, 4]),
           st.sampled_from([0.05, 0.3, 1.0]))
    def test_oracle_and_monotonicity(self, seed, w_size, cap, alpha):
        m = random_momdp(seed, 4, 3, 2, 0.9)
        res = q_pensieve_policy_iteration(m, PreferenceGrid.linear_2d(5), w_size=w_size, snapshot_capacity=cap,
                                          alpha=alpha, tol=1e-7)
        assert min(res.diagnostics.min_improvement_margin) >= -1e-8
        assert np.max(oracle_gap(m, res, alpha)) <= 1e-6
        assert np.allclose(res.policy.sum(-1), 1.0, atol=1e-9)

    def test_non_convergence_carries_diagnostics(self):
        m = random_momdp(0, 4, 3, 2, 0.95)
        with pytest.raises(NonConvergenceError) as err:
            q_pensieve_policy_iteration(m, PreferenceGrid.linear_2d(3), alpha=0.01, tol=1e-14, max_iter=1)
        assert err.value.diagnostics.n_iter == 1

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            q_pensieve_policy_iteration(random_momdp(0, 3, 2, 3, 0.9), PreferenceGrid.linear_2d(3))


class TestSoftVI:
    def test_self_loop(self):
        for alpha in (0.01, 1.0, 5.0):
            assert np.allclose(scalarized_soft_vi(self_loop(), [1.0, 0.0], alpha), 2.0, atol=1e-9)

    def test_bandit_soft_value(self):
        # a one-state bandit with discount ~0: Q is the reward and V* = log(e + 1)
        m = TabularMOMDP(np.ones((1, 2, 1)), np.array([[[1.0, 0.0], [0.0, 0.0]]]), 1e-300)
        q = scalarized_soft_vi(m, [1.0, 0.0], 1.0)
        assert np.log(np.exp(q).sum()) == pytest.approx(np.log(np.e + 1), abs=1e-12)
        assert np.log(np.e + 1) == pytest.approx(1.3133, abs=1e-4)


class TestEstimator:
    def test_fit_predict(self):
        m = random_momdp(7, 4, 3, 2, 0.9)
        est = QPensievePlanner(preferences=PreferenceGrid.linear_2d(5)).fit(m)
        X = np.array([[0, 0], [3, 4]])
        proba = est.predict_proba(X)
        assert proba.shape == (2, 3) and np.allclose(proba.sum(1), 1)
        assert est.predict(X).tolist() == proba.argmax(1).tolist()
        assert np.max(est.oracle_gap(m)) <= 1e-6
        assert est.get_params()["w_size"] == 3

    def test_unfitted(self):
        with pytest.raises(InvalidStateError):
            QPensievePlanner().predict([[0, 0]])

    def test_bad_X(self):
        est = QPensievePlanner().fit(random_momdp(0, 3, 2, 2, 0.9))
        with pytest.raises(InvalidArgumentError):
            est.predict([[5, 0]])
        with pytest.raises(InvalidArgumentError):
            est.predict([[0.5, 0.0]])

    def test_serialization(self, tmp_path):
        est = QPensievePlanner().fit(random_momdp(1, 3, 2, 2, 0.9))
        est.result_.to_json(tmp_path / "r.json")
        csv_text = est.diagnostics_.to_csv(tmp_path / "d.csv")
        assert csv_text.splitlines()[0] == "iteration,max_delta,min_improvement_margin"
        assert len(csv_text.splitlines()) == est.diagnostics_.n_iter + 1
