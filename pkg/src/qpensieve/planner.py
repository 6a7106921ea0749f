"""Exact tabular soft policy iteration with the Q-Pensieve improvement step.

The planner alternates soft policy evaluation of every grid preference with
an improvement step whose energy is the envelope

    e(s, a) = max over λ' in W(λ), Q' in snapshots of  λᵀ Q'(s, a; λ')

followed by a Boltzmann policy at temperature ``alpha``.  With
``w_size=1`` and ``snapshot_capacity=1`` the envelope collapses to the
current ``λᵀQ`` and the iteration is plain multi-objective soft policy
iteration (:func:`naive_soft_policy_iteration`).
"""

import csv
import io
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax, xlogy
from sklearn.base import BaseEstimator

from .exceptions import InvalidArgumentError, InvalidStateError, NonConvergenceError
from .momdp import Preference, PreferenceGrid, TabularMOMDP, as_weights
from .validation import check_positive, check_positive_int, check_stochastic


def value_from_q(q, policy, alpha):
    """Soft state value ``V(s) = Σ_a π(a|s) [Q(s, a) - α log π(a|s) 1_d]``.

    ``q`` is ``(S, A, d)`` (or ``(S, A)`` for a scalar table) and ``policy``
    is ``(S, A)``.  Zero-probability actions contribute nothing.
    """
    q = np.asarray(q, dtype=float)
    policy = np.asarray(policy, dtype=float)
    if q.shape[:2] != policy.shape:
        raise InvalidArgumentError(f"q {q.shape} and policy {policy.shape} disagree")
    entropy_bonus = -alpha * xlogy(policy, policy).sum(axis=1)
    if q.ndim == 2:
        return (policy * q).sum(axis=1) + entropy_bonus
    return np.einsum("sa,sad->sd", policy, q) + entropy_bonus[:, None]


def mo_soft_backup(momdp, policy, q, alpha):
    """One multi-objective soft Bellman backup for a single preference slice.

    Returns ``r(s, a) + γ Σ_{s'} P(s'|s, a) V(s')`` with ``V`` from
    :func:`value_from_q`.
    """
    check_positive(alpha, "alpha")
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise InvalidArgumentError("q contains non-finite entries")
    v_next = value_from_q(q, policy, alpha)
    return momdp.reward + momdp.gamma * np.einsum("sat,td->sad", momdp.transition, v_next)


@dataclass
class EvaluationResult:
    q: np.ndarray
    n_iter: int
    residuals: list


def soft_policy_evaluation(momdp, policy, alpha, tol=1e-8, max_iter=100_000):
    """Iterate :func:`mo_soft_backup` from ``Q = 0`` until the sup-norm change drops below ``tol``.

    The sweep is carried in increment form: the backup is affine in ``Q``, so
    ``T(Q + δ) - (Q + δ) = γ P^π δ`` and each new increment is obtained by
    pushing the previous one through the transition/policy average.  In
    exact arithmetic this is the same sequence of iterates as applying the
    backup repeatedly, but the recorded residuals never suffer from the
    cancellation of subtracting two nearly equal tables.

    Returns
    -------
    EvaluationResult
        ``q`` is the final table, ``residuals[i] = ||Q_{i+1} - Q_i||_inf``.
    """
    check_positive(tol, "tol")
    max_iter = check_positive_int(max_iter, "max_iter")
    policy = np.asarray(policy, dtype=float)
    P, gamma = momdp.transition, momdp.gamma
    q = np.zeros_like(momdp.reward)
    delta = mo_soft_backup(momdp, policy, q, alpha)
    residuals = []
    for i in range(1, max_iter + 1):
        res = float(np.max(np.abs(delta)))
        residuals.append(res)
        q = q + delta
        if res < tol:
            return EvaluationResult(q, i, residuals)
        delta = gamma * np.einsum("sat,td->sad", P, np.einsum("sa,sad->sd", policy, delta))
    raise NonConvergenceError(
        f"policy evaluation did not reach tol={tol} in {max_iter} sweeps", residual=residuals[-1]
    )


def scalarized_soft_vi(momdp, pref, alpha, tol=1e-10, max_iter=100_000):
    """Soft value iteration on the ``λ``-scalarized MDP.

    Because ``λᵀ(α log π 1_d) = α log π`` on the simplex, this is an ordinary
    entropy-regularized MDP with reward ``λᵀr`` and temperature ``alpha``.

    Returns
    -------
    ndarray of shape (n_states, n_actions)
        The optimal soft Q table.
    """
    alpha = check_positive(alpha, "alpha")
    check_positive(tol, "tol")
    r = momdp.scalarized_reward(pref)
    q = np.zeros_like(r)
    res = np.inf
    for _ in range(max_iter):
        v = alpha * logsumexp(q / alpha, axis=1)
        q_new = r + momdp.gamma * momdp.transition @ v
        res = float(np.max(np.abs(q_new - q)))
        q = q_new
        if res < tol:
            return q
    raise NonConvergenceError(f"soft value iteration did not reach tol={tol}", residual=res)


class PreferenceNeighborhood:
    """Per-preference index sets ``W(λ)``; each set contains its own preference first."""

    def __init__(self, neighbors):
        sets = []
        for i, idx in enumerate(neighbors):
            idx = tuple(int(j) for j in idx)
            if i not in idx:
                raise InvalidArgumentError(f"neighborhood of preference {i} must contain itself")
            sets.append(idx)
        if not sets:
            raise InvalidArgumentError("empty neighborhood")
        self._sets = tuple(sets)

    def __getitem__(self, i):
        return self._sets[i]

    def __len__(self):
        return len(self._sets)

    @classmethod
    def nearest(cls, grid, w_size):
        """``λ`` plus its ``w_size - 1`` nearest grid neighbours (Euclidean, ties by index)."""
        w_size = check_positive_int(w_size, "w_size")
        arr = grid.as_array() if isinstance(grid, PreferenceGrid) else np.asarray(grid, dtype=float)
        n = arr.shape[0]
        k = min(w_size, n)
        dist = np.linalg.norm(arr[:, None, :] - arr[None, :, :], axis=-1)
        neighbors = []
        for i in range(n):
            others = [j for j in np.lexsort((np.arange(n), dist[i])) if j != i]
            neighbors.append((i, *others[: k - 1]))
        return cls(neighbors)


class SnapshotSet:
    """FIFO store of past Q tables, ordered by iteration index.

    ``capacity`` counts the current table, which :meth:`candidates` always
    injects at query time; at most ``capacity - 1`` past tables are kept.
    """

    def __init__(self, capacity):
        self.capacity = check_positive_int(capacity, "capacity")
        self._past = deque(maxlen=self.capacity - 1) if self.capacity > 1 else None

    def push(self, q, iteration):
        if self._past is not None:
            q = np.array(q, dtype=float)
            q.setflags(write=False)
            self._past.append((q, int(iteration)))

    def candidates(self, current_q):
        """Snapshots for the improvement step: stored tables (oldest first), then ``current_q``."""
        if current_q is None:
            raise InvalidStateError("the current Q table must always be part of the snapshot set")
        past = [] if self._past is None else [q for q, _ in self._past]
        return past + [np.asarray(current_q, dtype=float)]

    @property
    def iterations(self):
        return [] if self._past is None else [k for _, k in self._past]

    def __len__(self):
        return 0 if self._past is None else len(self._past)


def pensieve_improve(pref, neighborhood, snapshots, alpha, return_argmax=False):
    """Q-Pensieve policy improvement for one preference.

    Parameters
    ----------
    pref : Preference or array-like of shape (d,)
        The preference being improved; it scalarizes every candidate.
    neighborhood : sequence of int
        Indices ``W(λ)`` into the leading (preference) axis of each snapshot.
    snapshots : sequence of ndarray of shape (n_prefs, S, A, d)
        Candidate Q tables, which must include the current one.
    alpha : float
        Temperature.
    return_argmax : bool
        Also return, per ``(s, a)``, the winning ``(snapshot, neighbor)`` pair.

    Returns
    -------
    policy : ndarray of shape (S, A)
    argmax : ndarray of shape (S, A, 2), only if ``return_argmax``
    """
    alpha = check_positive(alpha, "alpha")
    if len(snapshots) == 0:
        raise InvalidStateError("pensieve_improve needs at least one Q snapshot")
    w = as_weights(pref)
    idx = np.asarray(neighborhood, dtype=int)
    if idx.size == 0:
        raise InvalidArgumentError("neighborhood must be non-empty")
    stack = np.stack([np.asarray(q, dtype=float)[idx] for q in snapshots])  # (J, W, S, A, d)
    scores = stack @ w  # (J, W, S, A)
    flat = scores.reshape(-1, *scores.shape[2:])
    # argmax returns the first maximal entry, i.e. earliest snapshot then earliest neighbour
    winner = np.argmax(flat, axis=0)
    energy = np.take_along_axis(flat, winner[None], axis=0)[0]
    policy = softmax(energy / alpha, axis=1)
    if not return_argmax:
        return policy
    j, k = np.unravel_index(winner, scores.shape[:2])
    return policy, np.stack([j, idx[k]], axis=-1)


@dataclass
class PlannerDiagnostics:
    """Per-iteration convergence and monotonicity record of a planner run."""

    max_delta: list = field(default_factory=list)
    min_improvement_margin: list = field(default_factory=list)
    eval_sweeps: list = field(default_factory=list)
    eval_residuals: list = field(default_factory=list)
    envelope_argmax: list = field(default_factory=list)

    @property
    def n_iter(self):
        return len(self.max_delta)

    def to_rows(self):
        return [
            {"iteration": i + 1, "max_delta": d, "min_improvement_margin": m}
            for i, (d, m) in enumerate(zip(self.max_delta, self.min_improvement_margin))
        ]

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.DictWriter(
            buf, fieldnames=["iteration", "max_delta", "min_improvement_margin"], lineterminator="\n"
        )
        writer.writeheader()
        for row in self.to_rows():
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dict(self):
        return {
            "n_iter": self.n_iter,
            "max_delta": self.max_delta,
            "min_improvement_margin": self.min_improvement_margin,
            "eval_sweeps": self.eval_sweeps,
        }


@dataclass
class PlannerResult:
    policy: np.ndarray  # (P, S, A)
    q: np.ndarray  # (P, S, A, d)
    grid: PreferenceGrid
    diagnostics: PlannerDiagnostics

    def scalarized_q(self):
        return np.einsum("psad,pd->psa", self.q, self.grid.as_array())

    def to_dict(self):
        return {
            "preferences": self.grid.as_array().tolist(),
            "policy": self.policy.tolist(),
            "q": self.q.tolist(),
            "diagnostics": self.diagnostics.to_dict(),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict())
        if path is not None:
            Path(path).write_text(text)
        return text


def _evaluate_all(momdp, policy, alpha, tol, max_eval_iter, diagnostics):
    tables, sweeps, residuals = [], [], []
    for pi in policy:
        res = soft_policy_evaluation(momdp, pi, alpha, tol=tol, max_iter=max_eval_iter)
        tables.append(res.q)
        sweeps.append(res.n_iter)
        residuals.append(res.residuals)
    diagnostics.eval_sweeps.append(sweeps)
    diagnostics.eval_residuals.append(residuals)
    return np.stack(tables)


def _as_grid(grid):
    if isinstance(grid, PreferenceGrid):
        return grid
    return PreferenceGrid.from_array(grid)


def q_pensieve_policy_iteration(
    momdp,
    grid,
    w_size=1,
    snapshot_capacity=1,
    alpha=0.1,
    tol=1e-6,
    max_iter=200,
    eval_tol=1e-8,
    max_eval_iter=100_000,
    initial_policy=None,
):
    """Soft policy iteration over a preference grid with the Q-Pensieve improvement step.

    Starting from the uniform policy, every iteration evaluates all grid
    preferences, improves each one against the envelope over its
    neighbourhood ``W(λ)`` and the snapshot FIFO, and stops once
    ``max |Δ λᵀQ|`` over ``(s, a, λ)`` falls below ``tol``.

    Raises
    ------
    NonConvergenceError
        With the diagnostics collected so far attached.
    """
    grid = _as_grid(grid)
    if grid.d != momdp.d:
        raise InvalidArgumentError(f"grid has d={grid.d} but MOMDP has d={momdp.d}")
    alpha = check_positive(alpha, "alpha")
    check_positive(tol, "tol")
    max_iter = check_positive_int(max_iter, "max_iter")
    neighborhood = PreferenceNeighborhood.nearest(grid, w_size)
    snapshots = SnapshotSet(snapshot_capacity)
    weights = grid.as_array()
    diagnostics = PlannerDiagnostics()

    n_pref = len(grid)
    shape = (n_pref, momdp.n_states, momdp.n_actions)
    if initial_policy is None:
        policy = np.full(shape, 1.0 / momdp.n_actions)
    else:
        policy = check_stochastic(np.broadcast_to(initial_policy, shape), name="initial_policy").copy()
    q = _evaluate_all(momdp, policy, alpha, eval_tol, max_eval_iter, diagnostics)

    for k in range(max_iter):
        candidates = snapshots.candidates(q)
        new_policy = np.empty_like(policy)
        winners = []
        for i, pref in enumerate(grid):
            new_policy[i], arg = pensieve_improve(pref, neighborhood[i], candidates, alpha, return_argmax=True)
            winners.append(arg)
        diagnostics.envelope_argmax.append(np.stack(winners))
        snapshots.push(q, k)
        new_q = _evaluate_all(momdp, new_policy, alpha, eval_tol, max_eval_iter, diagnostics)

        change = np.einsum("psad,pd->psa", new_q, weights) - np.einsum("psad,pd->psa", q, weights)
        diagnostics.max_delta.append(float(np.max(np.abs(change))))
        diagnostics.min_improvement_margin.append(float(np.min(change)))
        policy, q = new_policy, new_q
        if diagnostics.max_delta[-1] < tol:
            return PlannerResult(policy, q, grid, diagnostics)
    raise NonConvergenceError(
        f"policy iteration did not converge in {max_iter} iterations",
        residual=diagnostics.max_delta[-1],
        diagnostics=diagnostics,
    )


def naive_soft_policy_iteration(momdp, grid, alpha=0.1, tol=1e-6, max_iter=200, eval_tol=1e-8, max_eval_iter=100_000):
    """Per-preference soft policy iteration: ``π_{k+1}(·|s; λ) ∝ exp(λᵀQ^{π_k}(s, ·; λ) / α)``.

    This is the baseline without any knowledge sharing between preferences
    or iterations, written independently of :func:`pensieve_improve`.
    """
    grid = _as_grid(grid)
    weights = grid.as_array()
    diagnostics = PlannerDiagnostics()
    policy = np.full((len(grid), momdp.n_states, momdp.n_actions), 1.0 / momdp.n_actions)
    q = _evaluate_all(momdp, policy, alpha, eval_tol, max_eval_iter, diagnostics)
    for _ in range(max_iter):
        scal = np.einsum("psad,pd->psa", q, weights)
        logits = scal / alpha
        logits = logits - logits.max(axis=2, keepdims=True)
        new_policy = np.exp(logits)
        new_policy /= new_policy.sum(axis=2, keepdims=True)
        new_q = _evaluate_all(momdp, new_policy, alpha, eval_tol, max_eval_iter, diagnostics)
        change = np.einsum("psad,pd->psa", new_q, weights) - scal
        diagnostics.max_delta.append(float(np.max(np.abs(change))))
        diagnostics.min_improvement_margin.append(float(np.min(change)))
        policy, q = new_policy, new_q
        if diagnostics.max_delta[-1] < tol:
            return PlannerResult(policy, q, grid, diagnostics)
    raise NonConvergenceError("naive policy iteration did not converge", diagnostics.max_delta[-1], diagnostics)


def oracle_gap(momdp, result, alpha, tol=1e-10):
    """Per-preference ``max_{s,a} |λᵀQ_final - Q*_oracle|`` against :func:`scalarized_soft_vi`."""
    gaps = []
    scal = result.scalarized_q()
    for i, pref in enumerate(result.grid):
        q_star = scalarized_soft_vi(momdp, pref, alpha, tol=tol)
        gaps.append(float(np.max(np.abs(scal[i] - q_star))))
    return np.array(gaps)


class QPensievePlanner(BaseEstimator):
    """Estimator wrapper around :func:`q_pensieve_policy_iteration`.

    Parameters
    ----------
    preferences : PreferenceGrid, array-like of shape (n_prefs, d) or None
        Planning grid.  ``None`` uses 5 evenly spaced preferences for d=2 and
        the 19-vector evaluation grid's construction otherwise.
    w_size : int, default=3
    snapshot_capacity : int, default=4
    alpha : float, default=0.1
    tol : float, default=1e-6
    eval_tol : float, default=1e-8
    max_iter : int, default=200

    Attributes
    ----------
    policy_ : ndarray of shape (n_prefs, n_states, n_actions)
    q_ : ndarray of shape (n_prefs, n_states, n_actions, d)
    grid_ : PreferenceGrid
    diagnostics_ : PlannerDiagnostics
    """

    def __init__(self, preferences=None, w_size=3, snapshot_capacity=4, alpha=0.1, tol=1e-6, eval_tol=1e-8, max_iter=200):
        self.preferences = preferences
        self.w_size = w_size
        self.snapshot_capacity = snapshot_capacity
        self.alpha = alpha
        self.tol = tol
        self.eval_tol = eval_tol
        self.max_iter = max_iter

    def fit(self, momdp, y=None):
        if not isinstance(momdp, TabularMOMDP):
            raise InvalidArgumentError("QPensievePlanner.fit expects a TabularMOMDP")
        if self.preferences is None:
            grid = PreferenceGrid.linear_2d(5) if momdp.d == 2 else PreferenceGrid.uniform(momdp.d, 5, seed=0)
        else:
            grid = _as_grid(self.preferences)
        result = q_pensieve_policy_iteration(
            momdp,
            grid,
            w_size=self.w_size,
            snapshot_capacity=self.snapshot_capacity,
            alpha=self.alpha,
            tol=self.tol,
            max_iter=self.max_iter,
            eval_tol=self.eval_tol,
        )
        self.result_ = result
        self.policy_ = result.policy
        self.q_ = result.q
        self.grid_ = result.grid
        self.diagnostics_ = result.diagnostics
        self.n_states_, self.n_actions_ = momdp.n_states, momdp.n_actions
        return self

    def _check_X(self, X):
        if not hasattr(self, "policy_"):
            raise InvalidStateError("QPensievePlanner is not fitted yet")
        X = np.atleast_2d(np.asarray(X))
        if X.shape[1] != 2 or not np.issubdtype(X.dtype, np.integer):
            raise InvalidArgumentError("X must be integer pairs (state, preference index)")
        if np.any(X[:, 0] < 0) or np.any(X[:, 0] >= self.n_states_):
            raise InvalidArgumentError("state index out of range")
        if np.any(X[:, 1] < 0) or np.any(X[:, 1] >= len(self.grid_)):
            raise InvalidArgumentError("preference index out of range")
        return X

    def predict_proba(self, X):
        """Action distributions for rows ``(state, preference index)``."""
        X = self._check_X(X)
        return self.policy_[X[:, 1], X[:, 0]]

    def predict(self, X):
        """Most probable action for rows ``(state, preference index)``."""
        return np.argmax(self.predict_proba(X), axis=1)

    def scalarized_q(self, pref_index):
        return self.q_[pref_index] @ self.grid_[pref_index].weights

    def oracle_gap(self, momdp):
        return oracle_gap(momdp, self.result_, self.alpha)
