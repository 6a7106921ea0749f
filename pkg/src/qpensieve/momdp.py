"""Multi-objective MDP domain types, linear scalarization and preference sampling.

Conventions used throughout the package:

* a Q table for one preference is an array of shape ``(n_states, n_actions, d)``;
  a full preference-indexed Q table stacks those along a leading axis,
  ``(n_preferences, n_states, n_actions, d)``;
* a policy table is ``(n_states, n_actions)`` per preference and
  ``(n_preferences, n_states, n_actions)`` for the whole grid.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import InvalidArgumentError
from .validation import (
    SIMPLEX_TOL,
    check_discount,
    check_positive,
    check_positive_int,
    check_simplex,
    check_stochastic,
)


def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Preference:
    """A point on the unit simplex weighting the ``d`` objectives."""

    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(check_simplex(self.weights)))

    @property
    def d(self):
        return self.weights.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)

    def __len__(self):
        return self.d

    def __eq__(self, other):
        if not isinstance(other, Preference):
            return NotImplemented
        return self.d == other.d and bool(np.max(np.abs(self.weights - other.weights)) <= SIMPLEX_TOL)

    def __hash__(self):
        return hash(tuple(np.round(self.weights, 9)))

    def __repr__(self):
        return f"Preference({np.array2string(self.weights, precision=4)})"

    @classmethod
    def basis(cls, d, i):
        w = np.zeros(d)
        w[i] = 1.0
        return cls(w)


def as_weights(pref):
    """Return the weight array of a :class:`Preference` or array-like."""
    if isinstance(pref, Preference):
        return pref.weights
    return check_simplex(pref)


def scalarize(pref, values):
    """Linear scalarization ``prefᵀ values`` along the last axis of ``values``.

    Parameters
    ----------
    pref : Preference or array-like of shape (d,)
    values : array-like of shape (..., d)

    Returns
    -------
    float or ndarray of shape (...)
    """
    w = as_weights(pref)
    v = np.asarray(values, dtype=float)
    if v.ndim == 0 or v.shape[-1] != w.shape[0]:
        raise InvalidArgumentError(
            f"preference has d={w.shape[0]} but values have trailing dimension "
            f"{v.shape[-1] if v.ndim else 'scalar'}"
        )
    out = v @ w
    return float(out) if np.ndim(out) == 0 else out


def uniform_simplex_sample(rng, d):
    """Draw a preference uniformly from the ``d``-simplex via sorted-uniform spacings."""
    d = check_positive_int(d, "d")
    cuts = np.sort(rng.random(d - 1))
    w = np.diff(np.concatenate(([0.0], cuts, [1.0])))
    return Preference(w)


@dataclass(frozen=True, eq=False)
class PreferenceGrid:
    """Ordered, duplicate-free list of preferences used for planning and evaluation."""

    preferences: tuple
    name: str = "custom"

    def __post_init__(self):
        prefs = tuple(p if isinstance(p, Preference) else Preference(p) for p in self.preferences)
        if not prefs:
            raise InvalidArgumentError("a preference grid needs at least one preference")
        d = prefs[0].d
        if any(p.d != d for p in prefs):
            raise InvalidArgumentError("all preferences in a grid must share the same dimension")
        arr = np.stack([p.weights for p in prefs])
        gaps = np.max(np.abs(arr[:, None, :] - arr[None, :, :]), axis=-1)
        np.fill_diagonal(gaps, np.inf)
        if np.any(gaps <= SIMPLEX_TOL):
            raise InvalidArgumentError("preference grid contains duplicates")
        object.__setattr__(self, "preferences", prefs)

    def __len__(self):
        return len(self.preferences)

    def __getitem__(self, i):
        return self.preferences[i]

    def __iter__(self):
        return iter(self.preferences)

    @property
    def d(self):
        return self.preferences[0].d

    def as_array(self):
        return np.stack([p.weights for p in self.preferences])

    @classmethod
    def from_array(cls, array, name="custom"):
        return cls(tuple(Preference(row) for row in np.asarray(array, dtype=float)), name=name)

    @classmethod
    def linear_2d(cls, n, low=None, name=None):
        """``n`` evenly spaced two-objective preferences ``[t, 1 - t]``.

        With ``low`` given the first weight runs from ``low`` to ``1 - low``;
        otherwise it runs over the closed interval [0, 1].
        """
        n = check_positive_int(n, "n")
        lo = 0.0 if low is None else float(low)
        t = np.array([0.5]) if n == 1 else np.linspace(lo, 1.0 - lo, n)
        return cls.from_array(np.column_stack([t, 1.0 - t]), name=name or f"linear{n}")

    @classmethod
    def uniform(cls, d, n, seed):
        rng = np.random.default_rng(seed)
        return cls(tuple(uniform_simplex_sample(rng, d) for _ in range(n)), name=f"uniform{n}-seed{seed}")


def default_metric_grid(d, seed=0):
    """Default evaluation preferences: 19 evenly spaced vectors for d=2, else 100 uniform draws."""
    if d == 2:
        return PreferenceGrid.linear_2d(19, low=0.05, name="grid19")
    return PreferenceGrid.uniform(d, 100, seed)


@dataclass(frozen=True, eq=False)
class TabularMOMDP:
    """Finite MDP with a ``d``-dimensional reward vector.

    Attributes
    ----------
    transition : ndarray of shape (n_states, n_actions, n_states)
    reward : ndarray of shape (n_states, n_actions, d)
    gamma : float in (0, 1)
    initial_dist : ndarray of shape (n_states,)
    r_max : float
        Bound on every reward component.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    initial_dist: np.ndarray = None
    r_max: float = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        R = np.array(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InvalidArgumentError(f"transition must be (S, A, S), got {P.shape}")
        if R.ndim == 2:
            R = R[..., None]
        if R.ndim != 3 or R.shape[:2] != P.shape[:2]:
            raise InvalidArgumentError(f"reward must be (S, A, d) matching transition, got {R.shape}")
        check_stochastic(P, axis=-1, name="transition")
        if not np.all(np.isfinite(R)):
            raise InvalidArgumentError("reward contains non-finite entries")
        gamma = check_discount(self.gamma)
        n_states = P.shape[0]
        init = np.full(n_states, 1.0 / n_states) if self.initial_dist is None else self.initial_dist
        init = check_stochastic(init, name="initial_dist")
        if init.shape != (n_states,):
            raise InvalidArgumentError(f"initial_dist must have shape ({n_states},)")
        r_max = float(np.max(np.abs(R))) if self.r_max is None else check_positive(self.r_max, "r_max")
        if np.max(np.abs(R)) > r_max + 1e-12:
            raise InvalidArgumentError("reward components exceed r_max")
        object.__setattr__(self, "transition", _frozen(P))
        object.__setattr__(self, "reward", _frozen(R))
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "initial_dist", _frozen(init))
        object.__setattr__(self, "r_max", r_max)

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    @property
    def d(self):
        return self.reward.shape[2]

    def scalarized_reward(self, pref):
        return scalarize(pref, self.reward)

    def to_dict(self):
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "d": self.d,
            "gamma": self.gamma,
            "r_max": self.r_max,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "initial_dist": self.initial_dist.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data):
        momdp = cls(
            transition=data["transition"],
            reward=data["reward"],
            gamma=data["gamma"],
            initial_dist=data.get("initial_dist"),
            r_max=data.get("r_max"),
            meta=dict(data.get("meta", {})),
        )
        for key in ("n_states", "n_actions", "d"):
            if key in data and data[key] != getattr(momdp, key):
                raise InvalidArgumentError(f"declared {key}={data[key]} disagrees with arrays")
        return momdp

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source):
        """Load from a JSON string or a path to a JSON file."""
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text()
        return cls.from_dict(json.loads(source))


def random_momdp(seed, n_states, n_actions, d, gamma):
    """Seeded random MOMDP for property testing.

    Transition rows come from a flat Dirichlet, rewards are uniform on
    ``[-1, 1]^d``, ``r_max = 1`` and the initial distribution is uniform.
    """
    n_states = check_positive_int(n_states, "n_states")
    n_actions = check_positive_int(n_actions, "n_actions")
    d = check_positive_int(d, "d")
    gamma = check_discount(gamma)
    rng = np.random.default_rng(seed)
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions, d))
    return TabularMOMDP(
        transition=transition,
        reward=reward,
        gamma=gamma,
        initial_dist=np.full(n_states, 1.0 / n_states),
        r_max=1.0,
        meta={"generator": "random_momdp", "seed": seed},
    )
