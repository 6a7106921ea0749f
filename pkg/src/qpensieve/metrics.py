"""Pareto filtering, hypervolume, utility and episodic dominance for vector returns."""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .exceptions import InvalidArgumentError
from .momdp import as_weights

# exact slicing is used while the number of recursive 2-D sweeps stays below this
_EXACT_BUDGET = 2_000_000


def _as_points(points, d=None):
    P = np.asarray(points, dtype=float)
    if P.size == 0:
        return P.reshape(0, d or 0)
    if P.ndim == 1:
        P = P[None, :]
    if P.ndim != 2:
        raise InvalidArgumentError(f"points must be an (n, d) array, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise InvalidArgumentError("points contain non-finite entries")
    if d is not None and P.shape[1] != d:
        raise InvalidArgumentError(f"points have dimension {P.shape[1]}, expected {d}")
    return P


def dominates(a, b):
    """``a`` is at least as good as ``b`` everywhere and strictly better somewhere."""
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(a >= b) and np.any(a > b))


def pareto_mask(points):
    """Boolean mask of the non-dominated rows of ``points`` (maximisation)."""
    P = _as_points(points)
    n = P.shape[0]
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        if not keep[i]:
            continue
        ge = np.all(P >= P[i], axis=1) & np.any(P > P[i], axis=1)
        if ge.any():
            keep[i] = False
            continue
        # rows that P[i] dominates can be dropped right away
        dominated = np.all(P[i] >= P, axis=1) & np.any(P[i] > P, axis=1)
        keep &= ~dominated
    return keep


def pareto_filter(points, return_indices=False):
    """Non-dominated subset of ``points`` in original order.

    Exact duplicates do not dominate each other, so all copies of a
    non-dominated point are kept.
    """
    P = _as_points(points)
    if P.shape[0] == 0:
        return (P, np.zeros(0, dtype=int)) if return_indices else P
    idx = np.flatnonzero(pareto_mask(P))
    return (P[idx], idx) if return_indices else P[idx]


def default_reference_point(points):
    """Componentwise minimum of the observed returns minus one."""
    P = _as_points(points)
    if P.shape[0] == 0:
        raise InvalidArgumentError("cannot derive a reference point from an empty set")
    return P.min(axis=0) - 1.0


def _contributing(points, ref):
    P = _as_points(points, len(ref))
    return P[np.all(P > ref, axis=1)]


def _hv2d(P, ref):
    order = np.argsort(-P[:, 0], kind="stable")
    hv, ceiling = 0.0, ref[1]
    for x, y in P[order]:
        if y > ceiling:
            hv += (x - ref[0]) * (y - ceiling)
            ceiling = y
    return hv


def _hv_slice(P, ref):
    """Exact hypervolume by slicing along the last axis down to 2-D sweeps."""
    d = P.shape[1]
    if P.shape[0] == 0:
        return 0.0
    if d == 1:
        return float(P[:, 0].max() - ref[0])
    if d == 2:
        return _hv2d(P, ref)
    order = np.argsort(-P[:, -1], kind="stable")
    P = P[order]
    hv = 0.0
    for i in range(P.shape[0]):
        top = P[i, -1]
        bottom = P[i + 1, -1] if i + 1 < P.shape[0] else ref[-1]
        if top > bottom:
            front = pareto_filter(P[: i + 1, :-1])
            hv += (top - bottom) * _hv_slice(front, ref[:-1])
    return hv


def hypervolume_inclusion_exclusion(points, ref):
    """Exact hypervolume by inclusion-exclusion over all subsets (exponential; small sets only)."""
    ref = np.asarray(ref, dtype=float)
    P = _contributing(points, ref)
    n = P.shape[0]
    if n > 22:
        raise InvalidArgumentError("inclusion-exclusion is limited to 22 contributing points")
    total = 0.0
    # depth-first over subsets, carrying the componentwise minimum of the chosen points
    stack = [(i, P[i], 1) for i in range(n)]
    while stack:
        i, corner, size = stack.pop()
        vol = float(np.prod(corner - ref))
        if vol <= 0.0:
            continue
        total += vol if size % 2 else -vol
        for j in range(i + 1, n):
            stack.append((j, np.minimum(corner, P[j]), size + 1))
    return total


def hypervolume_monte_carlo(points, ref, n_samples=1_000_000, rng=None, chunk=100_000):
    """Monte Carlo hypervolume over the bounding box; returns ``(estimate, standard_error)``."""
    ref = np.asarray(ref, dtype=float)
    P = _contributing(points, ref)
    if P.shape[0] == 0:
        return 0.0, 0.0
    rng = np.random.default_rng(rng)
    upper = P.max(axis=0)
    box = float(np.prod(upper - ref))
    hits, done = 0, 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        u = ref + rng.random((m, P.shape[1])) * (upper - ref)
        covered = np.zeros(m, dtype=bool)
        for p in P:
            covered |= np.all(u <= p, axis=1)
        hits += int(covered.sum())
        done += m
    frac = hits / n_samples
    return box * frac, box * np.sqrt(frac * (1.0 - frac) / n_samples)


def hypervolume_with_error(points, ref=None, n_samples=1_000_000, rng=0):
    """Hypervolume and its standard error (0 when computed exactly).

    Exact for d <= 2 always and for higher d while the slicing recursion is
    affordable; otherwise a Monte Carlo estimate with ``n_samples`` draws.
    """
    P = _as_points(points)
    if P.shape[0] == 0:
        return 0.0, 0.0
    ref = default_reference_point(P) if ref is None else np.asarray(ref, dtype=float)
    if ref.shape != (P.shape[1],):
        raise InvalidArgumentError(f"reference point has shape {ref.shape}, expected ({P.shape[1]},)")
    front = pareto_filter(_contributing(P, ref))
    n, d = front.shape
    if n == 0:
        return 0.0, 0.0
    if d <= 2 or float(n) ** (d - 2) <= _EXACT_BUDGET:
        return float(_hv_slice(front, ref)), 0.0
    return hypervolume_monte_carlo(front, ref, n_samples=n_samples, rng=rng)


def hypervolume(points, ref=None, **kwargs):
    """Measure of the region between ``ref`` and the union of boxes ``[ref, p]``.

    Points that do not strictly exceed ``ref`` in every component add
    nothing.  ``ref`` defaults to :func:`default_reference_point`.
    """
    return hypervolume_with_error(points, ref, **kwargs)[0]


def _returns_for(source, prefs):
    if callable(source):
        return np.array([np.asarray(source(p), dtype=float) for p in prefs])
    R = np.asarray(source, dtype=float)
    if R.ndim != 2 or R.shape[0] != len(prefs):
        raise InvalidArgumentError(f"expected one return vector per preference ({len(prefs)}), got shape {R.shape}")
    return R


def _weights(prefs):
    prefs = list(prefs)
    if not prefs:
        raise InvalidArgumentError("the preference sample set is empty")
    return prefs, np.array([as_weights(p) for p in prefs])


def scalarized_returns(returns, prefs):
    prefs, W = _weights(prefs)
    R = _returns_for(returns, prefs)
    if R.shape[1] != W.shape[1]:
        raise InvalidArgumentError("returns and preferences differ in dimension")
    return np.einsum("ij,ij->i", R, W)


def utility(returns, prefs):
    """Mean over the preference samples of ``pref · return(pref)``.

    ``returns`` is either a callable ``pref -> return vector`` or an array
    holding one (undiscounted) return vector per preference.
    """
    return float(np.mean(scalarized_returns(returns, prefs)))


def episodic_dominance(returns_1, returns_2, prefs):
    """Fraction of preferences where the first scalarized return is strictly larger."""
    s1 = scalarized_returns(returns_1, prefs)
    s2 = scalarized_returns(returns_2, prefs)
    return float(np.mean(s1 > s2))


@dataclass
class MetricReport:
    metric: str
    value: float
    preference_set_id: str
    seed: int
    std_error: float = None
    reference_point: list = None

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text
