"""Input validation helpers used by the public entry points."""

import numbers

import numpy as np

from .exceptions import InvalidArgumentError

SIMPLEX_TOL = 1e-9
RENORMALIZE_TOL = 1e-6


def check_rng(seed):
    """Turn ``seed`` into a :class:`numpy.random.Generator`.

    ``None`` gives fresh OS entropy, an int or ``SeedSequence`` seeds a new
    PCG64 generator and an existing ``Generator`` is passed through.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise InvalidArgumentError(f"cannot build a random generator from {seed!r}")


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise InvalidArgumentError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise InvalidArgumentError(f"{name} must be a positive finite real, got {value!r}")
    return float(value)


def check_discount(gamma):
    """Discount factors live in the open interval (0, 1)."""
    if not isinstance(gamma, numbers.Real) or not 0.0 < gamma < 1.0:
        raise InvalidArgumentError(f"gamma must lie in (0, 1), got {gamma!r}")
    return float(gamma)


def check_simplex(weights, name="weights"):
    """Validate a weight vector against the unit simplex and return a float copy.

    Small drift (sum off by at most ``RENORMALIZE_TOL``) is renormalized away,
    anything larger is rejected, as are negative components beyond
    ``SIMPLEX_TOL``.
    """
    w = np.array(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidArgumentError(f"{name} must be a non-empty 1-D vector, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    if np.any(w < -SIMPLEX_TOL):
        raise InvalidArgumentError(f"{name} has negative components: {w}")
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if abs(total - 1.0) > RENORMALIZE_TOL:
        raise InvalidArgumentError(f"{name} must sum to 1, got sum {total!r}")
    return w / total


def check_stochastic(array, axis=-1, name="array"):
    """Check that ``array`` holds probability vectors along ``axis``."""
    a = np.asarray(array, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    if np.any(a < 0):
        raise InvalidArgumentError(f"{name} has negative probabilities")
    sums = a.sum(axis=axis)
    if not np.allclose(sums, 1.0, rtol=0.0, atol=SIMPLEX_TOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise InvalidArgumentError(f"{name} rows must sum to 1 (worst deviation {worst:.3e})")
    return a


def check_matching_dim(a, b, what="vectors"):
    if a != b:
        raise InvalidArgumentError(f"dimension mismatch between {what}: {a} != {b}")
