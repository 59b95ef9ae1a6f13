"""Probability primitives and distributional diagnostics.

Everything here works in natural-log units and 64-bit floats. Inputs are
plain array-likes; validation raises :class:`InvalidArgumentError`.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._config import TOL, InvalidArgumentError


def as_logits(values):
    """Validate a logit vector (or an N x C batch of them) and return float64."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim not in (1, 2) or arr.shape[-1] < 2:
        raise InvalidArgumentError(f"logits need at least 2 classes, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("logits contain non-finite entries")
    return arr


def as_probs(values):
    """Validate a probability vector (or a batch of rows) and return float64."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim not in (1, 2) or arr.shape[-1] < 1:
        raise InvalidArgumentError(f"bad probability array shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("probabilities contain non-finite entries")
    if np.any(arr < -TOL.prob_entry_atol) or np.any(arr > 1 + TOL.prob_entry_atol):
        raise InvalidArgumentError("probability entries must lie in [0, 1]")
    if np.any(np.abs(arr.sum(axis=-1) - 1.0) > TOL.prob_sum_atol):
        raise InvalidArgumentError("probabilities must sum to 1")
    return arr


def _check_temperature(temperature):
    if not (np.isfinite(temperature) and temperature > 0):
        raise InvalidArgumentError(f"temperature must be positive and finite, got {temperature}")


@dataclass(frozen=True)
class SimilarityMatrix:
    """Square matrix of image-text cosine similarities plus the softmax temperature."""

    sims: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        sims = np.array(self.sims, dtype=np.float64)
        if sims.ndim != 2 or sims.shape[0] != sims.shape[1] or sims.shape[0] < 2:
            raise InvalidArgumentError(f"similarity matrix must be square with N >= 2, got {sims.shape}")
        if not np.all(np.isfinite(sims)):
            raise InvalidArgumentError("similarity matrix contains non-finite entries")
        if np.any(np.abs(sims) > 1 + TOL.sim_range_atol):
            raise InvalidArgumentError("cosine similarities must lie in [-1, 1]")
        _check_temperature(self.temperature)
        sims.setflags(write=False)
        object.__setattr__(self, "sims", sims)

    @property
    def n(self):
        return self.sims.shape[0]

    @property
    def logits(self):
        """Similarities divided by the temperature."""
        return self.sims / self.temperature


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(logits, temperature=1.0):
    """Temperature softmax along the last axis.

    Accepts a single logit vector or an N x C batch. Max-subtraction keeps
    it overflow-free for large logits.
    """
    _check_temperature(temperature)
    z = as_logits(logits)
    return _softmax(z / temperature)


def log_softmax(logits, temperature=1.0):
    _check_temperature(temperature)
    z = as_logits(logits) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def entropy(p):
    """Shannon entropy in nats along the last axis, with 0 log 0 = 0."""
    p = as_probs(p)
    safe = np.where(p > 0, p, 1.0)
    h = -np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=-1)
    # rounding can push a one-hot slightly below zero
    return np.maximum(h, 0.0) if np.ndim(h) else max(float(h), 0.0)


def sharpness(p, true_index=None, mode="true_index"):
    """Peakedness ratio of a distribution against the uniform expectation 1/C.

    ``mode="true_index"`` returns ``C * p[true_index]``; ``mode="max"``
    returns ``C * max(p)``. Works row-wise on a batch when ``true_index``
    is an array of indices.
    """
    p = as_probs(p)
    c = p.shape[-1]
    if mode == "max":
        return c * p.max(axis=-1)
    if mode != "true_index":
        raise InvalidArgumentError(f"unknown sharpness mode {mode!r}")
    if true_index is None:
        raise InvalidArgumentError("mode='true_index' needs true_index")
    idx = np.asarray(true_index)
    if np.any(idx < 0) or np.any(idx >= c):
        raise InvalidArgumentError(f"true_index out of range for {c} classes")
    if p.ndim == 1:
        return c * float(p[int(idx)])
    return c * p[np.arange(p.shape[0]), idx]


def similarity_gap(sims, row):
    """``sims[i, i] - max_{j != i} sims[i, j]``; negative when the true pair is not dominant."""
    s = sims.sims if isinstance(sims, SimilarityMatrix) else np.asarray(sims, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 2:
        raise InvalidArgumentError("need a square similarity matrix with N >= 2")
    if not 0 <= row < s.shape[0]:
        raise InvalidArgumentError(f"row {row} out of range")
    others = np.delete(s[row], row)
    return float(s[row, row] - others.max())


def _check_count(n):
    if n < 2:
        raise InvalidArgumentError(f"N must be >= 2, got {n}")


def entropy_upper_bound(n, delta_sim, temperature):
    """``ln N - N/(N-1) * exp(-2 delta/tau)``.

    A diagnostic only: the value is vacuous (even negative) for small gaps.
    """
    _check_count(n)
    _check_temperature(temperature)
    return math.log(n) - (n / (n - 1)) * math.exp(-2.0 * delta_sim / temperature)


def competitor_prob_bound(n, delta_sim, temperature):
    """Upper bound on a single competitor's probability given the similarity gap."""
    _check_count(n)
    _check_temperature(temperature)
    e = math.exp(-delta_sim / temperature)
    return e / (1.0 + (n - 1) * e)


def perplexity(true_class_probs):
    """``exp(-mean(log p))`` over the probabilities assigned to the true classes."""
    p = np.asarray(true_class_probs, dtype=np.float64).ravel()
    if p.size == 0:
        raise InvalidArgumentError("perplexity of an empty list")
    if np.any(~np.isfinite(p)) or np.any(p <= 0) or np.any(p > 1):
        raise InvalidArgumentError("true-class probabilities must lie in (0, 1]")
    return float(np.exp(-np.mean(np.log(p))))
