"""Confidence misalignment penalty, base losses and their logit gradients.

The penalty for one sample with true class ``y`` and softmax row ``p`` is::

    ratio      p[y] / (D + eps)
    log_ratio  -log(p[y] / (D + eps) + eps)

where ``D`` is the total mass of classes strictly more probable than ``y``.
Samples whose true class is modal (ties included) have an empty competitor
set and contribute exactly zero.
"""

from dataclasses import dataclass, field

import numpy as np

from ._config import TOL, InvalidArgumentError, NumericFailureError
from .prob_core import SimilarityMatrix, _softmax, as_logits, as_probs

BASES = ("cross_entropy", "row_contrastive")
VARIANTS = ("ratio", "log_ratio")


@dataclass(frozen=True)
class CmpConfig:
    lam: float = 0.01
    epsilon: float = TOL.cmp_epsilon
    variant: str = "ratio"

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise InvalidArgumentError(f"lambda must be >= 0, got {self.lam}")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise InvalidArgumentError(f"epsilon must be > 0, got {self.epsilon}")
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass(frozen=True)
class CompetitorSet:
    indices: frozenset
    mass: float


@dataclass(frozen=True)
class LossBreakdown:
    base_loss: float
    cmp_loss: float
    total: float
    per_sample_cmp: np.ndarray = field(repr=False)


def _check_labels(labels, n, c):
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n:
        raise InvalidArgumentError(f"expected {n} labels, got shape {y.shape}")
    if n == 0:
        raise InvalidArgumentError("empty batch")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise InvalidArgumentError("labels must be integers")
        y = y.astype(np.int64)
    if np.any(y < 0) or np.any(y >= c):
        raise InvalidArgumentError(f"label out of range for {c} classes")
    return y.astype(np.int64)


def _check_index(index, c):
    if not 0 <= index < c:
        raise InvalidArgumentError(f"class index {index} out of range for {c} classes")
    return int(index)


def cross_entropy(p, true_class):
    """``-ln p[true_class]`` with ``p`` clamped to ``[1e-12, 1]``."""
    p = as_probs(p)
    y = _check_index(true_class, p.shape[-1])
    return float(-np.log(np.clip(p[y], TOL.ce_clamp_floor, 1.0)))


def _row_col_terms(z, labels):
    """Row and column contrastive terms for an N x N logit matrix with pairs (i, labels[i])."""
    n = z.shape[0]
    rows = np.arange(n)
    zr = z - z.max(axis=1, keepdims=True)
    log_row = zr - np.log(np.exp(zr).sum(axis=1, keepdims=True))
    zc = z - z.max(axis=0, keepdims=True)
    log_col = zc - np.log(np.exp(zc).sum(axis=0, keepdims=True))
    l_txt = -log_row[rows, labels].mean()
    l_img = -log_col[rows, labels].mean()
    return l_txt, l_img


def clip_contrastive_loss(sims):
    """Symmetric contrastive loss ``(L_txt + L_img) / 2`` on a similarity matrix.

    ``L_txt`` averages ``-log`` of the row-softmax diagonal and ``L_img`` the
    column-softmax diagonal, both at temperature ``sims.temperature``.
    """
    if not isinstance(sims, SimilarityMatrix):
        sims = SimilarityMatrix(sims)
    l_txt, l_img = _row_col_terms(sims.logits, np.arange(sims.n))
    return float(0.5 * (l_txt + l_img))


def competitor_set(p, true_class):
    """Classes strictly more probable than ``true_class`` and their total mass."""
    p = as_probs(p)
    y = _check_index(true_class, p.shape[-1])
    members = np.flatnonzero(p > p[y])
    return CompetitorSet(frozenset(int(k) for k in members), float(p[members].sum()))


def _competitor_masks(probs, y):
    py = probs[np.arange(probs.shape[0]), y]
    mask = probs > py[:, None]
    return py, mask


def cmp_values(probs, labels, config=CmpConfig()):
    """Per-sample penalty for a batch of probability rows (vectorized ``cmp_sample``)."""
    probs = as_probs(probs)
    if probs.ndim == 1:
        probs = probs[None, :]
    y = _check_labels(labels, probs.shape[0], probs.shape[1])
    return _cmp_values(probs, y, config)


def _cmp_values(probs, y, config):
    py, mask = _competitor_masks(probs, y)
    mass = np.where(mask, probs, 0.0).sum(axis=1)
    active = mask.any(axis=1)
    ratio = py / (mass + config.epsilon)
    if config.variant == "ratio":
        out = ratio
    else:
        out = -np.log(ratio + config.epsilon)
    return np.where(active, out, 0.0)


def cmp_sample(p, true_class, config=CmpConfig()):
    """Penalty for one sample; exactly 0 when the true class is modal."""
    p = as_probs(p)
    y = _check_index(true_class, p.shape[-1])
    return float(_cmp_values(p[None, :], np.array([y]), config)[0])


def cmp_batch(probs, labels, config=CmpConfig()):
    """Mean penalty over a batch, reduced left to right."""
    if len(probs) == 0:
        raise InvalidArgumentError("empty batch")
    if len(probs) != len(labels):
        raise InvalidArgumentError(f"{len(probs)} probability rows but {len(labels)} labels")
    vals = cmp_values(np.asarray(probs, dtype=np.float64), labels, config)
    return _seq_mean(vals)


def _seq_mean(values):
    total = 0.0
    for v in values:
        total += float(v)
    return total / len(values)


def _breakdown(base, per_sample, config):
    cmp_loss = _seq_mean(per_sample)
    if config.lam == 0 or cmp_loss == 0:
        total = base
    else:
        total = base + config.lam * cmp_loss
    return LossBreakdown(float(base), cmp_loss, float(total), per_sample)


def loss_from_logits(logits, labels, config=CmpConfig(), base="cross_entropy", temperature=1.0):
    """Total loss ``base + lambda * CMP`` for a batch of raw logits.

    Probabilities are ``softmax(logits / temperature)`` row-wise. With
    ``base="row_contrastive"`` the batch must be square and the base term is
    the symmetric contrastive loss over pairs ``(i, labels[i])``.
    """
    if base not in BASES:
        raise InvalidArgumentError(f"base must be one of {BASES}, got {base!r}")
    if not (np.isfinite(temperature) and temperature > 0):
        raise InvalidArgumentError(f"temperature must be positive, got {temperature}")
    z = as_logits(logits)
    if z.ndim == 1:
        z = z[None, :]
    n, c = z.shape
    y = _check_labels(labels, n, c)
    z = z / temperature
    probs = _softmax(z)
    if base == "cross_entropy":
        py = np.clip(probs[np.arange(n), y], TOL.ce_clamp_floor, 1.0)
        base_loss = _seq_mean(-np.log(py))
    else:
        if n != c:
            raise InvalidArgumentError(f"row_contrastive base needs a square batch, got {n}x{c}")
        l_txt, l_img = _row_col_terms(z, y)
        base_loss = 0.5 * (l_txt + l_img)
    return _breakdown(base_loss, _cmp_values(probs, y, config), config)


def final_loss(sims, labels=None, config=CmpConfig()):
    """Contrastive loss plus the weighted penalty on the row-softmax distributions.

    ``labels`` defaults to the diagonal pairing ``labels[i] = i``.
    """
    if not isinstance(sims, SimilarityMatrix):
        sims = SimilarityMatrix(sims)
    if labels is None:
        labels = np.arange(sims.n)
    y = _check_labels(labels, sims.n, sims.n)
    z = sims.logits
    l_txt, l_img = _row_col_terms(z, y)
    base = 0.5 * (l_txt + l_img)
    return _breakdown(base, _cmp_values(_softmax(z), y, config), config)


def _cmp_grad(probs, y, config):
    """Per-sample gradient of the penalty w.r.t. the scaled logits, competitor sets frozen."""
    n = probs.shape[0]
    rows = np.arange(n)
    py, mask = _competitor_masks(probs, y)
    active = mask.any(axis=1)
    mass = np.where(mask, probs, 0.0).sum(axis=1)
    den = mass + config.epsilon
    # d ratio / d z_j = p_y [ 1{j=y} den - eps p_j - 1{j in S} p_j ] / den^2
    inner = -(config.epsilon + mask) * probs
    inner[rows, y] += den
    g = (py / den**2)[:, None] * inner
    if config.variant == "log_ratio":
        ratio = py / den
        g = -g / (ratio + config.epsilon)[:, None]
    g[~active] = 0.0
    return g


def grad_logits(logits, labels, config=CmpConfig(), base="cross_entropy", temperature=1.0):
    """Exact gradient of ``loss_from_logits(...).total`` w.r.t. the raw logits.

    Competitor sets are frozen at the current probabilities, so at a
    membership boundary the result is a one-sided subgradient.
    """
    if base not in BASES:
        raise InvalidArgumentError(f"base must be one of {BASES}, got {base!r}")
    z = as_logits(logits)
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None, :]
    n, c = z.shape
    y = _check_labels(labels, n, c)
    if not (np.isfinite(temperature) and temperature > 0):
        raise InvalidArgumentError(f"temperature must be positive, got {temperature}")
    zs = z / temperature
    probs = _softmax(zs)
    rows = np.arange(n)

    if base == "cross_entropy":
        g = probs.copy()
        g[rows, y] -= 1.0
        # the clamp makes the loss flat below the floor
        g[probs[rows, y] < TOL.ce_clamp_floor] = 0.0
        g /= n
    else:
        if n != c:
            raise InvalidArgumentError(f"row_contrastive base needs a square batch, got {n}x{c}")
        g_row = probs.copy()
        g_row[rows, y] -= 1.0
        zc = zs - zs.max(axis=0, keepdims=True)
        pcol = np.exp(zc)
        pcol /= pcol.sum(axis=0, keepdims=True)
        g_col = np.zeros_like(zs)
        for i in range(n):
            g_col[:, y[i]] += pcol[:, y[i]]
            g_col[i, y[i]] -= 1.0
        g = (g_row + g_col) / (2.0 * n)

    if config.lam != 0:
        g = g + (config.lam / n) * _cmp_grad(probs, y, config)
    g = g / temperature

    bad = ~np.all(np.isfinite(g), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericFailureError(f"non-finite gradient for sample {i}", sample=i)
    return g[0] if squeeze else g
