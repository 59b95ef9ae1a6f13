"""Deterministic SGD training of a prototype head over frozen embeddings.

The head scores an embedding ``x`` against class prototypes ``w_c`` (cosine
or dot product); probabilities are ``softmax(scores / temperature)``. The
objective is ``base + lambda * CMP`` from :mod:`cmpcal.losses`, differentiated
analytically through the head.
"""

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import calibration
from ._config import (CLIP_TEMPERATURE, DEFAULT_BINS, TEMPERATURE_CLAMP, InvalidArgumentError,
                      NumericFailureError, TrainingFailureError)
from .losses import BASES, CmpConfig, _breakdown, grad_logits, loss_from_logits
from .prob_core import _softmax

DEFAULT_LAMBDA_GRID = (0.001, 0.01, 0.05, 0.1, 0.5, 0.95)


@dataclass
class HeadParams:
    prototypes: np.ndarray
    temperature: float = CLIP_TEMPERATURE
    normalize_embeddings: bool = True
    use_cosine: bool = True

    def __post_init__(self):
        self.prototypes = np.array(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 2:
            raise InvalidArgumentError("prototypes must be a C x d matrix with C >= 2")
        if not np.all(np.isfinite(self.prototypes)):
            raise InvalidArgumentError("prototypes contain non-finite entries")
        if not (math.isfinite(self.temperature) and self.temperature > 0):
            raise InvalidArgumentError("temperature must be positive")

    @property
    def num_classes(self):
        return self.prototypes.shape[0]

    @property
    def dim(self):
        return self.prototypes.shape[1]

    def copy(self):
        return replace(self, prototypes=self.prototypes.copy())

    def to_json(self):
        return json.dumps({
            "temperature": self.temperature,
            "normalize_embeddings": self.normalize_embeddings,
            "use_cosine": self.use_cosine,
            "prototypes": self.prototypes.tolist(),
        }) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(np.array(d["prototypes"]), d["temperature"], d["normalize_embeddings"],
                   d["use_cosine"])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    cmp: CmpConfig = field(default_factory=CmpConfig)
    base: str = "cross_entropy"
    learn_temperature: bool = False
    temperature: float = CLIP_TEMPERATURE
    use_cosine: bool = True
    normalize_embeddings: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise InvalidArgumentError("momentum must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be positive")
        if self.seed < 0:
            raise InvalidArgumentError("seed must be non-negative")
        if self.base not in BASES:
            raise InvalidArgumentError(f"base must be one of {BASES}")
        if not self.temperature > 0:
            raise InvalidArgumentError("temperature must be > 0")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    base_loss: float
    cmp_loss: float
    total: float
    train_accuracy: float
    mean_entropy: float
    mean_sharpness: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    # sup-norm of the prototype gradient at every step
    grad_supnorms: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "base_loss", "cmp_loss", "total", "train_accuracy",
                    "mean_entropy", "mean_sharpness"])
        for r in self.records:
            w.writerow([r.epoch] + [repr(float(v)) for v in (
                r.base_loss, r.cmp_loss, r.total, r.train_accuracy, r.mean_entropy,
                r.mean_sharpness)])
        return buf.getvalue()


def init_head(dim, num_classes, seed=0, temperature=CLIP_TEMPERATURE, use_cosine=True,
              normalize_embeddings=True):
    """Prototypes drawn from N(0, 0.02^2) with a seeded generator."""
    if dim < 1 or num_classes < 2:
        raise InvalidArgumentError("need dim >= 1 and num_classes >= 2")
    w = np.random.default_rng(seed).normal(0.0, 0.02, size=(num_classes, dim))
    return HeadParams(w, temperature, normalize_embeddings, use_cosine)


def _unit_rows(a):
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    return np.divide(a, norms, out=np.zeros_like(a), where=norms > 0), norms


def _features(head, x):
    if head.use_cosine or head.normalize_embeddings:
        return _unit_rows(x)[0]
    return x


def forward(head, embeddings):
    """Raw scores (temperature not applied): cosine similarity or dot product."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != head.dim:
        raise InvalidArgumentError(f"embeddings must be N x {head.dim}, got {x.shape}")
    feats = _features(head, x)
    w = _unit_rows(head.prototypes)[0] if head.use_cosine else head.prototypes
    # overflow surfaces as non-finite scores, which callers reject
    with np.errstate(over="ignore", invalid="ignore"):
        return feats @ w.T


def head_gradient(head, embeddings, labels, cmp=CmpConfig(), base="cross_entropy"):
    """Loss breakdown and gradients w.r.t. prototypes and temperature."""
    x = np.asarray(embeddings, dtype=np.float64)
    feats = _features(head, x)
    with np.errstate(over="ignore", invalid="ignore"):
        if head.use_cosine:
            u, norms = _unit_rows(head.prototypes)
            scores = feats @ u.T
        else:
            scores = feats @ head.prototypes.T
    loss = loss_from_logits(scores, labels, cmp, base, head.temperature)
    g = grad_logits(scores, labels, cmp, base, head.temperature)
    g_w = g.T @ feats
    if head.use_cosine:
        # d u / d w = (I - u u^T) / |w|
        g_w = (g_w - np.sum(g_w * u, axis=1, keepdims=True) * u) / np.where(norms > 0, norms, 1.0)
    g_tau = -float(np.sum(g * scores)) / head.temperature
    return loss, g_w, g_tau


def _epoch_record(epoch, head, ds, config):
    scores = forward(head, ds.embeddings)
    loss = _full_loss(scores, ds, config, head.temperature)
    probs = _softmax(scores / head.temperature)
    rows = np.arange(len(ds))
    logp = np.log(np.where(probs > 0, probs, 1.0))
    ent = -np.sum(probs * logp, axis=1)
    return EpochRecord(
        epoch=epoch,
        base_loss=loss.base_loss,
        cmp_loss=loss.cmp_loss,
        total=loss.total,
        train_accuracy=float(np.mean(probs.argmax(axis=1) == ds.labels)),
        mean_entropy=float(np.mean(ent)),
        mean_sharpness=float(np.mean(ds.num_classes * probs[rows, ds.labels])),
    )


def _full_loss(scores, ds, config, temperature):
    if config.base == "row_contrastive":
        # the contrastive base is defined per square batch; report the mean over batches
        b = config.batch_size
        parts = [loss_from_logits(scores[i:i + b], ds.labels[i:i + b], config.cmp,
                                  config.base, temperature)
                 for i in range(0, len(ds), b)]
        base = sum(p.base_loss for p in parts) / len(parts)
        per = np.concatenate([p.per_sample_cmp for p in parts])
        return _breakdown(base, per, config.cmp)
    return loss_from_logits(scores, ds.labels, config.cmp, config.base, temperature)


def _check_train_inputs(ds, config):
    if config.batch_size > len(ds):
        raise InvalidArgumentError(f"batch_size {config.batch_size} exceeds dataset size {len(ds)}")
    if config.base == "row_contrastive":
        if config.batch_size != ds.num_classes or len(ds) % config.batch_size:
            raise InvalidArgumentError(
                "row_contrastive training needs batch_size == num_classes dividing the dataset size")


def train(dataset, config=TrainConfig(), head=None):
    """Minibatch SGD with momentum on ``base + lambda * CMP``.

    Each epoch shuffles with a generator seeded from ``config.seed``, then
    steps through ``ceil(n / batch_size)`` batches. After every epoch the
    full training set is scored to fill one :class:`EpochRecord`.
    """
    _check_train_inputs(dataset, config)
    if head is None:
        head = init_head(dataset.dim, dataset.num_classes, config.seed, config.temperature,
                         config.use_cosine, config.normalize_embeddings)
    else:
        head = head.copy()
    if head.use_cosine:
        head.prototypes = _unit_rows(head.prototypes)[0]
    rng = np.random.default_rng(config.seed)
    vel_w = np.zeros_like(head.prototypes)
    vel_t = 0.0
    history = TrainHistory()
    n, b = len(dataset), config.batch_size
    x, y = dataset.embeddings, dataset.labels
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, b):
            idx = order[start:start + b]
            try:
                loss, g_w, g_t = head_gradient(head, x[idx], y[idx], config.cmp, config.base)
            except (NumericFailureError, InvalidArgumentError) as exc:
                # inputs were validated up front, so this is overflow in the parameters
                raise TrainingFailureError(f"epoch {epoch} step {step}: {exc}", epoch, step) from exc
            if not math.isfinite(loss.total) or not np.all(np.isfinite(g_w)):
                raise TrainingFailureError(
                    f"non-finite loss at epoch {epoch} step {step}", epoch, step)
            history.grad_supnorms.append(float(np.max(np.abs(g_w))))
            vel_w = config.momentum * vel_w + g_w
            head.prototypes = head.prototypes - config.learning_rate * vel_w
            if head.use_cosine:
                head.prototypes = _unit_rows(head.prototypes)[0]
            if not np.all(np.isfinite(head.prototypes)):
                raise TrainingFailureError(
                    f"parameters diverged at epoch {epoch} step {step}", epoch, step)
            if config.learn_temperature:
                vel_t = config.momentum * vel_t + g_t
                head.temperature = float(np.clip(head.temperature - config.learning_rate * vel_t,
                                                 *TEMPERATURE_CLAMP))
            step += 1
        try:
            rec = _epoch_record(epoch, head, dataset, config)
        except InvalidArgumentError as exc:
            raise TrainingFailureError(f"after epoch {epoch}: {exc}", epoch, step) from exc
        if not math.isfinite(rec.total):
            raise TrainingFailureError(f"non-finite loss after epoch {epoch}", epoch, step)
        history.records.append(rec)
    return head, history


def evaluate_logits(logits, labels, m=DEFAULT_BINS, temperature=1.0):
    preds = calibration.predictions_from_logits(logits, labels, temperature)
    acc = float(np.mean([p.correct for p in preds]))
    return acc, calibration.report(preds, m)


def evaluate(head, dataset, m=DEFAULT_BINS):
    """Accuracy and calibration report of ``head`` on ``dataset``."""
    return evaluate_logits(forward(head, dataset.embeddings), dataset.labels, m, head.temperature)


@dataclass(frozen=True)
class LambdaRow:
    lam: float
    ece: float
    ace: float
    mce: float
    accuracy: float
    error: str = ""


def _run_lambda(lam, train_set, eval_set, config, m):
    cfg = replace(config, cmp=replace(config.cmp, lam=lam))
    try:
        head, _ = train(train_set, cfg)
    except TrainingFailureError as exc:
        nan = float("nan")
        return LambdaRow(lam, nan, nan, nan, nan, str(exc))
    acc, rep = evaluate(head, eval_set, m)
    return LambdaRow(lam, rep.ece, rep.ace, rep.mce, acc)


def lambda_line_search(train_set, eval_set, grid=DEFAULT_LAMBDA_GRID, config=TrainConfig(),
                       m=DEFAULT_BINS, workers=None):
    """Train one head per lambda (same seed and init) and pick the lowest eval ECE.

    Ties go to the smaller lambda. ``workers`` > 1 runs grid points in threads;
    results do not depend on it.
    """
    grid = [float(v) for v in grid]
    if not grid or any(not (math.isfinite(v) and v >= 0) for v in grid):
        raise InvalidArgumentError("grid must be a non-empty list of non-negative reals")
    run = lambda lam: _run_lambda(lam, train_set, eval_set, config, m)  # noqa: E731
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, grid))
    else:
        rows = [run(lam) for lam in grid]
    ok = [r for r in rows if not r.error]
    if not ok:
        raise TrainingFailureError("training failed for every lambda: "
                                   + "; ".join(r.error for r in rows))
    best = min(ok, key=lambda r: (r.ece, r.lam))
    return best.lam, rows


def lambda_table_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "ece", "ace", "mce", "accuracy"])
    for r in rows:
        w.writerow([repr(r.lam), repr(r.ece), repr(r.ace), repr(r.mce), repr(r.accuracy)])
    return buf.getvalue()


def threads_from_env():
    """Worker count from ``CMP_THREADS``; unset or invalid means serial."""
    try:
        return max(1, int(os.environ.get("CMP_THREADS", "1")))
    except ValueError:
        return 1
