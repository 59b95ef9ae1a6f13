"""Calibration metrics (ECE, ACE, MCE), reliability bins and confidence histograms.

Equal-width bins are half-open ``[k/m, (k+1)/m)`` except the last, which is
closed at 1. Empty bins are skipped by every metric.
"""

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ._config import DEFAULT_BINS, TOL, InvalidArgumentError
from .prob_core import softmax


@dataclass(frozen=True)
class Prediction:
    confidence: float
    predicted_label: int
    true_label: int

    @property
    def correct(self):
        return self.predicted_label == self.true_label


@dataclass(frozen=True)
class BinStat:
    lower: float
    upper: float
    count: int
    mean_confidence: float
    accuracy: float


@dataclass
class CalibrationReport:
    ece: float
    ace: float
    mce: float
    n: int
    m: int
    bins: list = field(default_factory=list)
    correct_hist: list = field(default_factory=list)
    incorrect_hist: list = field(default_factory=list)

    def to_dict(self):
        return {
            "ece": self.ece,
            "ace": self.ace,
            "mce": self.mce,
            "n": self.n,
            "m": self.m,
            "bins": [asdict(b) for b in self.bins],
            "correct_hist": list(self.correct_hist),
            "incorrect_hist": list(self.incorrect_hist),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            ece=float(d["ece"]),
            ace=float(d["ace"]),
            mce=float(d["mce"]),
            n=int(d["n"]),
            m=int(d["m"]),
            bins=[BinStat(**b) for b in d["bins"]],
            correct_hist=[int(v) for v in d["correct_hist"]],
            incorrect_hist=[int(v) for v in d["incorrect_hist"]],
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lower", "bin_upper", "count", "mean_confidence", "accuracy",
                    "correct_count", "incorrect_count"])
        for b, nc, ni in zip(self.bins, self.correct_hist, self.incorrect_hist):
            w.writerow([repr(b.lower), repr(b.upper), b.count, repr(b.mean_confidence),
                        repr(b.accuracy), nc, ni])
        return buf.getvalue()

    def ece_from_bins(self):
        """ECE recomputed from the stored bin statistics."""
        return _weighted_gap([(b.count, b.accuracy, b.mean_confidence) for b in self.bins], self.n)

    def mce_from_bins(self):
        return _max_gap([(b.count, b.accuracy, b.mean_confidence) for b in self.bins])


def predictions_from_probs(probs, labels):
    """One :class:`Prediction` per row using the max probability as confidence."""
    probs = np.asarray(probs, dtype=np.float64)
    pred = probs.argmax(axis=1)
    conf = probs[np.arange(len(probs)), pred]
    return [Prediction(float(c), int(p), int(t)) for c, p, t in zip(conf, pred, labels)]


def predictions_from_logits(logits, labels, temperature=1.0):
    return predictions_from_probs(softmax(logits, temperature), labels)


def _arrays(preds):
    if len(preds) == 0:
        raise InvalidArgumentError("no predictions")
    conf = np.fromiter((p.confidence for p in preds), dtype=np.float64, count=len(preds))
    correct = np.fromiter((p.predicted_label == p.true_label for p in preds), dtype=bool,
                          count=len(preds))
    if not np.all(np.isfinite(conf)) or np.any(conf < -TOL.confidence_atol) \
            or np.any(conf > 1 + TOL.confidence_atol):
        raise InvalidArgumentError("confidences must lie in [0, 1]")
    return np.clip(conf, 0.0, 1.0), correct


def _check_bins(m):
    if int(m) != m or m < 1:
        raise InvalidArgumentError(f"bin count must be a positive integer, got {m}")
    return int(m)


def bin_edges(m):
    return np.arange(m + 1) / m


def bin_index(conf, m):
    """Equal-width bin of each confidence; 1.0 lands in the last bin."""
    idx = np.searchsorted(bin_edges(m), conf, side="right") - 1
    return np.clip(idx, 0, m - 1)


def _bin_stats(conf, correct, m):
    idx = bin_index(conf, m)
    counts = np.bincount(idx, minlength=m)
    conf_sum = np.bincount(idx, weights=conf, minlength=m)
    hits = np.bincount(idx, weights=correct.astype(np.float64), minlength=m)
    out = []
    for k in range(m):
        cnt = int(counts[k])
        if cnt:
            out.append((cnt, hits[k] / cnt, conf_sum[k] / cnt))
        else:
            out.append((0, 0.0, 0.0))
    return out


def _weighted_gap(stats, n):
    total = 0.0
    for cnt, acc, conf in stats:
        if cnt:
            total += (cnt / n) * abs(acc - conf)
    return float(total)


def _max_gap(stats):
    gaps = [abs(acc - conf) for cnt, acc, conf in stats if cnt]
    return float(max(gaps)) if gaps else 0.0


def ece(preds, m=DEFAULT_BINS):
    """Expected calibration error over ``m`` equal-width bins."""
    m = _check_bins(m)
    conf, correct = _arrays(preds)
    return _weighted_gap(_bin_stats(conf, correct, m), len(conf))


def mce(preds, m=DEFAULT_BINS):
    """Maximum calibration error over the non-empty equal-width bins."""
    m = _check_bins(m)
    conf, correct = _arrays(preds)
    return _max_gap(_bin_stats(conf, correct, m))


def adaptive_bins(n, m):
    """Sizes of ``m`` equal-count bins; the first ``n % m`` get one extra element."""
    base, extra = divmod(n, m)
    return [base + 1 if k < extra else base for k in range(m)]


def ace(preds, m=DEFAULT_BINS):
    """Adaptive calibration error: mean gap over ``m`` equal-count bins.

    Predictions are sorted by confidence (stable, so ties keep input order).
    """
    m = _check_bins(m)
    conf, correct = _arrays(preds)
    n = len(conf)
    if m > n:
        raise InvalidArgumentError(f"ACE needs m <= n, got m={m}, n={n}")
    order = np.argsort(conf, kind="stable")
    conf, correct = conf[order], correct[order]
    total = 0.0
    start = 0
    for size in adaptive_bins(n, m):
        sl = slice(start, start + size)
        start += size
        acc = correct[sl].sum() / size
        mean_conf = _seq_sum(conf[sl]) / size
        total += abs(acc - mean_conf)
    return float(total / m)


def _seq_sum(values):
    s = 0.0
    for v in values:
        s += float(v)
    return s


def confidence_histograms(preds, m=DEFAULT_BINS):
    """Per-bin counts of correct and incorrect predictions."""
    m = _check_bins(m)
    conf, correct = _arrays(preds)
    idx = bin_index(conf, m)
    return (np.bincount(idx[correct], minlength=m).tolist(),
            np.bincount(idx[~correct], minlength=m).tolist())


def report(preds, m=DEFAULT_BINS):
    """All metrics, bins and histograms for one prediction set.

    ACE uses ``min(m, n)`` bins so that tiny sets still get a report.
    """
    m = _check_bins(m)
    conf, correct = _arrays(preds)
    stats = _bin_stats(conf, correct, m)
    edges = bin_edges(m)
    bins = [BinStat(float(edges[k]), float(edges[k + 1]), cnt, float(c), float(a))
            for k, (cnt, a, c) in enumerate(stats)]
    correct_hist, incorrect_hist = confidence_histograms(preds, m)
    return CalibrationReport(
        ece=_weighted_gap(stats, len(conf)),
        ace=ace(preds, min(m, len(conf))),
        mce=_max_gap(stats),
        n=len(conf),
        m=m,
        bins=bins,
        correct_hist=correct_hist,
        incorrect_hist=incorrect_hist,
    )


def mean_confidence_of_hist(hist, m=None):
    """Mass-weighted mean bin-centre confidence of a histogram."""
    hist = np.asarray(hist, dtype=np.float64)
    m = len(hist) if m is None else m
    if hist.sum() == 0:
        return float("nan")
    centres = (np.arange(m) + 0.5) / m
    return float((hist * centres).sum() / hist.sum())
