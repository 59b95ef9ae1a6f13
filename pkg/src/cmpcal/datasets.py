"""Synthetic embedding data, embedding/logit file formats, report persistence.

Binary embedding layout (little-endian)::

    b"CMPB" | u32 version=1 | u32 N | u32 d | u32 C | N x (u32 label, d x f32)

CSV layouts carry a header ``label,e0,...`` (embeddings) or ``label,l0,...``
(logits). Text files are UTF-8 with ``\\n`` line endings.
"""

import csv
import json
import os
import struct
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._config import InvalidArgumentError, ParseError
from .calibration import CalibrationReport

MAGIC = b"CMPB"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class EmbeddingDataset:
    embeddings: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        x = np.array(self.embeddings, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise InvalidArgumentError(f"embeddings must be a non-empty N x d array, got {x.shape}")
        if y.shape != (x.shape[0],):
            raise InvalidArgumentError(f"{x.shape[0]} embeddings but labels have shape {y.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("embeddings contain non-finite entries")
        if self.num_classes < 2:
            raise InvalidArgumentError("need at least 2 classes")
        y = y.astype(np.int64)
        if np.any(y < 0) or np.any(y >= self.num_classes):
            raise InvalidArgumentError(f"labels must lie in [0, {self.num_classes})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "embeddings", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.embeddings.shape[0]

    @property
    def dim(self):
        return self.embeddings.shape[1]

    def subset(self, idx, name=None):
        return EmbeddingDataset(self.embeddings[idx], self.labels[idx], self.num_classes,
                                self.name if name is None else name)

    def split(self, fraction=0.8, seed=0):
        """Seeded shuffle split into (first ``fraction``, rest)."""
        order = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(fraction * len(self)))
        if not 0 < cut < len(self):
            raise InvalidArgumentError("split leaves an empty part")
        return (self.subset(np.sort(order[:cut]), f"{self.name}:train"),
                self.subset(np.sort(order[cut:]), f"{self.name}:eval"))


@dataclass(frozen=True)
class LogitDataset:
    logits: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        z = np.array(self.logits, dtype=np.float64)
        y = np.asarray(self.labels).astype(np.int64)
        if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 2:
            raise InvalidArgumentError(f"logits must be N x C with N >= 1, C >= 2, got {z.shape}")
        if y.shape != (z.shape[0],):
            raise InvalidArgumentError("label count does not match logit rows")
        if not np.all(np.isfinite(z)):
            raise InvalidArgumentError("logits contain non-finite entries")
        if np.any(y < 0) or np.any(y >= z.shape[1]):
            raise InvalidArgumentError(f"labels must lie in [0, {z.shape[1]})")
        object.__setattr__(self, "logits", z)
        object.__setattr__(self, "labels", y)

    @property
    def num_classes(self):
        return self.logits.shape[1]


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 4
    dim: int = 16
    samples_per_class: int = 250
    class_separation: float = 3.0
    noise_std: float = 1.0
    label_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidArgumentError("num_classes must be >= 2")
        if self.dim < 1 or self.samples_per_class < 1:
            raise InvalidArgumentError("dim and samples_per_class must be positive")
        if not self.class_separation > 0 or not self.noise_std >= 0:
            raise InvalidArgumentError("class_separation must be > 0 and noise_std >= 0")
        if not 0 <= self.label_noise < 1:
            raise InvalidArgumentError(f"label_noise must lie in [0, 1), got {self.label_noise}")
        if self.seed < 0:
            raise InvalidArgumentError("seed must be non-negative")


def class_means(num_classes, dim, radius, rng):
    """Class centres on a sphere of the given radius.

    For ``C <= d + 1`` the centres form a randomly rotated regular simplex
    (equal pairwise distances); otherwise they are random unit directions.
    """
    c = num_classes
    if c - 1 <= dim:
        verts = np.eye(c) - 1.0 / c
        # orthonormal basis of the (C-1)-dim subspace the centred vertices span
        basis = np.linalg.svd(verts)[2][: c - 1].T
        coords = verts @ basis
        rot, _ = np.linalg.qr(rng.standard_normal((dim, c - 1)))
        means = coords @ rot.T
    else:
        means = rng.standard_normal((c, dim))
    return radius * means / np.linalg.norm(means, axis=1, keepdims=True)


def synth_generate(spec, means=None):
    """Gaussian blobs around sphere-placed class centres, with seeded label noise.

    Returns the dataset and the boolean mask of flipped labels. Embeddings are
    rounded to float32 precision so binary round trips are lossless.
    """
    rng = np.random.default_rng(spec.seed)
    centres = class_means(spec.num_classes, spec.dim, spec.class_separation, rng)
    means = centres if means is None else np.asarray(means, dtype=np.float64)
    clean = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    x = means[clean] + spec.noise_std * rng.standard_normal((clean.size, spec.dim))
    x = x.astype(np.float32).astype(np.float64)
    n_flip = int(round(spec.label_noise * clean.size))
    flipped = np.zeros(clean.size, dtype=bool)
    flipped[rng.choice(clean.size, size=n_flip, replace=False)] = True
    labels = clean.copy()
    shift = rng.integers(1, spec.num_classes, size=n_flip)
    labels[flipped] = (clean[flipped] + shift) % spec.num_classes
    name = (f"synth-c{spec.num_classes}-d{spec.dim}-n{clean.size}"
            f"-eta{spec.label_noise:g}-seed{spec.seed}")
    return EmbeddingDataset(x, labels, spec.num_classes, name), flipped


def synth_pair(spec, eval_samples_per_class):
    """Training set from ``spec`` plus an evaluation set drawn around the same class means.

    Both carry label noise at ``spec.label_noise``. The training part equals
    ``synth_generate(spec)[0]``.
    """
    train, _ = synth_generate(spec)
    rng = np.random.default_rng(spec.seed)
    means = class_means(spec.num_classes, spec.dim, spec.class_separation, rng)
    eval_spec = replace(spec, samples_per_class=eval_samples_per_class,
                        seed=spec.seed + 1_000_003)
    ev, _ = synth_generate(eval_spec, means=means)
    return train, EmbeddingDataset(ev.embeddings, ev.labels, ev.num_classes, train.name + ":eval")


def _atomic_write(path, data):
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    kwargs = {} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"}
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, mode, **kwargs) as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _fmt(v):
    # 17 significant digits round-trip any float64
    return format(float(v), ".17g")


def embeddings_to_bytes(ds):
    out = bytearray(_HEADER.pack(MAGIC, VERSION, len(ds), ds.dim, ds.num_classes))
    rec = np.zeros(len(ds), dtype=[("label", "<u4"), ("x", "<f4", (ds.dim,))])
    rec["label"] = ds.labels
    rec["x"] = ds.embeddings
    out += rec.tobytes()
    return bytes(out)


def embeddings_to_csv(ds):
    lines = [",".join(["label"] + [f"e{j}" for j in range(ds.dim)])]
    for y, row in zip(ds.labels, ds.embeddings):
        lines.append(",".join([str(int(y))] + [_fmt(v) for v in row]))
    return "\n".join(lines) + "\n"


def save_embeddings(ds, path, format="binary"):
    if format == "binary":
        _atomic_write(path, embeddings_to_bytes(ds))
    elif format == "csv":
        _atomic_write(path, embeddings_to_csv(ds))
    else:
        raise InvalidArgumentError(f"unknown format {format!r}")


def save_logits(ds, path):
    lines = [",".join(["label"] + [f"l{j}" for j in range(ds.num_classes)])]
    for y, row in zip(ds.labels, ds.logits):
        lines.append(",".join([str(int(y))] + [_fmt(v) for v in row]))
    _atomic_write(path, "\n".join(lines) + "\n")


def _parse_binary(data, path=None):
    if len(data) < _HEADER.size:
        raise ParseError(f"truncated header ({len(data)} bytes)", path, offset=len(data))
    magic, version, n, d, c = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}", path, offset=0)
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", path, offset=4)
    if n < 1 or d < 1:
        raise ParseError(f"declared N={n}, d={d} must be positive", path, offset=8)
    if c < 2:
        raise ParseError(f"declared C={c} must be >= 2", path, offset=16)
    rec_size = 4 + 4 * d
    body = len(data) - _HEADER.size
    if body != n * rec_size:
        actual, rem = divmod(body, rec_size)
        where = _HEADER.size + actual * rec_size
        msg = (f"truncated record {actual}" if body < n * rec_size
               else f"{actual} records (+{rem} bytes) present but header declares {n}")
        raise ParseError(msg, path, offset=where, record=actual)
    rec = np.frombuffer(data, dtype=[("label", "<u4"), ("x", "<f4", (d,))],
                        count=n, offset=_HEADER.size)
    labels = rec["label"].astype(np.int64)
    bad = np.flatnonzero(labels >= c)
    if bad.size:
        i = int(bad[0])
        raise ParseError(f"label {labels[i]} >= C={c}", path,
                         offset=_HEADER.size + i * rec_size, record=i)
    x = rec["x"].astype(np.float64)
    nonfinite = np.flatnonzero(~np.all(np.isfinite(x), axis=1))
    if nonfinite.size:
        i = int(nonfinite[0])
        raise ParseError("non-finite value", path, offset=_HEADER.size + i * rec_size + 4, record=i)
    return x, labels, c


def _read_csv(path, prefix):
    """Parse ``label,<prefix>0,...``; returns (values, labels, width)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("not valid UTF-8", path, offset=exc.start) from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ParseError("empty file", path, line=1)
    header = [h.strip() for h in rows[0]]
    width = len(header) - 1
    expected = ["label"] + [f"{prefix}{j}" for j in range(width)]
    if width < 1 or header != expected:
        raise ParseError(f"header must be label,{prefix}0,...,{prefix}{{k-1}}", path, line=1)
    values, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width + 1:
            raise ParseError(f"expected {width + 1} fields, got {len(row)}", path, line=lineno)
        try:
            y = int(row[0])
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ParseError(f"non-numeric cell ({exc})", path, line=lineno) from None
        if y < 0:
            raise ParseError(f"negative label {y}", path, line=lineno)
        if not all(np.isfinite(vals)):
            raise ParseError("non-finite value", path, line=lineno)
        values.append(vals)
        labels.append(y)
    if not values:
        raise InvalidArgumentError(f"{path}: no data rows")
    return np.array(values, dtype=np.float64), np.array(labels, dtype=np.int64), width


def sniff_format(path):
    with open(path, "rb") as fh:
        return "binary" if fh.read(4) == MAGIC else "csv"


def load_embeddings(path, format=None, num_classes=None):
    """Read an embedding file. ``format=None`` sniffs the magic bytes.

    CSV files do not record C; it defaults to ``max(label) + 1`` (at least 2).
    """
    format = format or sniff_format(path)
    name = Path(path).stem
    if format == "binary":
        x, y, c = _parse_binary(Path(path).read_bytes(), path)
        if num_classes is not None and num_classes != c:
            raise ParseError(f"file declares C={c}, expected {num_classes}", path, offset=16)
    elif format == "csv":
        x, y, _ = _read_csv(path, "e")
        c = num_classes if num_classes is not None else max(int(y.max()) + 1, 2)
        bad = np.flatnonzero(y >= c)
        if bad.size:
            raise ParseError(f"label {y[bad[0]]} >= C={c}", path, line=int(bad[0]) + 2)
    else:
        raise InvalidArgumentError(f"unknown format {format!r}")
    return EmbeddingDataset(x, y, c, name)


def load_logits(path):
    z, y, c = _read_csv(path, "l")
    if c < 2:
        raise ParseError("need at least 2 logit columns", path, line=1)
    bad = np.flatnonzero(y >= c)
    if bad.size:
        raise ParseError(f"label {y[bad[0]]} >= C={c}", path, line=int(bad[0]) + 2)
    return LogitDataset(z, y)


def save_report(report, path, format="json"):
    """Write a CalibrationReport as JSON or per-bin CSV (atomic replace)."""
    if format == "json":
        _atomic_write(path, report.to_json())
    elif format == "csv":
        _atomic_write(path, report.to_csv())
    else:
        raise InvalidArgumentError(f"unknown report format {format!r}")


def load_report(path):
    return CalibrationReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
