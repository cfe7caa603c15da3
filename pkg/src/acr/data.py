"""Class-incremental task streams, augmentation and the OOD corruption suite."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

CORRUPTIONS = ("gaussian-noise", "shot-noise", "impulse-noise", "defocus-blur", "pixelate")

# Index 0 is the identity severity; 1..5 are the evaluated levels.
SEVERITY_LADDERS: Dict[str, Tuple[float, ...]] = {
    "gaussian-noise": (0.0, 0.04, 0.06, 0.08, 0.09, 0.10),  # noise std on the [0, 1] range
    "shot-noise": (np.inf, 60.0, 25.0, 12.0, 5.0, 3.0),  # photons per unit intensity
    "impulse-noise": (0.0, 0.03, 0.06, 0.09, 0.17, 0.27),  # salt-and-pepper rate
    "defocus-blur": (0.0, 0.6, 1.0, 1.5, 2.0, 2.5),  # disk radius in pixels
    "pixelate": (1.0, 0.9, 0.8, 0.7, 0.6, 0.5),  # downsampled side as a fraction
}


@dataclass
class Task:
    task_id: int
    classes: Tuple[int, ...]
    X_train: np.ndarray
    y_train: np.ndarray
    ids_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    ids_test: np.ndarray
    # generator blend weight toward another class (image streams only)
    blend_train: Optional[np.ndarray] = None
    blend_test: Optional[np.ndarray] = None


@dataclass
class TaskStream:
    tasks: List[Task]
    kind: str = "vector"
    side: Optional[int] = None
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.tasks)

    @property
    def n_features(self) -> int:
        return int(self.tasks[0].X_train.shape[1])

    @property
    def classes(self) -> List[int]:
        return [c for t in self.tasks for c in t.classes]

    def test_sets(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return [(t.X_test, t.y_test) for t in self.tasks]

    def validate(self) -> None:
        seen: set = set()
        for t in self.tasks:
            cs = set(t.classes)
            if cs & seen:
                raise ValueError(f"task {t.task_id} reuses classes {sorted(cs & seen)}")
            seen |= cs
            for y in (t.y_train, t.y_test):
                if not set(np.unique(y).tolist()) <= cs:
                    raise ValueError(f"task {t.task_id} has labels outside its class set")
            if set(t.ids_train.tolist()) & set(t.ids_test.tolist()):
                raise ValueError(f"task {t.task_id} train/test splits share sample ids")


def _split(rng, X, y, test_frac):
    """Per-class shuffled train/test split; returns index arrays."""
    train, test = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(round(idx.size * test_frac))
        test.extend(sorted(idx[:n_test]))
        train.extend(sorted(idx[n_test:]))
    return np.array(train, dtype=np.intp), np.array(test, dtype=np.intp)


def _assemble(X_all, y_all, T, classes_per_task, test_frac, rng, kind, side, meta, blend=None) -> TaskStream:
    ids_all = np.arange(y_all.size, dtype=np.int64)
    tasks = []
    for t in range(T):
        classes = tuple(range(t * classes_per_task, (t + 1) * classes_per_task))
        mask = np.isin(y_all, classes)
        Xt, yt, it = X_all[mask], y_all[mask], ids_all[mask]
        tr, te = _split(rng, Xt, yt, test_frac)
        task = Task(t, classes, Xt[tr], yt[tr], it[tr], Xt[te], yt[te], it[te])
        if blend is not None:
            task.blend_train, task.blend_test = blend[mask][tr], blend[mask][te]
        tasks.append(task)
    stream = TaskStream(tasks, kind=kind, side=side, meta=meta)
    stream.validate()
    return stream


def make_synthetic_stream(T: int = 5, classes_per_task: int = 4, samples_per_class: int = 250,
                          dim: int = 32, seed: int = 0, margin: float = 3.0, test_frac: float = 0.2) -> TaskStream:
    """Gaussian blobs with unit noise; class means sit ``margin`` from the origin.

    ``margin=0`` makes every class the same distribution.
    """
    if min(T, classes_per_task, samples_per_class, dim) < 1:
        raise ValueError("T, classes_per_task, samples_per_class and dim must be positive")
    n_classes = T * classes_per_task
    if n_classes > np.iinfo(np.int32).max:
        raise ValueError(f"{n_classes} classes exceed the representable label range")
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(n_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = margin * directions
    y = np.repeat(np.arange(n_classes), samples_per_class)
    X = means[y] + rng.normal(size=(y.size, dim))
    meta = dict(generator="synthetic", T=T, classes_per_task=classes_per_task,
                samples_per_class=samples_per_class, dim=dim, seed=seed, margin=margin)
    return _assemble(X, y, T, classes_per_task, test_frac, rng, "vector", None, meta)


def _glyph(rng: np.random.Generator, side: int, strokes: int = 3, width: float = 0.9) -> np.ndarray:
    """Render a few random line segments onto a ``side x side`` grid."""
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    img = np.zeros((side, side))
    lo, hi = 1.0, side - 2.0
    for _ in range(strokes):
        p = rng.uniform(lo, hi, 2)
        q = rng.uniform(lo, hi, 2)
        d = q - p
        denom = max(float(d @ d), 1e-9)
        s = np.clip(((xx - p[0]) * d[0] + (yy - p[1]) * d[1]) / denom, 0.0, 1.0)
        dist = np.hypot(xx - (p[0] + s * d[0]), yy - (p[1] + s * d[1]))
        img = np.maximum(img, np.clip(1.0 - dist / (2 * width), 0.0, 1.0))
    return img


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = img[ys, xs]
    return out


def make_image_stream(T: int = 5, classes_per_task: int = 4, side: int = 10, seed: int = 0,
                      samples_per_class: int = 250, jitter: float = 1.0, noise: float = 0.08,
                      max_blend: float = 0.5, outlier_rate: float = 0.1,
                      test_frac: float = 0.2) -> TaskStream:
    """Procedural grayscale glyph classes, flattened to ``side*side`` features.

    Every class is a fixed set of random strokes.  A sample is the class
    glyph, shifted by up to one pixel, blended with the glyph of another
    class from the same task, plus pixel noise.  Blend weights are uniform
    on ``[0, max_blend)`` so difficulty varies smoothly; a fraction
    ``outlier_rate`` of samples is blended past the midpoint and looks more
    like the other class.  All randomness scales with ``jitter``;
    ``jitter=0`` makes every sample of a class identical.
    """
    if side < 8:
        raise ValueError(f"side must be at least 8, got {side}")
    if min(T, classes_per_task, samples_per_class) < 1:
        raise ValueError("T, classes_per_task and samples_per_class must be positive")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    rng = np.random.default_rng(seed)
    n_classes = T * classes_per_task
    glyphs = [_glyph(np.random.default_rng([seed, c]), side) for c in range(n_classes)]

    X = np.empty((n_classes * samples_per_class, side * side))
    y = np.repeat(np.arange(n_classes), samples_per_class)
    blend = np.empty(y.size)
    k = 0
    max_shift = int(round(jitter))
    for c in range(n_classes):
        task_first = (c // classes_per_task) * classes_per_task
        partners = [p for p in range(task_first, task_first + classes_per_task) if p != c] or [c]
        for _ in range(samples_per_class):
            other = partners[rng.integers(len(partners))]
            if rng.random() < outlier_rate:
                lam = rng.uniform(0.6, 0.9)
            else:
                lam = rng.uniform(0.0, max_blend)
            lam *= min(jitter, 1.0)
            dy, dx = rng.integers(-max_shift, max_shift + 1, 2)
            img = (1 - lam) * glyphs[c] + lam * glyphs[other]
            img = _shift(img, int(dy), int(dx))
            img = img * (1 - 0.3 * jitter * rng.random()) + jitter * noise * rng.normal(size=img.shape)
            X[k] = np.clip(img, 0.0, 1.0).reshape(-1)
            blend[k] = lam
            k += 1
    meta = dict(generator="image", T=T, classes_per_task=classes_per_task, side=side, seed=seed,
                samples_per_class=samples_per_class, jitter=jitter, noise=noise, max_blend=max_blend,
                outlier_rate=outlier_rate)
    return _assemble(X, y, T, classes_per_task, test_frac, rng, "image", side, meta, blend)


# ----------------------------------------------------------- augmentation


def augment(X: np.ndarray, rng: np.random.Generator, side: Optional[int] = None,
            flip_prob: float = 0.5, offsets: Optional[np.ndarray] = None,
            noise_std: float = 0.05) -> np.ndarray:
    """Random crop after 1-pixel reflect padding plus horizontal flip.

    Without ``side`` the rows are treated as plain vectors and get additive
    Gaussian noise instead.  ``offsets`` (n x 2, values in {-1, 0, 1}) pins
    the crop shift per sample; (0, 0) is the un-shifted crop.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        return X.copy()
    if side is None:
        return X + noise_std * rng.normal(size=X.shape)
    n = X.shape[0]
    imgs = X.reshape(n, side, side)
    padded = np.pad(imgs, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    if offsets is None:
        offsets = rng.integers(-1, 2, size=(n, 2))
    offsets = np.asarray(offsets, dtype=np.intp)
    flips = rng.random(n) < flip_prob
    ar = np.arange(side)
    r = offsets[:, 0, None] + 1 + ar
    c = offsets[:, 1, None] + 1 + np.where(flips[:, None], ar[::-1], ar)
    out = padded[np.arange(n)[:, None, None], r[:, :, None], c[:, None, :]]
    return out.reshape(n, side * side)


# ------------------------------------------------------------ corruptions


def impulse_noise(X: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Set a fraction ``p`` of pixels to 0 or 1 with equal odds."""
    X = np.array(X, dtype=np.float64)
    hit = rng.random(X.shape) < p
    salt = rng.random(X.shape) < 0.5
    X[hit] = salt[hit].astype(np.float64)
    return X


def _disk(radius: float) -> np.ndarray:
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    k = (xx**2 + yy**2 <= radius**2).astype(np.float64)
    return k / k.sum()


def _pixelate(imgs: np.ndarray, frac: float) -> np.ndarray:
    n, side, _ = imgs.shape
    small = max(1, int(round(side * frac)))
    if small >= side:
        return imgs.copy()
    block = (np.arange(side) * small) // side
    sums = np.zeros((n, small, small))
    np.add.at(sums, (slice(None), block[:, None], block[None, :]), imgs)
    counts = np.zeros((small, small))
    np.add.at(counts, (block[:, None], block[None, :]), 1.0)
    means = sums / counts
    return means[:, block[:, None], block[None, :]]


def corrupt(X: np.ndarray, kind: str, severity: int, rng: np.random.Generator, side: int) -> np.ndarray:
    """Apply one corruption at ``severity`` (0 is the identity, 1..5 evaluated).

    Output is clamped to [0, 1]; row count and width never change.
    """
    if kind not in SEVERITY_LADDERS:
        raise ValueError(f"unknown corruption {kind!r}; choose from {', '.join(CORRUPTIONS)}")
    if not isinstance(severity, (int, np.integer)) or not 0 <= severity <= 5:
        raise ValueError(f"severity must be an integer in 1..5 (0 = identity), got {severity!r}")
    if side is None:
        raise ValueError("corruptions need an image stream (side is None)")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != side * side:
        raise ValueError(f"expected rows of {side * side} pixels, got shape {X.shape}")
    if severity == 0:
        return X.copy()
    level = SEVERITY_LADDERS[kind][severity]
    if kind == "gaussian-noise":
        out = X + rng.normal(scale=level, size=X.shape)
    elif kind == "shot-noise":
        out = rng.poisson(np.clip(X, 0, 1) * level) / level
    elif kind == "impulse-noise":
        out = impulse_noise(X, level, rng)
    elif kind == "defocus-blur":
        k = _disk(level)
        imgs = X.reshape(-1, side, side)
        out = np.stack([ndimage.convolve(im, k, mode="reflect") for im in imgs]).reshape(X.shape)
    else:
        out = _pixelate(X.reshape(-1, side, side), level).reshape(X.shape)
    return np.clip(out, 0.0, 1.0)


def parse_corruption(text: str) -> Tuple[str, int]:
    """``"gaussian-noise:3"`` -> ``("gaussian-noise", 3)``."""
    kind, _, sev = text.partition(":")
    kind = kind.strip()
    if kind not in SEVERITY_LADDERS or not sev.strip().isdigit():
        raise ValueError(f"bad corruption spec {text!r}; expected <kind>:<severity>")
    return kind, int(sev)


class Corruption(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`corrupt` for pipelines."""

    def __init__(self, kind: str = "gaussian-noise", severity: int = 1, side: Optional[int] = None,
                 random_state: Optional[int] = 0):
        self.kind = kind
        self.severity = severity
        self.side = side
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X)
        self.side_ = self.side or int(round(np.sqrt(X.shape[1])))
        if self.side_ * self.side_ != X.shape[1]:
            raise ValueError(f"{X.shape[1]} features do not form a square image")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X)
        side = getattr(self, "side_", None) or self.side or int(round(np.sqrt(X.shape[1])))
        return corrupt(X, self.kind, self.severity, np.random.default_rng(self.random_state), side)


# ---------------------------------------------------------------- on disk
#
# One file per task per split, little-endian:
#   magic b"ACRD" | u32 version | u32 rows | u32 cols
#   rows*cols float64 features (row-major) | rows int64 labels | rows int64 sample ids

_MAGIC = b"ACRD"
_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_split(path, X: np.ndarray, y: np.ndarray, ids: np.ndarray) -> None:
    X = np.ascontiguousarray(X, dtype="<f8")
    with open(os.fspath(path), "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, X.shape[0], X.shape[1]))
        fh.write(X.tobytes())
        fh.write(np.asarray(y, dtype="<i8").tobytes())
        fh.write(np.asarray(ids, dtype="<i8").tobytes())


def read_split(path) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(os.fspath(path), "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a version-{_VERSION} split file")
    expected = _HEADER.size + rows * cols * 8 + rows * 16
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    off = _HEADER.size
    X = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols).astype(np.float64)
    off += rows * cols * 8
    y = np.frombuffer(raw, dtype="<i8", count=rows, offset=off).astype(np.int64)
    ids = np.frombuffer(raw, dtype="<i8", count=rows, offset=off + rows * 8).astype(np.int64)
    return X, y, ids


def save_stream(stream: TaskStream, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t in stream.tasks:
        write_split(d / f"task{t.task_id}_train.bin", t.X_train, t.y_train, t.ids_train)
        write_split(d / f"task{t.task_id}_test.bin", t.X_test, t.y_test, t.ids_test)
    meta = {"kind": stream.kind, "side": stream.side, "meta": stream.meta,
            "tasks": [{"task_id": t.task_id, "classes": list(t.classes)} for t in stream.tasks]}
    (d / "stream.json").write_text(json.dumps(meta, indent=1))
    return d


def load_stream(directory) -> TaskStream:
    d = Path(directory)
    meta_path = d / "stream.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path}: no stream manifest")
    meta = json.loads(meta_path.read_text())
    tasks = []
    for entry in meta["tasks"]:
        tid = entry["task_id"]
        Xtr, ytr, itr = read_split(d / f"task{tid}_train.bin")
        Xte, yte, ite = read_split(d / f"task{tid}_test.bin")
        tasks.append(Task(tid, tuple(entry["classes"]), Xtr, ytr, itr, Xte, yte, ite))
    return TaskStream(tasks, kind=meta["kind"], side=meta["side"], meta=meta.get("meta", {}))
