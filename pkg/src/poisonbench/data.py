"""Dataset ingestion (IDX, CSV, synthetic Gaussians), splitting, poison-set
assembly, and ordering control."""

from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadFractions,
    BadMagic,
    BudgetViolation,
    CountMismatch,
    EmptyClass,
    TruncatedFile,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    """Feature matrix plus integer labels.

    unit_range marks image-scaled data (features nominally in [0,1]); only
    then is the [-0.5, 1.5] clamp-margin invariant enforced and only then do
    attacks clamp poisoned features back into [0,1]. poison_mask records
    provenance after assemble_poisoned. flags carry non-fatal attack notes.
    """

    X: np.ndarray
    y: np.ndarray
    num_classes: int
    unit_range: bool = False
    poison_mask: np.ndarray | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        self.X = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise ValueError(f"features must be n x d with n >= 1, got {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise CountMismatch(f"{self.X.shape[0]} rows but {self.y.shape} labels")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features contain non-finite values")
        if self.y.min() < 0 or self.y.max() >= self.num_classes:
            raise ValueError("labels out of range [0, num_classes)")
        if self.unit_range and (self.X.min() < -0.5 or self.X.max() > 1.5):
            raise ValueError("unit-range dataset outside the [-0.5, 1.5] clamp margin")
        self.X.setflags(write=False)
        self.y.setflags(write=False)
        if self.poison_mask is not None:
            self.poison_mask = np.asarray(self.poison_mask, dtype=bool)
            if self.poison_mask.shape != (self.n,):
                raise CountMismatch("poison mask length does not match dataset")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def take(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        mask = None if self.poison_mask is None else self.poison_mask[idx]
        return LabeledDataset(self.X[idx], self.y[idx], self.num_classes,
                              unit_range=self.unit_range, poison_mask=mask)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.X.tobytes())
        h.update(self.y.tobytes())
        h.update(str(self.num_classes).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class PoisonBudget:
    """Poison fraction epsilon and the derived point count floor(eps * n_tr)."""

    epsilon: float = 0.03
    n_train: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")

    @property
    def count(self) -> int:
        return int(np.floor(self.epsilon * self.n_train))


@dataclass(frozen=True)
class GaussianSpec:
    """Per-class isotropic Gaussian blobs for the 2-D toy and difficulty sweeps."""

    n_per_class: int
    d: int
    class_means: tuple[tuple[float, ...], ...]
    std: float
    seed: int = 0

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("std must be >= 0")
        means = [tuple(m) for m in self.class_means]
        if len(set(means)) != len(means):
            raise ValueError("class means must be distinct")
        for m in means:
            if len(m) != self.d:
                raise ValueError("class mean dimension does not match d")


@dataclass
class OrderingPlan:
    """Training-order control: a permutation over the combined set and
    whether the trainer reshuffles at every epoch."""

    permutation: np.ndarray
    reshuffle_each_epoch: bool = True

    def __post_init__(self):
        perm = np.asarray(self.permutation, dtype=np.int64)
        if np.any(np.sort(perm) != np.arange(perm.size)):
            raise ValueError("permutation is not a bijection")
        self.permutation = perm


def _read_exact(f, count: int, what: str) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise TruncatedFile(f"{what}: wanted {count} bytes, got {len(buf)}")
    return buf


def _open_maybe_gzip(path):
    path = Path(path)
    raw = open(path, "rb")
    head = raw.read(2)
    raw.seek(0)
    if head == b"\x1f\x8b":
        return gzip.open(raw)
    return raw


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Load an IDX image/label pair (the MNIST distribution format).

    Big-endian magic + dims + raw bytes; pixels are scaled by 1/255.
    Gzipped files are handled transparently.
    """
    with _open_maybe_gzip(images_path) as f:
        magic, n_img, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != IDX_IMAGE_MAGIC:
            raise BadMagic(f"image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}")
        pixels = np.frombuffer(_read_exact(f, n_img * rows * cols, "image payload"), dtype=np.uint8)
    with _open_maybe_gzip(labels_path) as f:
        magic, n_lab = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != IDX_LABEL_MAGIC:
            raise BadMagic(f"label magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}")
        labels = np.frombuffer(_read_exact(f, n_lab, "label payload"), dtype=np.uint8)
    if n_img != n_lab:
        raise CountMismatch(f"{n_img} images but {n_lab} labels")
    X = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    return LabeledDataset(X, labels.astype(np.int64), num_classes=10, unit_range=True)


def load_csv(path, num_classes: int | None = None, unit_range: bool = False) -> LabeledDataset:
    """CSV with a header row and a `label` column; remaining columns are features."""
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        if "label" not in header:
            raise CountMismatch("CSV header has no `label` column")
        label_col = header.index("label")
        rows = np.loadtxt(f, delimiter=",", ndmin=2)
    y = rows[:, label_col].astype(np.int64)
    X = np.delete(rows, label_col, axis=1)
    mask = None
    if "poison" in header:
        # provenance column written by save_csv; it is not a feature
        pcol = header.index("poison")
        pcol_in_x = pcol if pcol < label_col else pcol - 1
        mask = X[:, pcol_in_x].astype(bool)
        X = np.delete(X, pcol_in_x, axis=1)
    C = num_classes if num_classes is not None else int(y.max()) + 1
    return LabeledDataset(X, y, C, unit_range=unit_range, poison_mask=mask)


def save_csv(ds: LabeledDataset, path) -> None:
    """Write `label`, optional `poison` provenance, then feature columns."""
    cols = ["label"]
    if ds.poison_mask is not None:
        cols.append("poison")
    cols += [f"f{i}" for i in range(ds.d)]
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(cols) + "\n")
        for i in range(ds.n):
            parts = [str(int(ds.y[i]))]
            if ds.poison_mask is not None:
                parts.append(str(int(ds.poison_mask[i])))
            parts += [repr(float(v)) for v in ds.X[i]]
            f.write(",".join(parts) + "\n")


def make_binary_subset(ds: LabeledDataset, class_a: int, class_b: int) -> LabeledDataset:
    """Keep only two classes and remap labels to {0, 1} (a -> 0, b -> 1)."""
    sel_a = ds.y == class_a
    sel_b = ds.y == class_b
    if not sel_a.any() or not sel_b.any():
        raise EmptyClass(f"classes ({class_a}, {class_b}) not both present")
    keep = sel_a | sel_b
    y = np.where(ds.y[keep] == class_b, 1, 0)
    return LabeledDataset(ds.X[keep], y, 2, unit_range=ds.unit_range)


def synth_gaussian(spec: GaussianSpec) -> LabeledDataset:
    """Per-class i.i.d. N(mean, std^2 I), clipped to a wide finite range."""
    rng = np.random.default_rng(spec.seed)
    blocks, labels = [], []
    for c, mean in enumerate(spec.class_means):
        pts = rng.normal(loc=np.asarray(mean, dtype=np.float64), scale=spec.std,
                         size=(spec.n_per_class, spec.d))
        blocks.append(pts)
        labels.append(np.full(spec.n_per_class, c, dtype=np.int64))
    X = np.clip(np.vstack(blocks), -1e6, 1e6)
    return LabeledDataset(X, np.concatenate(labels), len(spec.class_means))


def split(ds: LabeledDataset, fractions, seed: int) -> tuple[LabeledDataset, ...]:
    """Seeded shuffle, then partition into len(fractions) disjoint covering parts."""
    fractions = [float(f) for f in fractions]
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise BadFractions(f"fractions {fractions} must be nonnegative and sum to 1")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    bounds = np.cumsum([int(round(f * ds.n)) for f in fractions[:-1]])
    parts = np.split(perm, bounds)
    return tuple(ds.take(p) if p.size else _empty_like(ds) for p in parts)


def _empty_like(ds: LabeledDataset) -> LabeledDataset:
    # n >= 1 is a dataset invariant; an empty split part is represented as None
    # by callers, but split keeps arity stable with a 0-row sentinel bypass.
    out = LabeledDataset.__new__(LabeledDataset)
    out.X = np.zeros((0, ds.d))
    out.y = np.zeros(0, dtype=np.int64)
    out.num_classes = ds.num_classes
    out.unit_range = ds.unit_range
    out.poison_mask = None
    out.flags = ()
    return out


def assemble_poisoned(train: LabeledDataset, poison: LabeledDataset | None,
                      budget: PoisonBudget, *, seed: int = 0,
                      poison_last: bool = False,
                      reshuffle: bool = True) -> tuple[LabeledDataset, OrderingPlan]:
    """Concatenate train with the poison set and return it with a provenance
    mask and an OrderingPlan.

    Default plan is a seeded shuffle with per-epoch reshuffling; poison_last
    pins the poisoned rows after the clean rows with no reshuffle (the
    ordering-attack setting).
    """
    n_p = 0 if poison is None else poison.n
    if n_p != budget.count:
        raise BudgetViolation(f"|D_p| = {n_p} but budget requires {budget.count}")
    if n_p == 0:
        union = LabeledDataset(train.X, train.y, train.num_classes,
                               unit_range=train.unit_range,
                               poison_mask=np.zeros(train.n, dtype=bool))
    else:
        if poison.d != train.d or poison.num_classes != train.num_classes:
            raise BudgetViolation("poison set shape does not match the training set")
        union = LabeledDataset(np.vstack([train.X, poison.X]),
                               np.concatenate([train.y, poison.y]),
                               train.num_classes, unit_range=train.unit_range,
                               poison_mask=np.concatenate([np.zeros(train.n, dtype=bool),
                                                           np.ones(n_p, dtype=bool)]))
    if poison_last:
        plan = OrderingPlan(np.arange(union.n), reshuffle_each_epoch=False)
    else:
        rng = np.random.default_rng(seed)
        plan = OrderingPlan(rng.permutation(union.n), reshuffle_each_epoch=reshuffle)
    return union, plan


def clamp_unit(X: np.ndarray) -> np.ndarray:
    """Project features onto the valid pixel box [0, 1]."""
    return np.clip(X, 0.0, 1.0)
