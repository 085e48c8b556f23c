"""Bag datasets: synthetic generators and file formats.

Bag CSV
    UTF-8, header ``bag_id,label,f1,...,fd`` (an optional ``group`` column may
    follow ``label``).  One row per instance; rows of a bag need not be
    contiguous but keep file order.  Floats are written with ``repr`` so values
    round-trip exactly.

IDX
    Big-endian.  Images: magic ``0x00000803``, count, rows, cols, then
    ``count*rows*cols`` unsigned bytes.  Labels: magic ``0x00000801``, count,
    then ``count`` unsigned bytes.

Manifest
    Flat ``key=value`` text, one pair per line, ``#`` comments allowed.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "Bag",
    "BagDatasetSpec",
    "BagCSVError",
    "InconsistentLabelError",
    "RaggedRowError",
    "NonNumericFeatureError",
    "IdxFormatError",
    "IdxMagicError",
    "IdxTruncatedError",
    "IdxCountMismatchError",
    "PoolExhaustedError",
    "gen_toy",
    "build_bags",
    "load_idx",
    "write_idx",
    "load_digits_pool",
    "load_bag_csv",
    "save_bag_csv",
    "bags_to_csv",
    "read_key_values",
    "write_key_values",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Bag:
    id: str
    instances: np.ndarray
    label: int
    group: str | None = None

    def __post_init__(self):
        self.instances = np.asarray(self.instances, dtype=np.float64)
        if self.instances.ndim != 2 or self.instances.shape[0] < 1:
            raise ValueError(f"bag {self.id!r} needs an (n, d) instance array with n >= 1")
        self.label = int(self.label)

    def __len__(self) -> int:
        return self.instances.shape[0]


@dataclass
class BagDatasetSpec:
    n_bags: int
    size_mean: float
    size_std: float
    positive_cap: float = 0.20
    positive_label: int = 9
    seed: int = 0

    def __post_init__(self):
        if self.n_bags < 1:
            raise ValueError("n_bags must be at least 1")
        if not 0.0 < self.positive_cap <= 1.0:
            raise ValueError(
                f"positive_cap={self.positive_cap} is invalid: a positive bag needs at least one "
                "positive instance, so the cap must lie in (0, 1]"
            )
        if self.size_mean <= 0 or self.size_std < 0:
            raise ValueError("bag size mean must be positive and std nonnegative")


# ---------------------------------------------------------------------------
# generation


def _bag_sizes(rng: np.random.Generator, count: int, mean: float, std: float) -> np.ndarray:
    return np.maximum(np.rint(rng.normal(mean, std, size=count)).astype(np.int64), 2)


def _max_positives(n: int, cap: float) -> int:
    # guard against 0.2 * 10 = 2.0000000000000004
    return max(1, math.ceil(round(cap * n, 9)))


def _labels_balanced(rng: np.random.Generator, n_bags: int) -> np.ndarray:
    labels = np.zeros(n_bags, dtype=np.int64)
    labels[: (n_bags + 1) // 2] = 1
    return rng.permutation(labels)


def gen_toy(
    n_bags: int,
    size_mean: float = 10.0,
    size_std: float = 2.0,
    dim: int = 100,
    seed: int = 0,
    positive_cap: float = 0.20,
) -> list[Bag]:
    """Bags of standard-normal instances; positive bags also hold points on the
    unit sphere (at most ``positive_cap`` of the bag, at least one)."""
    if dim < 2:
        raise ValueError("dim must be at least 2")
    spec = BagDatasetSpec(n_bags, size_mean, size_std, positive_cap, seed=seed)
    rng = np.random.default_rng(seed)
    labels = _labels_balanced(rng, spec.n_bags)
    sizes = _bag_sizes(rng, spec.n_bags, size_mean, size_std)
    bags = []
    for b, (label, n) in enumerate(zip(labels, sizes)):
        x = rng.standard_normal((n, dim))
        if label:
            k = int(rng.integers(1, _max_positives(n, positive_cap) + 1))
            sphere = rng.standard_normal((k, dim))
            sphere /= np.linalg.norm(sphere, axis=1, keepdims=True)
            x[rng.choice(n, size=k, replace=False)] = sphere
        bags.append(Bag(f"bag{b:05d}", x, int(label)))
    return bags


def build_bags(pool_x, pool_y, spec: BagDatasetSpec) -> list[Bag]:
    """Assemble MIL bags from a labelled instance pool.

    Instances whose pool label equals ``spec.positive_label`` are positive.
    Within a bag instances are drawn without replacement; across bags the pool
    is reused.
    """
    x = np.asarray(pool_x, dtype=np.float64)
    y = np.asarray(pool_y)
    pos_idx = np.flatnonzero(y == spec.positive_label)
    neg_idx = np.flatnonzero(y != spec.positive_label)
    if len(pos_idx) == 0 or len(neg_idx) == 0:
        raise ValueError("pool must contain both positive-rule and other instances")

    rng = np.random.default_rng(spec.seed)
    labels = _labels_balanced(rng, spec.n_bags)
    sizes = _bag_sizes(rng, spec.n_bags, spec.size_mean, spec.size_std)
    bags = []
    for b, (label, n) in enumerate(zip(labels, sizes)):
        k = int(rng.integers(1, _max_positives(n, spec.positive_cap) + 1)) if label else 0
        if k > len(pos_idx) or n - k > len(neg_idx):
            raise PoolExhaustedError(f"bag {b} needs {k} positive and {n - k} negative instances; pool too small")
        chosen = np.concatenate(
            [rng.choice(pos_idx, size=k, replace=False), rng.choice(neg_idx, size=n - k, replace=False)]
        )
        chosen = rng.permutation(chosen)
        bags.append(Bag(f"bag{b:05d}", x[chosen], int(label)))
    return bags


class PoolExhaustedError(ValueError):
    pass


def load_digits_pool() -> tuple[np.ndarray, np.ndarray]:
    """The 8x8 handwritten digits bundled with scikit-learn, scaled to [0, 1]."""
    from sklearn.datasets import load_digits

    d = load_digits()
    return d.data.astype(np.float64) / 16.0, d.target.astype(np.int64)


# ---------------------------------------------------------------------------
# IDX


class IdxFormatError(ValueError):
    pass


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


def _read_idx(raw: bytes, magic: int, ndims: int, path) -> np.ndarray:
    header = 4 + 4 * ndims
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file too short for an IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndims}I", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < count:
        raise IdxTruncatedError(f"{path}: payload has {len(raw) - header} bytes, expected {count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read an IDX image/label pair into ``(count, rows*cols)`` pixels in [0, 1] and labels."""
    images = _read_idx(Path(images_path).read_bytes(), IDX_IMAGES_MAGIC, 3, images_path)
    labels = _read_idx(Path(labels_path).read_bytes(), IDX_LABELS_MAGIC, 1, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return images.reshape(images.shape[0], -1).astype(np.float64) / 255.0, labels.astype(np.int64)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be (count, rows, cols)")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


# ---------------------------------------------------------------------------
# bag CSV


class BagCSVError(ValueError):
    pass


class InconsistentLabelError(BagCSVError):
    pass


class RaggedRowError(BagCSVError):
    pass


class NonNumericFeatureError(BagCSVError):
    pass


def load_bag_csv(path) -> list[Bag]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise BagCSVError(f"{path}: empty file") from None
        if header[:2] != ["bag_id", "label"]:
            raise BagCSVError(f"{path}: header must start with bag_id,label")
        has_group = len(header) > 2 and header[2] == "group"
        first = 3 if has_group else 2
        d = len(header) - first
        if d < 1:
            raise BagCSVError(f"{path}: no feature columns")

        rows: dict[str, list[list[float]]] = {}
        labels: dict[str, int] = {}
        groups: dict[str, str | None] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedRowError(f"{path}:{lineno}: {len(row)} fields, header has {len(header)}")
            bag_id = row[0]
            try:
                label = int(row[1])
            except ValueError:
                raise BagCSVError(f"{path}:{lineno}: label {row[1]!r} is not an integer") from None
            try:
                feats = [float(v) for v in row[first:]]
            except ValueError:
                raise NonNumericFeatureError(f"{path}:{lineno}: non-numeric feature value") from None
            if bag_id in labels and labels[bag_id] != label:
                raise InconsistentLabelError(
                    f"{path}:{lineno}: bag {bag_id!r} labelled {label}, earlier rows say {labels[bag_id]}"
                )
            labels[bag_id] = label
            groups.setdefault(bag_id, row[2] if has_group else None)
            rows.setdefault(bag_id, []).append(feats)
    return [Bag(k, np.asarray(v), labels[k], groups[k]) for k, v in rows.items()]


def bags_to_csv(bags: Iterable[Bag]) -> str:
    bags = list(bags)
    if not bags:
        raise ValueError("no bags to write")
    d = bags[0].instances.shape[1]
    has_group = any(b.group is not None for b in bags)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bag_id", "label"] + (["group"] if has_group else []) + [f"f{i + 1}" for i in range(d)])
    for b in bags:
        if b.instances.shape[1] != d:
            raise ValueError(f"bag {b.id!r} has {b.instances.shape[1]} features, expected {d}")
        prefix = [b.id, b.label] + ([b.group or ""] if has_group else [])
        for inst in b.instances:
            w.writerow(prefix + [repr(float(v)) for v in inst])
    return buf.getvalue()


def save_bag_csv(bags: Iterable[Bag], path) -> None:
    Path(path).write_text(bags_to_csv(bags), encoding="utf-8")


# ---------------------------------------------------------------------------
# key=value text


def read_key_values(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key = key.strip()
        if key in out:
            raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def write_key_values(values: Mapping[str, object], path) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in values.items()), encoding="utf-8")
