"""Dataset types, file formats and deterministic splitting for partial-label data."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed dataset files or inconsistent dataset contents."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class CandidateSet:
    """Bitset over class indices ``0..q-1``; bit ``j`` set iff label ``j`` is a candidate."""

    bits: int
    q: int

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be positive")
        if self.bits <= 0:
            raise ValueError("candidate set must be non-empty")
        if self.bits >> self.q:
            raise ValueError(f"candidate bit outside [0, {self.q})")

    @classmethod
    def from_indices(cls, indices, q: int) -> "CandidateSet":
        bits = 0
        for j in indices:
            j = int(j)
            if not 0 <= j < q:
                raise ValueError(f"label {j} outside [0, {q})")
            bits |= 1 << j
        return cls(bits, q)

    @classmethod
    def from_mask(cls, mask) -> "CandidateSet":
        mask = np.asarray(mask, dtype=bool)
        return cls.from_indices(np.flatnonzero(mask), mask.shape[0])

    def __contains__(self, label) -> bool:
        label = int(label)
        return 0 <= label < self.q and bool((self.bits >> label) & 1)

    def __len__(self) -> int:
        return bin(self.bits).count("1")

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices())

    def indices(self) -> list[int]:
        return [j for j in range(self.q) if (self.bits >> j) & 1]

    def to_mask(self) -> np.ndarray:
        return np.array([(self.bits >> j) & 1 for j in range(self.q)], dtype=bool)

    def complement(self) -> list[int]:
        return [j for j in range(self.q) if not (self.bits >> j) & 1]


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    candidates: CandidateSet
    true_label: Optional[int] = None


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PartialDataset:
    """Columnar partial-label dataset.

    ``candidates`` is an ``n x q`` boolean matrix (row ``i`` is the bitset of
    example ``i``), ``true_labels`` uses ``-1`` for a missing label, and
    ``index`` records each row's position in the dataset it was split from.
    Arrays are copied and frozen on construction.
    """

    name: str
    q: int
    d: int
    features: np.ndarray
    candidates: np.ndarray
    true_labels: np.ndarray
    metadata: dict = field(default_factory=dict)
    index: Optional[np.ndarray] = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        cands = np.asarray(self.candidates, dtype=bool)
        labels = np.asarray(self.true_labels, dtype=np.int64)
        n = feats.shape[0] if feats.ndim == 2 else -1
        if self.q < 2:
            raise DatasetError(f"q must be >= 2, got {self.q}")
        if feats.ndim != 2 or feats.shape[1] != self.d:
            raise DatasetError(f"features must have shape (n, {self.d}), got {feats.shape}")
        if cands.shape != (n, self.q):
            raise DatasetError(f"candidates must have shape ({n}, {self.q}), got {cands.shape}")
        if labels.shape != (n,):
            raise DatasetError(f"true_labels must have shape ({n},), got {labels.shape}")
        if n and not cands.any(axis=1).all():
            bad = int(np.flatnonzero(~cands.any(axis=1))[0])
            raise DatasetError(f"example {bad} has an empty candidate set")
        if ((labels < -1) | (labels >= self.q)).any():
            raise DatasetError("true label outside [0, q)")
        idx = np.arange(n) if self.index is None else np.asarray(self.index, dtype=np.int64)
        if idx.shape != (n,):
            raise DatasetError("index length does not match number of examples")
        object.__setattr__(self, "features", _readonly(feats))
        object.__setattr__(self, "candidates", _readonly(cands))
        object.__setattr__(self, "true_labels", _readonly(labels))
        object.__setattr__(self, "index", _readonly(idx))
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def has_labels(self) -> bool:
        return self.n > 0 and bool((self.true_labels >= 0).all())

    @property
    def examples(self) -> list[Example]:
        return [self.example(i) for i in range(self.n)]

    def example(self, i: int) -> Example:
        y = int(self.true_labels[i])
        return Example(self.features[i], CandidateSet.from_mask(self.candidates[i]),
                       None if y < 0 else y)

    def subset(self, rows: Sequence[int], name: Optional[str] = None, **meta) -> "PartialDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return PartialDataset(
            name=name or self.name, q=self.q, d=self.d,
            features=self.features[rows], candidates=self.candidates[rows],
            true_labels=self.true_labels[rows],
            metadata={**self.metadata, **meta}, index=self.index[rows],
        )

    def with_candidates(self, candidates: np.ndarray, **meta) -> "PartialDataset":
        return PartialDataset(self.name, self.q, self.d, self.features, candidates,
                              self.true_labels, {**self.metadata, **meta}, self.index)

    @classmethod
    def from_examples(cls, name: str, q: int, d: int, examples: Sequence[Example],
                      metadata: Optional[dict] = None) -> "PartialDataset":
        feats = np.array([e.features for e in examples], dtype=np.float64).reshape(len(examples), d)
        cands = np.array([e.candidates.to_mask() for e in examples], dtype=bool).reshape(len(examples), q)
        labels = np.array([-1 if e.true_label is None else e.true_label for e in examples], dtype=np.int64)
        return cls(name, q, d, feats, cands, labels, metadata or {})


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if min(fracs) <= 0:
            raise ValueError("split fractions must be positive")
        if not math.isclose(sum(fracs), 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)}")

    def sizes(self, n: int) -> tuple[int, int, int]:
        # round half up, test takes the remainder
        n_train = int(math.floor(self.train_fraction * n + 0.5))
        n_val = int(math.floor(self.val_fraction * n + 0.5))
        return n_train, n_val, n - n_train - n_val


def split(dataset: PartialDataset, spec: SplitSpec):
    """Shuffle with ``spec.seed`` and cut into (train, val, test)."""
    n = dataset.n
    if n == 0:
        raise DatasetError("cannot split an empty dataset")
    n_train, n_val, n_test = spec.sizes(n)
    if min(n_train, n_val, n_test) <= 0:
        raise DatasetError(f"split of n={n} with {spec} leaves an empty subset "
                           f"({n_train}, {n_val}, {n_test})")
    perm = np.random.default_rng(spec.seed).permutation(n)
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(dataset.subset(rows, split=tag)
                 for rows, tag in zip(parts, ("train", "val", "test")))


@dataclass(frozen=True)
class DatasetStats:
    n: int
    d: int
    q: int
    avg_candidates: float
    noise_rate: Optional[float]


def dataset_stats(dataset: PartialDataset) -> DatasetStats:
    sizes = dataset.candidates.sum(axis=1)
    avg = float(sizes.mean()) if dataset.n else 0.0
    labelled = dataset.true_labels >= 0
    noise = None
    if labelled.any():
        rows = np.flatnonzero(labelled)
        covered = dataset.candidates[rows, dataset.true_labels[rows]]
        noise = float(1.0 - covered.mean())
    return DatasetStats(dataset.n, dataset.d, dataset.q, avg, noise)


def fingerprint(dataset: PartialDataset) -> str:
    """Content hash of features, candidate sets and labels."""
    h = hashlib.sha256()
    h.update(f"{dataset.q}:{dataset.d}:{dataset.n}:".encode())
    h.update(np.ascontiguousarray(dataset.features, dtype="<f8").tobytes())
    h.update(np.packbits(dataset.candidates, axis=1).tobytes())
    h.update(np.ascontiguousarray(dataset.true_labels, dtype="<i8").tobytes())
    return h.hexdigest()


# -- file formats ---------------------------------------------------------------

def _as_int(value, what, line):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise DatasetError(f"{what} must be an integer, got {value!r}", line)
    return int(value)


def _parse_row(x, s, y, q, d, base, line):
    if not isinstance(x, list) or len(x) != d:
        got = len(x) if isinstance(x, list) else type(x).__name__
        raise DatasetError(f"expected {d} features, got {got}", line)
    try:
        feats = [float(v) for v in x]
    except (TypeError, ValueError):
        raise DatasetError("non-numeric feature value", line) from None
    if not isinstance(s, list):
        raise DatasetError("candidate list 's' missing", line)
    if not s:
        raise DatasetError("empty candidate set", line)
    mask = [False] * q
    for raw in s:
        j = _as_int(raw, "candidate index", line) - base
        if not 0 <= j < q:
            raise DatasetError(f"candidate label {j + base} out of range for q={q}", line)
        mask[j] = True
    label = -1
    if y is not None:
        label = _as_int(y, "label", line) - base
        if not 0 <= label < q:
            raise DatasetError(f"true label {label + base} out of range for q={q}", line)
    return feats, mask, label


def _load_jsonl(path: Path) -> PartialDataset:
    feats, masks, labels = [], [], []
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
            q, d = int(header["q"]), int(header["d"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
            raise DatasetError(f"bad header: {err}", 1) from None
        base = int(header.get("label_base", 0))
        if base not in (0, 1):
            raise DatasetError("label_base must be 0 or 1", 1)
        for lineno, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as err:
                raise DatasetError(f"invalid JSON: {err.msg}", lineno) from None
            if not isinstance(rec, dict):
                raise DatasetError("record must be an object", lineno)
            f, m, y = _parse_row(rec.get("x"), rec.get("s"), rec.get("y"), q, d, base, lineno)
            feats.append(f)
            masks.append(m)
            labels.append(y)
    name = header.get("name") or path.stem
    return PartialDataset(name, q, d, np.array(feats, dtype=np.float64).reshape(-1, d),
                          np.array(masks, dtype=bool).reshape(-1, q),
                          np.array(labels, dtype=np.int64), header.get("metadata", {}))


def _load_csv(path: Path, q: Optional[int], label_base: int) -> PartialDataset:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-2:] != ["candidates", "y"]:
            raise DatasetError("header must end with 'candidates,y'", 1)
        d = len(header) - 2
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != d + 2:
                raise DatasetError(f"expected {d + 2} fields, got {len(rec)}", lineno)
            try:
                s = [int(t) for t in rec[d].split("|") if t.strip()]
                y = int(rec[d + 1]) if rec[d + 1].strip() else None
            except ValueError:
                raise DatasetError("non-integer label", lineno) from None
            rows.append((lineno, rec[:d], s, y))
    if q is None:
        seen = [j for _, _, s, y in rows for j in s + ([y] if y is not None else [])]
        q = max(seen) - label_base + 1 if seen else 2
    feats, masks, labels = [], [], []
    for lineno, x, s, y in rows:
        f, m, lab = _parse_row(x, s, y, q, d, label_base, lineno)
        feats.append(f)
        masks.append(m)
        labels.append(lab)
    return PartialDataset(path.stem, q, d, np.array(feats, dtype=np.float64).reshape(-1, d),
                          np.array(masks, dtype=bool).reshape(-1, q), np.array(labels, dtype=np.int64))


def load_dataset(path, format: Optional[str] = None, *, q: Optional[int] = None,
                 label_base: int = 0) -> PartialDataset:
    """Read a dataset file.

    ``format`` defaults to the file suffix. The CSV header carries no class
    count, so ``q`` is inferred from the largest label unless given.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "jsonl":
        return _load_jsonl(path)
    if fmt == "csv":
        return _load_csv(path, q, label_base)
    raise ValueError(f"unknown dataset format {fmt!r}")


def save_dataset(dataset: PartialDataset, path, format: Optional[str] = None) -> None:
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "jsonl":
        header = {"q": dataset.q, "d": dataset.d, "name": dataset.name, "label_base": 0}
        if dataset.metadata:
            header["metadata"] = dataset.metadata
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(header) + "\n")
            for i in range(dataset.n):
                y = int(dataset.true_labels[i])
                rec = {"x": dataset.features[i].tolist(),
                       "s": np.flatnonzero(dataset.candidates[i]).tolist(),
                       "y": None if y < 0 else y}
                fh.write(json.dumps(rec) + "\n")
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"f{k}" for k in range(dataset.d)] + ["candidates", "y"])
            for i in range(dataset.n):
                y = int(dataset.true_labels[i])
                writer.writerow([repr(float(v)) for v in dataset.features[i]]
                                + ["|".join(str(j) for j in np.flatnonzero(dataset.candidates[i])),
                                   "" if y < 0 else str(y)])
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
