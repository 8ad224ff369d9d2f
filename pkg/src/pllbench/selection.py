"""Validation criteria computed from partial labels, and the checkpoint / configuration selection rules."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

FLOOR = 1e-12


class Criterion(str, enum.Enum):
    CR = "cr"
    AA = "aa"
    OA = "oa"
    OA_ES = "oa-es"

    @property
    def needs_labels(self) -> bool:
        return self in (Criterion.OA, Criterion.OA_ES)

    @property
    def field(self) -> str:
        return {"cr": "cr", "aa": "aa", "oa": "oa", "oa-es": "oa"}[self.value]

    @classmethod
    def parse(cls, value) -> "Criterion":
        if isinstance(value, cls):
            return value
        v = str(value).lower().replace("_", "-")
        return cls(v)


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class CheckpointRecord:
    iteration: int
    cr: float
    aa: float
    oa: Optional[float]
    test_accuracy: float

    def to_json(self) -> dict:
        return {"iter": self.iteration, "cr": self.cr, "aa": self.aa, "oa": self.oa,
                "test_acc": self.test_accuracy}

    @classmethod
    def from_json(cls, obj: dict) -> "CheckpointRecord":
        oa = obj.get("oa")
        return cls(int(obj["iter"]), float(obj["cr"]), float(obj["aa"]),
                   None if oa is None else float(oa), float(obj["test_acc"]))

    def value(self, criterion: Criterion) -> float:
        v = getattr(self, criterion.field)
        if v is None:
            raise SelectionError(f"criterion {criterion.value} needs validation true labels")
        return v


def _as_masks(candidates) -> np.ndarray:
    if isinstance(candidates, np.ndarray) and candidates.dtype == bool and candidates.ndim == 2:
        return candidates
    sets = list(candidates)
    if sets and hasattr(sets[0], "to_mask"):
        return np.array([s.to_mask() for s in sets], dtype=bool)
    return np.asarray(sets, dtype=bool)


def covering_rate(preds, candidates) -> float:
    """Fraction of examples whose predicted label is one of their candidates."""
    preds = np.asarray(preds, dtype=np.int64)
    masks = _as_masks(candidates)
    if preds.shape[0] == 0:
        raise SelectionError("covering rate of an empty set is undefined")
    if masks.shape[0] != preds.shape[0]:
        raise SelectionError("predictions and candidate sets differ in length")
    return float(masks[np.arange(preds.shape[0]), preds].mean())


def approximated_accuracy(probs, candidates) -> float:
    """Candidate-renormalised probability of the predicted label, zero when it falls outside the set."""
    p = np.asarray(probs, dtype=np.float64)
    masks = _as_masks(candidates)
    n = p.shape[0]
    if n == 0:
        raise SelectionError("approximated accuracy of an empty set is undefined")
    pred = np.argmax(p, axis=1)
    rows = np.arange(n)
    mass = (p * masks).sum(axis=1)
    hit = masks[rows, pred] & (mass >= FLOOR)
    contrib = np.where(hit, p[rows, pred] / np.maximum(mass, FLOOR), 0.0)
    return float(contrib.mean())


def oracle_accuracy(preds, true_labels) -> float:
    preds = np.asarray(preds, dtype=np.int64)
    if true_labels is None:
        raise SelectionError("oracle accuracy needs true labels")
    y = np.asarray(true_labels, dtype=np.int64)
    if y.shape != preds.shape:
        raise SelectionError("predictions and labels differ in length")
    if (y < 0).any():
        raise SelectionError("oracle accuracy needs a true label for every example")
    if preds.shape[0] == 0:
        raise SelectionError("oracle accuracy of an empty set is undefined")
    return float((preds == y).mean())


def _score(record, criterion):
    if record is None:
        return -math.inf
    return record.value(criterion)


def select_checkpoint(criterion, history: Sequence[CheckpointRecord],
                      final_only: bool = False) -> CheckpointRecord:
    """Pick one checkpoint of a run.

    OA may look at the final checkpoint only; CR, AA and OA-ES take the best
    one, earliest on ties. ``final_only`` applies the OA restriction to every
    criterion.
    """
    criterion = Criterion.parse(criterion)
    if len(history) == 0:
        raise SelectionError("empty checkpoint history")
    if criterion is Criterion.OA or final_only:
        last = history[len(history) - 1]
        last.value(criterion)
        return last
    best, best_v = None, -math.inf
    for rec in history:
        v = rec.value(criterion)
        if best is None or v > best_v:
            best, best_v = rec, v
    return best


def select_config(criterion, runs: Sequence, final_only: bool = False):
    """Best configuration by its selected checkpoint; ties go to the lower index.

    ``runs`` holds ``(config, history)`` pairs. A run with an empty history
    (e.g. diverged before the first evaluation) scores -inf. Returns
    ``(config, test_accuracy of its selected checkpoint)``.
    """
    criterion = Criterion.parse(criterion)
    if len(runs) == 0:
        raise SelectionError("no runs to select from")
    best, best_ck, best_v = None, None, -math.inf
    for config, history in runs:
        ck = select_checkpoint(criterion, history, final_only) if len(history) else None
        v = _score(ck, criterion)
        if best is None or v > best_v:
            best, best_ck, best_v = config, ck, v
    if best_ck is None:
        raise SelectionError("no run produced a checkpoint")
    return best, best_ck.test_accuracy
