"""Candidate-set generation (USS / FPS) and Gaussian-mixture sources with exact posteriors."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import log_softmax, softmax
from scipy.stats import norm

from .core import CandidateSet, DatasetError, PartialDataset

# -- counter-based uniforms ----------------------------------------------------
# Each example draws from a stream keyed by (seed, example index), so generation
# does not depend on processing order or chunking.

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniforms(seed: int, rows, n_cols: int, round_: int = 0) -> np.ndarray:
    """Uniform[0,1) matrix ``len(rows) x n_cols``; entry (i, j) depends only on (seed, rows[i], j, round_)."""
    with np.errstate(over="ignore"):
        key = _splitmix(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
        key = _splitmix(key ^ np.uint64(round_ + 1))
        r = _splitmix(np.asarray(rows, dtype=np.uint64) ^ key)
        # a plain splitmix64 stream per row, started at the hashed row key
        z = _splitmix(r[:, None] + np.arange(n_cols, dtype=np.uint64)[None, :] * _GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


# -- generation models -----------------------------------------------------------

@dataclass(frozen=True)
class GenerationModel:
    """Instance-independent candidate generation.

    ``kind`` is ``"uss"`` or ``"fps"``. For FPS, ``flip`` is either a scalar
    (constant flipping probability) or a ``q x q`` matrix whose entry
    ``[y, m]`` is the probability that ``m`` joins the set of a class-``y``
    example; its diagonal is ignored. ``uss_exclude`` picks which of the
    ``2^(q-1)`` sets containing ``y`` USS never produces: ``"full"`` (the
    whole label set) or ``"singleton"`` (``{y}``).
    """

    kind: str
    flip: Union[float, tuple, None] = None
    seed: int = 0
    uss_exclude: str = "full"

    def __post_init__(self):
        if self.kind not in ("uss", "fps"):
            raise ValueError(f"unknown generation kind {self.kind!r}")
        if self.uss_exclude not in ("full", "singleton"):
            raise ValueError("uss_exclude must be 'full' or 'singleton'")
        if self.kind == "fps":
            if self.flip is None:
                raise ValueError("FPS needs a flipping probability")
            if np.ndim(self.flip) == 0:
                c = float(self.flip)
                if not 0.0 <= c < 1.0:
                    raise ValueError("constant flip probability must lie in [0, 1)")
                object.__setattr__(self, "flip", c)
            else:
                m = np.asarray(self.flip, dtype=np.float64)
                if m.ndim != 2 or m.shape[0] != m.shape[1]:
                    raise ValueError("flip matrix must be square")
                off = m[~np.eye(m.shape[0], dtype=bool)]
                if ((off < 0) | (off > 1)).any():
                    raise ValueError("flip probabilities must lie in [0, 1]")
                object.__setattr__(self, "flip", tuple(map(tuple, m.tolist())))

    @classmethod
    def uss(cls, seed: int = 0, exclude: str = "full") -> "GenerationModel":
        return cls("uss", None, seed, exclude)

    @classmethod
    def fps(cls, flip, seed: int = 0) -> "GenerationModel":
        return cls("fps", flip, seed)

    @property
    def is_constant(self) -> bool:
        return self.kind == "uss" or np.ndim(self.flip) == 0

    def flip_matrix(self, q: int) -> np.ndarray:
        if self.kind != "fps":
            raise ValueError("flip matrix is defined for FPS only")
        if np.ndim(self.flip) == 0:
            m = np.full((q, q), self.flip)
        else:
            m = np.array(self.flip, dtype=np.float64)
            if m.shape != (q, q):
                raise ValueError(f"flip matrix is {m.shape}, expected ({q}, {q})")
        np.fill_diagonal(m, 1.0)
        return m

    def to_json(self) -> dict:
        flip = self.flip if np.ndim(self.flip) == 0 else [list(r) for r in self.flip]
        out = {"kind": self.kind, "flip": flip, "seed": self.seed}
        if self.kind == "uss":
            out["exclude"] = self.uss_exclude
        return out

    @classmethod
    def from_json(cls, obj) -> "GenerationModel":
        if isinstance(obj, str):
            obj = json.loads(obj)
        flip = obj.get("flip")
        if isinstance(flip, list):
            flip = tuple(map(tuple, flip))
        return cls(obj["kind"], flip, int(obj.get("seed", 0)), obj.get("exclude", "full"))


def _uss_excluded(bits: np.ndarray, y: np.ndarray, exclude: str) -> np.ndarray:
    """Rows of ``bits`` equal to the pattern USS never produces."""
    q = bits.shape[1]
    n_in = bits.sum(axis=1)
    if exclude == "full":
        return n_in == q
    return n_in == 1  # only y itself


def generate_candidates_uss(true_label: int, q: int, rng: np.random.Generator,
                            exclude: str = "full") -> CandidateSet:
    """One USS draw: uniform over the ``2^(q-1) - 1`` supported sets containing ``true_label``."""
    if q < 2:
        raise ValueError("q must be >= 2")
    while True:
        bits = rng.random(q) < 0.5
        bits[true_label] = True
        if not _uss_excluded(bits[None, :], np.array([true_label]), exclude)[0]:
            return CandidateSet.from_mask(bits)


def generate_candidates_fps(true_label: int, q: int, model: GenerationModel,
                            rng: np.random.Generator) -> CandidateSet:
    if model.kind != "fps":
        raise ValueError("generate_candidates_fps needs an FPS model")
    probs = model.flip_matrix(q)[true_label]
    bits = rng.random(q) < probs
    bits[true_label] = True
    return CandidateSet.from_mask(bits)


def generate_candidate_masks(labels, q: int, model: GenerationModel, rows=None) -> np.ndarray:
    """Vectorised generation for many examples.

    ``rows`` are the example indices that key each example's random stream
    (defaults to ``0..n-1``); returns an ``n x q`` boolean mask.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    rows = np.arange(n) if rows is None else np.asarray(rows)
    if model.kind == "fps":
        u = counter_uniforms(model.seed, rows, q)
        bits = u < model.flip_matrix(q)[labels]
        bits[np.arange(n), labels] = True
        return bits
    bits = np.empty((n, q), dtype=bool)
    todo = np.arange(n)
    round_ = 0
    while todo.size:
        u = counter_uniforms(model.seed, rows[todo], q, round_)
        trial = u < 0.5
        trial[np.arange(todo.size), labels[todo]] = True
        bad = _uss_excluded(trial, labels[todo], model.uss_exclude)
        bits[todo[~bad]] = trial[~bad]
        todo = todo[bad]
        round_ += 1
    return bits


def apply_generation(dataset: PartialDataset, model: GenerationModel) -> PartialDataset:
    """Replace every example's candidates with a generated set; the true label stays hidden alongside."""
    if not dataset.has_labels:
        raise DatasetError("apply_generation needs a true label on every example")
    masks = generate_candidate_masks(dataset.true_labels, dataset.q, model, dataset.index)
    return dataset.with_candidates(masks, generation=model.to_json())


def estimate_flip_matrix(dataset: PartialDataset) -> np.ndarray:
    """Empirical ``p(j in S | y = i)``; rows of unseen classes are NaN."""
    labelled = dataset.true_labels >= 0
    if not labelled.any():
        raise DatasetError("estimate_flip_matrix needs true labels")
    y = dataset.true_labels[labelled]
    cands = dataset.candidates[labelled].astype(np.float64)
    counts = np.bincount(y, minlength=dataset.q).astype(np.float64)
    sums = np.zeros((dataset.q, dataset.q))
    np.add.at(sums, y, cands)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = sums / counts[:, None]
    out[counts == 0] = np.nan
    return out


def ambiguity_degree(model: GenerationModel, q: int) -> float:
    """Largest probability that one specific wrong label lands in the set."""
    if model.kind == "uss":
        total = 2 ** (q - 1) - 1
        both = 2 ** (q - 2) - 1 if model.uss_exclude == "full" else 2 ** (q - 2)
        return both / total
    m = model.flip_matrix(q)
    return float(m[~np.eye(q, dtype=bool)].max())


def set_distribution(model: GenerationModel, q: int) -> np.ndarray:
    """Exact ``p(S | y)`` as a ``q x 2^q`` table; column ``b`` is the set with bitmask ``b``."""
    table = np.zeros((q, 2 ** q))
    masks = np.array(list(itertools.product([0, 1], repeat=q)), dtype=bool)[:, ::-1]
    bitvals = (masks * (1 << np.arange(q))).sum(axis=1)
    for y in range(q):
        has_y = masks[:, y]
        if model.kind == "uss":
            support = has_y & ~_uss_excluded(masks, np.full(len(masks), y), model.uss_exclude)
            table[y, bitvals[support]] = 1.0 / (2 ** (q - 1) - 1)
        else:
            p = model.flip_matrix(q)[y]
            probs = np.where(masks, p, 1.0 - p)
            probs[:, y] = np.where(has_y, 1.0, 0.0)
            table[y, bitvals] = probs.prod(axis=1)
    return table


def factorizes(model: GenerationModel, q: int, atol: float = 1e-12) -> bool:
    """Brute-force check that ``p(S|y) = C(S) * I(y in S)`` for some ``C``."""
    table = set_distribution(model, q)
    for b in range(1, 2 ** q):
        members = [y for y in range(q) if (b >> y) & 1]
        outside = [y for y in range(q) if not (b >> y) & 1]
        if outside and np.abs(table[outside, b]).max() > atol:
            return False
        vals = table[members, b]
        if vals.max() - vals.min() > atol:
            return False
    return True


# -- synthetic feature sources -------------------------------------------------

@dataclass(frozen=True)
class SyntheticSource:
    """Isotropic Gaussian mixture: class ``k`` ~ N(means[k], sigma2 * I) with prior ``priors[k]``."""

    means: tuple
    sigma2: float = 1.0
    priors: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        q = mu.shape[0]
        pri = np.full(q, 1.0 / q) if self.priors is None else np.asarray(self.priors, dtype=np.float64)
        if q < 2:
            raise ValueError("need at least two components")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if pri.shape != (q,) or (pri < 0).any() or not np.isclose(pri.sum(), 1.0):
            raise ValueError("priors must be a probability vector over components")
        object.__setattr__(self, "means", tuple(map(tuple, mu.tolist())))
        object.__setattr__(self, "priors", tuple(pri.tolist()))

    @property
    def q(self) -> int:
        return len(self.means)

    @property
    def d(self) -> int:
        return len(self.means[0])

    @classmethod
    def collinear(cls, q: int, d: int = 2, spacing: float = 4.0, sigma2: float = 1.0,
                  seed: int = 0) -> "SyntheticSource":
        """Equal-prior components spaced ``spacing`` apart along the first axis."""
        mu = np.zeros((q, d))
        mu[:, 0] = spacing * (np.arange(q) - (q - 1) / 2)
        return cls(tuple(map(tuple, mu)), sigma2, None, seed)

    @classmethod
    def random(cls, q: int, d: int, scale: float = 2.0, sigma2: float = 1.0,
               seed: int = 0) -> "SyntheticSource":
        mu = np.random.default_rng(seed).normal(scale=scale, size=(q, d))
        return cls(tuple(map(tuple, mu)), sigma2, None, seed)

    def posterior(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mu = np.asarray(self.means)
        sq = ((x[:, None, :] - mu[None, :, :]) ** 2).sum(axis=2)
        with np.errstate(divide="ignore"):
            scores = np.log(np.asarray(self.priors)) - sq / (2.0 * self.sigma2)
        return softmax(scores, axis=1)

    def log_posterior(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mu = np.asarray(self.means)
        sq = ((x[:, None, :] - mu[None, :, :]) ** 2).sum(axis=2)
        with np.errstate(divide="ignore"):
            return log_softmax(np.log(np.asarray(self.priors)) - sq / (2.0 * self.sigma2), axis=1)

    def sample(self, n: int, seed: Optional[int] = None):
        rng = np.random.default_rng(self.seed if seed is None else seed)
        y = rng.choice(self.q, size=n, p=np.asarray(self.priors))
        x = np.asarray(self.means)[y] + rng.normal(scale=np.sqrt(self.sigma2), size=(n, self.d))
        return x, y

    def is_collinear_equal_prior(self) -> bool:
        mu = np.asarray(self.means)
        if not np.allclose(self.priors, 1.0 / self.q) or not np.allclose(mu[:, 1:], mu[0, 1:]):
            return False
        gaps = np.diff(np.sort(mu[:, 0]))
        return bool(np.allclose(gaps, gaps[0]) and gaps[0] > 0)

    def bayes_accuracy(self, n_mc: int = 1_000_000, seed: int = 12345) -> float:
        """Accuracy of the Bayes classifier.

        Closed form for equally spaced collinear equal-prior components
        (decision boundaries sit at the midpoints); Monte Carlo otherwise.
        """
        if self.is_collinear_equal_prior():
            gap = float(np.diff(np.sort(np.asarray(self.means)[:, 0]))[0])
            a = norm.cdf(gap / (2.0 * np.sqrt(self.sigma2)))
            q = self.q
            return float((2 * a + (q - 2) * (2 * a - 1)) / q)
        x, y = self.sample(n_mc, seed)
        return float((np.argmax(self.posterior(x), axis=1) == y).mean())

    def to_dataset(self, n: int, name: str = "gmm", seed: Optional[int] = None) -> PartialDataset:
        """Fully supervised dataset (singleton candidate sets)."""
        x, y = self.sample(n, seed)
        cands = np.zeros((n, self.q), dtype=bool)
        cands[np.arange(n), y] = True
        meta = {"source": {"kind": "gaussian_mixture", "means": [list(m) for m in self.means],
                           "sigma2": self.sigma2, "priors": list(self.priors),
                           "seed": self.seed if seed is None else seed}}
        return PartialDataset(name, self.q, self.d, x, cands, y, meta)


def sample_synthetic(source: SyntheticSource, n: int,
                     seed: Optional[int] = None) -> tuple[np.ndarray, np.ndarray, Callable]:
    """``n`` i.i.d. draws plus the exact posterior function of the mixture."""
    x, y = source.sample(n, seed)
    return x, y, source.posterior
