"""One-hidden-layer ReLU MLP with analytic backprop and Adam, in float64 numpy."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HIDDEN = 500
PARAM_NAMES = ("W1", "b1", "W2", "b2")


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class MlpParams:
    W1: np.ndarray  # hidden x d
    b1: np.ndarray
    W2: np.ndarray  # q x hidden
    b2: np.ndarray

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def q(self) -> int:
        return self.W2.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self) -> "MlpParams":
        return MlpParams(*(a.copy() for a in self.arrays()))

    def zeros_like(self) -> "MlpParams":
        return MlpParams(*(np.zeros_like(a) for a in self.arrays()))


@dataclass
class ForwardCache:
    x: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray


def init_params(d: int, q: int, seed: int, hidden: int = HIDDEN) -> MlpParams:
    """Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero biases."""
    if d < 1 or q < 1:
        raise ValueError("d and q must be positive")
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / d)
    lim2 = np.sqrt(6.0 / hidden)
    return MlpParams(
        W1=rng.uniform(-lim1, lim1, size=(hidden, d)),
        b1=np.zeros(hidden),
        W2=rng.uniform(-lim2, lim2, size=(q, hidden)),
        b2=np.zeros(q),
    )


def forward(params: MlpParams, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d:
        raise ValueError(f"batch must have shape (B, {params.d}), got {x.shape}")
    if not np.isfinite(x).all():
        raise NonFiniteError("non-finite input")
    pre = x @ params.W1.T + params.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ params.W2.T + params.b2
    return logits, ForwardCache(x, pre, hidden)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def backward(params: MlpParams, cache: ForwardCache, dlogits: np.ndarray) -> MlpParams:
    """Gradients of a scalar loss given its derivative w.r.t. the logits.

    ``dlogits`` already carries the batch-mean factor of the loss, so the
    per-row contributions are summed here.
    """
    g = np.asarray(dlogits, dtype=np.float64)
    if g.shape != (cache.x.shape[0], params.q):
        raise ValueError(f"dlogits must have shape {(cache.x.shape[0], params.q)}, got {g.shape}")
    dW2 = g.T @ cache.hidden
    db2 = g.sum(axis=0)
    dh = g @ params.W2
    dh[cache.pre <= 0] = 0.0
    dW1 = dh.T @ cache.x
    db1 = dh.sum(axis=0)
    return MlpParams(dW1, db1, dW2, db2)


@dataclass
class AdamState:
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 1e-3, weight_decay: float = 0.0,
                   **kw) -> "AdamState":
        zeros = [np.zeros_like(a) for a in params.arrays()]
        return cls(lr, weight_decay, m=zeros, v=[z.copy() for z in zeros], **kw)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState) -> tuple[MlpParams, AdamState]:
    """Bias-corrected Adam with L2 weight decay added to the gradient; updates in place and returns both."""
    arrays, gs = params.arrays(), grads.arrays()
    if not state.m:
        state.m = [np.zeros_like(a) for a in arrays]
        state.v = [np.zeros_like(a) for a in arrays]
    for a, g in zip(arrays, gs):
        if a.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {a.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError("non-finite gradient")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for a, g, m, v in zip(arrays, gs, state.m, state.v):
        if state.weight_decay:
            g = g + state.weight_decay * a
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        a -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# -- debug checkpoints -----------------------------------------------------------
# Layout: 8-byte little-endian header length, JSON header, then each array as
# flat little-endian float64 in PARAM_NAMES order.

def save_params(params: MlpParams, path) -> None:
    arrays = params.arrays()
    header = json.dumps({"dtype": "<f8", "order": list(PARAM_NAMES),
                         "shapes": {k: list(a.shape) for k, a in zip(PARAM_NAMES, arrays)}}).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_params(path) -> MlpParams:
    raw = Path(path).read_bytes()
    (hlen,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + hlen])
    offset = 8 + hlen
    out = {}
    for name in header["order"]:
        shape = tuple(header["shapes"][name])
        count = int(np.prod(shape))
        out[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    return MlpParams(**out)
