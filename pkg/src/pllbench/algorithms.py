"""PLL and CLL training rules: per-batch loss with its logit gradient, plus optional per-example state.

Every algorithm is driven the same way by the trainer::

    state = make_initial_state(spec, train_candidates, batch_size)
    loss, dlogits = loss_and_grad(spec, probs, logits, cands, state, idx)
    ...optimizer step...
    update_state(spec, probs_after, cands, state, idx)

CLL rules treat every label outside the candidate set as a complementary
label and average the per-complementary-label loss over them. Rows whose
candidate set is the full label set carry no complementary information and
contribute zero to the CLL and generation-based estimators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, logsumexp

from .nn import log_softmax, softmax

FLOOR = 1e-12

ALGORITHMS = (
    "proden", "cavl", "pop", "abs_mae", "abs_gce", "exp", "mcl_gce", "mcl_mse", "cc", "lws",
    "pc", "forward", "nn", "ga", "scl_exp", "scl_nl", "l_w", "op_w",
)
IDENTIFICATION = ("proden", "cavl", "pop")
CLL = ("pc", "forward", "nn", "ga", "scl_exp", "scl_nl", "l_w", "op_w")

DEFAULT_HPARAMS = {
    "abs_gce": {"rho": 0.7},
    "mcl_gce": {"rho": 0.7},
    "lws": {"leverage": 2},
    "pop": {"window": 5, "warmup": 20, "theta": 1e-3, "inc": 1e-3},
}


@dataclass(frozen=True)
class AlgorithmSpec:
    id: str
    hparams: dict = field(default_factory=dict)

    def __post_init__(self):
        alg = self.id.lower().replace("-", "_")
        if alg not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.id!r}")
        hp = {**DEFAULT_HPARAMS.get(alg, {}), **self.hparams}
        object.__setattr__(self, "id", alg)
        object.__setattr__(self, "hparams", hp)
        _validate(alg, hp)

    def to_json(self) -> dict:
        return {"id": self.id, "hparams": dict(sorted(self.hparams.items()))}


def _validate(alg, hp):
    if alg in ("abs_gce", "mcl_gce") and not 0 < hp["rho"] <= 1:
        raise ValueError(f"GCE exponent rho must lie in (0, 1], got {hp['rho']}")
    if alg == "lws" and hp["leverage"] not in (1, 2):
        raise ValueError(f"LWS leverage must be 1 or 2, got {hp['leverage']}")
    if alg == "pop":
        if int(hp["window"]) < 1 or int(hp["warmup"]) < 0:
            raise ValueError("POP window must be >= 1 and warm-up >= 0")
        if not 0 < hp["theta"] <= 1 or hp["inc"] < 0:
            raise ValueError("POP threshold must lie in (0, 1] and step size be >= 0")


@dataclass
class AlgorithmState:
    """Per-run mutable state; ``confidence`` and ``mask`` are indexed by training-example position."""

    confidence: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    record: Optional[np.ndarray] = None
    theta: float = 0.0
    step: int = 0
    steps_per_epoch: int = 1


def make_initial_state(spec: AlgorithmSpec, candidates, batch_size: Optional[int] = None) -> AlgorithmState:
    """Uniform-over-candidates confidences for the identification rules, uniform-over-labels for LWS."""
    cands = np.asarray(getattr(candidates, "candidates", candidates), dtype=bool)
    n, q = cands.shape
    if spec.id in IDENTIFICATION:
        conf = cands / cands.sum(axis=1, keepdims=True)
        state = AlgorithmState(confidence=conf)
        if spec.id == "pop":
            hp = spec.hparams
            state.mask = cands.copy()
            state.record = np.zeros((int(hp["window"]), n, q))
            state.theta = float(hp["theta"])
            state.steps_per_epoch = max(1, -(-n // (batch_size or n)))
        return state
    if spec.id == "lws":
        return AlgorithmState(confidence=np.full((n, q), 1.0 / q))
    return AlgorithmState()


# -- helpers ---------------------------------------------------------------------

def _through_softmax(p, a):
    """Logit gradient from ``a = p * dL/dp`` (keeps p**(rho-1) style terms finite)."""
    return a - p * a.sum(axis=1, keepdims=True)


def _complement_weights(cands):
    comp = ~cands
    k = comp.sum(axis=1, keepdims=True)
    return np.where(k > 0, comp / np.maximum(k, 1), 0.0)


def _mcl_coefficients(cands):
    """+1 on candidates, -(|S|-1)/|S-bar| on non-candidates; zero rows when S is the full set."""
    q = cands.shape[1]
    size = cands.sum(axis=1, keepdims=True)
    comp = q - size
    neg = -(size - 1) / np.maximum(comp, 1)
    coef = np.where(cands, 1.0, neg)
    return np.where(comp > 0, coef, 0.0)


# -- PLL losses ------------------------------------------------------------------

def _weighted_ce(p, g, cands, state, idx):
    w = state.confidence[idx]
    B = g.shape[0]
    loss = -(w * log_softmax(g)).sum() / B
    grad = (p * w.sum(axis=1, keepdims=True) - w) / B
    return loss, grad


def _abs_mae(p, g, cands, hp):
    B = g.shape[0]
    size = cands.sum(axis=1, keepdims=True)
    loss = (2.0 * (1.0 - p) * cands / size).sum() / B
    return loss, _through_softmax(p, -2.0 * p * cands / size) / B


def _abs_gce(p, g, cands, hp):
    rho = hp["rho"]
    B = g.shape[0]
    size = cands.sum(axis=1, keepdims=True)
    pr = p ** rho
    loss = ((1.0 - pr) / rho * cands / size).sum() / B
    return loss, _through_softmax(p, -pr * cands / size) / B


def _cc(p, g, cands, hp):
    B = g.shape[0]
    masked = np.where(cands, g, -np.inf)
    lse_s = logsumexp(masked, axis=1)
    loss = (logsumexp(g, axis=1) - lse_s).sum() / B
    p_s = np.where(cands, np.exp(masked - lse_s[:, None]), 0.0)
    return loss, (p - p_s) / B


def _exp(p, g, cands, hp):
    B, q = g.shape
    comp = q - cands.sum(axis=1)
    coef = np.where(comp > 0, (q - 1) / np.maximum(comp, 1), 0.0)
    e = np.exp(-(p * cands).sum(axis=1))
    loss = (coef * e).sum() / B
    a = -p * cands * (coef * e)[:, None]
    return loss, _through_softmax(p, a) / B


def _mcl_gce(p, g, cands, hp):
    rho = hp["rho"]
    B = g.shape[0]
    c = _mcl_coefficients(cands)
    pr = p ** rho
    loss = (c * (1.0 - pr) / rho).sum() / B
    return loss, _through_softmax(p, -c * pr) / B


def _mcl_mse(p, g, cands, hp):
    B = g.shape[0]
    c = _mcl_coefficients(cands)
    total = c.sum(axis=1, keepdims=True)
    sq = (p * p).sum(axis=1, keepdims=True)
    loss = (c * (sq - 2.0 * p + 1.0)).sum() / B
    a = p * (2.0 * p * total - 2.0 * c)
    return loss, _through_softmax(p, a) / B


def _lws(p, g, cands, state, idx, hp):
    beta = hp["leverage"]
    w = state.confidence[idx]
    B = g.shape[0]
    s_pos, s_neg = expit(g), expit(-g)
    loss = ((w * cands * s_neg).sum() + beta * (w * ~cands * s_pos).sum()) / B
    deriv = s_pos * s_neg
    grad = (-w * cands * deriv + beta * w * ~cands * deriv) / B
    return loss, grad


# -- CLL losses (per complementary label, averaged over the complement) -----------

def _pc(p, g, cands, hp):
    B, q = g.shape
    C = _complement_weights(cands)
    D = expit(g[:, :, None] - g[:, None, :])  # D[i, ybar, k] = sigmoid(g_ybar - g_k)
    per = (q - 1) * D.sum(axis=2) - q * (q - 1) / 2 + (q - 1)
    loss = (C * per).sum() / B
    Dp = D * (1.0 - D)
    grad = (q - 1) * (C * Dp.sum(axis=2) - np.einsum("iy,iyk->ik", C, Dp))
    return loss, grad / B


def _forward(p, g, cands, hp):
    B, q = g.shape
    C = _complement_weights(cands)
    T = (1.0 - np.eye(q)) / (q - 1)
    t = p @ T
    ok = t > FLOOR
    loss = (C * -np.log(np.maximum(t, FLOOR))).sum() / B
    dt = np.where(ok, -C / np.maximum(t, FLOOR), 0.0)
    dp = dt @ T.T
    return loss, _through_softmax(p, p * dp) / B


def _scl_exp(p, g, cands, hp):
    B = g.shape[0]
    C = _complement_weights(cands)
    e = np.exp(p)
    return (C * e).sum() / B, _through_softmax(p, C * p * e) / B


def _scl_nl(p, g, cands, hp):
    B = g.shape[0]
    C = _complement_weights(cands)
    rest = 1.0 - p
    ok = rest > FLOOR
    loss = (C * -np.log(np.maximum(rest, FLOOR))).sum() / B
    a = np.where(ok, C * p / np.maximum(rest, FLOOR), 0.0)
    return loss, _through_softmax(p, a) / B


def _l_w(p, g, cands, hp):
    B, q = g.shape
    C = _complement_weights(cands)
    q1 = 1.0 - p
    u = log_softmax(q1)
    qs = np.exp(u)
    w = q1 / (q - 1)
    loss = (C * -(1.0 + w) * u).sum() / B
    cw = C * (1.0 + w)
    dp = C * u / (q - 1) + cw - qs * cw.sum(axis=1, keepdims=True)
    return loss, _through_softmax(p, p * dp) / B


def _op_w(p, g, cands, hp):
    B, q = g.shape
    C = _complement_weights(cands)
    r = log_softmax(-g)
    neg = np.exp(r)
    w = (1.0 - p) / (q - 1)
    loss = (C * -(1.0 + w) * r).sum() / B
    cw = C * (1.0 + w)
    crp = C * r * p
    grad = cw - neg * cw.sum(axis=1, keepdims=True) + (crp - p * crp.sum(axis=1, keepdims=True)) / (q - 1)
    return loss, grad / B


def class_partial_risks(g, cands):
    """Per-class partial risks of the unbiased CLL estimator with cross-entropy.

    Returns ``(r, A)`` where ``r[k] = sum_i A[i, k] * -log p_ik``; the
    normaliser is the number of rows with a non-empty complement.
    """
    q = g.shape[1]
    C = _complement_weights(cands)
    m = C.sum(axis=1, keepdims=True)
    W = m.sum()
    if W == 0:
        return np.zeros(q), np.zeros_like(C)
    A = (m - (q - 1) * C) / W
    return (A * -log_softmax(g)).sum(axis=0), A


def _risk_grad(p, G):
    return p * G.sum(axis=1, keepdims=True) - G


def _nn(p, g, cands, hp):
    r, A = class_partial_risks(g, cands)
    active = r > 0
    return float(np.maximum(r, 0.0).sum()), _risk_grad(p, A * active)


def _ga(p, g, cands, hp):
    # all partial risks non-negative: descend their sum; otherwise ascend the negative ones
    r, A = class_partial_risks(g, cands)
    neg = r < 0
    if neg.any():
        return float(-r[neg].sum()), _risk_grad(p, -A * neg)
    return float(r.sum()), _risk_grad(p, A)


_STATELESS = {
    "abs_mae": _abs_mae, "abs_gce": _abs_gce, "cc": _cc, "exp": _exp, "mcl_gce": _mcl_gce,
    "mcl_mse": _mcl_mse, "pc": _pc, "forward": _forward, "scl_exp": _scl_exp, "scl_nl": _scl_nl,
    "l_w": _l_w, "op_w": _op_w, "nn": _nn, "ga": _ga,
}


def loss_and_grad(spec: AlgorithmSpec, probs, logits, candidates, state: Optional[AlgorithmState] = None,
                  example_indices=None) -> tuple[float, np.ndarray]:
    """Batch loss and its exact gradient with respect to ``logits``.

    ``probs`` must be ``softmax(logits)``; ``candidates`` is the ``B x q``
    boolean mask of the batch, ``example_indices`` the rows of ``state``
    the batch corresponds to.
    """
    p = np.asarray(probs, dtype=np.float64)
    g = np.asarray(logits, dtype=np.float64)
    cands = np.asarray(candidates, dtype=bool)
    if p.shape != g.shape or cands.shape != g.shape:
        raise ValueError("probs, logits and candidates must share shape (B, q)")
    if spec.id in IDENTIFICATION or spec.id == "lws":
        if state is None or state.confidence is None or example_indices is None:
            raise ValueError(f"{spec.id} needs its confidence state and example indices")
        idx = np.asarray(example_indices)
        if spec.id == "lws":
            loss, grad = _lws(p, g, cands, state, idx, spec.hparams)
        else:
            loss, grad = _weighted_ce(p, g, cands, state, idx)
    else:
        loss, grad = _STATELESS[spec.id](p, g, cands, spec.hparams)
    return float(loss), grad


# -- state updates ---------------------------------------------------------------

def _renormalise(p, cands):
    rows = p * cands
    sums = rows.sum(axis=1, keepdims=True)
    uniform = cands / np.maximum(cands.sum(axis=1, keepdims=True), 1)
    return np.where(sums > FLOOR, rows / np.maximum(sums, FLOOR), uniform)


def _pop_epoch(state: AlgorithmState, hp):
    epoch = state.step // state.steps_per_epoch
    state.record[epoch % state.record.shape[0]] = state.confidence
    if state.step < int(hp["warmup"]) * state.steps_per_epoch:
        return
    n, q = state.confidence.shape
    avg = state.record.mean(axis=0)
    avg = avg / np.maximum(avg.sum(axis=1, keepdims=True), FLOOR)
    top = avg.max(axis=1, keepdims=True)
    before = state.mask.copy()
    keep = state.mask & (avg >= state.theta * top)
    empty = ~keep.any(axis=1)
    if empty.any():
        keep[empty, np.argmax(np.where(state.mask[empty], avg[empty], -1.0), axis=1)] = True
    state.mask = keep
    state.confidence = _renormalise(avg, keep)
    changed = int((before != keep).sum())
    if state.theta < 0.4 and changed < 1e-4 * n * q:
        state.theta *= 1.0 + hp["inc"]


def update_state(spec: AlgorithmSpec, probs, candidates, state: AlgorithmState,
                 example_indices) -> AlgorithmState:
    """Post-step update on the same batch, using the updated model's outputs. Mutates ``state``."""
    alg = spec.id
    if alg not in IDENTIFICATION and alg != "lws":
        return state
    p = np.asarray(probs, dtype=np.float64)
    cands = np.asarray(candidates, dtype=bool)
    idx = np.asarray(example_indices)
    if alg == "proden":
        state.confidence[idx] = _renormalise(p, cands)
    elif alg == "cavl":
        # class activation value on the probabilities, restricted to candidates
        score = np.where(cands, p * np.abs(1.0 - p), -np.inf)
        pick = np.argmax(score, axis=1)
        onehot = np.zeros_like(p)
        onehot[np.arange(len(pick)), pick] = 1.0
        state.confidence[idx] = onehot
    elif alg == "pop":
        state.confidence[idx] = _renormalise(p, state.mask[idx])
        if state.step % state.steps_per_epoch == 0:
            _pop_epoch(state, spec.hparams)
        state.step += 1
    else:  # lws
        state.confidence[idx] = (_renormalise_or_zero(p, cands) + _renormalise_or_zero(p, ~cands))
    return state


def _renormalise_or_zero(p, mask):
    rows = p * mask
    return rows / np.maximum(rows.sum(axis=1, keepdims=True), FLOOR)


def predict(probs) -> np.ndarray:
    """Argmax with ties going to the lowest class index."""
    return np.argmax(np.asarray(probs), axis=1)


__all__ = [
    "ALGORITHMS", "CLL", "IDENTIFICATION", "DEFAULT_HPARAMS", "AlgorithmSpec", "AlgorithmState",
    "make_initial_state", "loss_and_grad", "update_state", "class_partial_risks", "predict", "softmax",
]
