import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import cross_entropy, fd_rel_error, random_instance
from pllbench.algorithms import (ALGORITHMS, CLL, IDENTIFICATION, AlgorithmSpec,
                                 class_partial_risks, loss_and_grad, make_initial_state, predict,
                                 update_state)
from pllbench.nn import backward, forward, init_params, softmax

STATEFUL = IDENTIFICATION + ("lws",)


def _loss(alg, p_or_g, cands, state=None, idx=None, logits=True, **hp):
    g = np.atleast_2d(np.asarray(p_or_g, dtype=np.float64))
    if not logits:
        g = np.log(g)
    cands = np.atleast_2d(np.asarray(cands, dtype=bool))
    spec = AlgorithmSpec(alg, hp)
    if state is None:
        state = make_initial_state(spec, cands, cands.shape[0])
    if idx is None:
        idx = np.arange(g.shape[0])
    return loss_and_grad(spec, softmax(g), g, cands, state, idx)[0]


# -- registry / specs -----------------------------------------------------------

def test_registry_has_eighteen_lowercase_ids():
    assert len(ALGORITHMS) == 18
    assert all(a == a.lower() for a in ALGORITHMS)


def test_spec_normalises_id_and_defaults():
    s = AlgorithmSpec("ABS-GCE")
    assert s.id == "abs_gce" and s.hparams["rho"] == 0.7
    assert AlgorithmSpec("lws").hparams["leverage"] == 2
    assert AlgorithmSpec("pop").hparams == {"window": 5, "warmup": 20, "theta": 1e-3, "inc": 1e-3}


@pytest.mark.parametrize("alg,hp", [("abs_gce", {"rho": 0.0}), ("abs_gce", {"rho": 1.5}),
                                    ("lws", {"leverage": 3}), ("pop", {"window": 0})])
def test_spec_rejects_bad_hparams(alg, hp):
    with pytest.raises(ValueError):
        AlgorithmSpec(alg, hp)


def test_unknown_algorithm():
    with pytest.raises(ValueError):
        AlgorithmSpec("pico")


# -- worked values ----------------------------------------------------------------

def test_cc_uniform_probs():
    assert _loss("cc", np.zeros(4), [1, 1, 0, 0]) == pytest.approx(math.log(2))


def test_proden_one_hot_half():
    p = np.array([[0.5, 0.25, 0.25]])
    cands = np.array([[True, True, False]])
    spec = AlgorithmSpec("proden")
    state = make_initial_state(spec, cands)
    state.confidence = np.array([[1.0, 0.0, 0.0]])
    assert _loss("proden", p, cands, state, logits=False) == pytest.approx(math.log(2))


def test_abs_mae_worked_value():
    p = np.array([[0.3, 0.4, 0.3]])
    assert _loss("abs_mae", p, [[1, 1, 0]], logits=False) == pytest.approx(1.3)


def test_forward_worked_value():
    p = np.array([[0.5, 0.3, 0.2]])
    assert _loss("forward", p, [[1, 1, 0]], logits=False) == pytest.approx(-math.log(0.4))


def test_initial_state_examples():
    spec = AlgorithmSpec("proden")
    st_ = make_initial_state(spec, np.array([[0, 1, 0, 1], [0, 0, 1, 0]], bool))
    np.testing.assert_allclose(st_.confidence, [[0, 0.5, 0, 0.5], [0, 0, 1, 0]])
    assert make_initial_state(AlgorithmSpec("cc"), np.ones((2, 3), bool)).confidence is None
    pop = make_initial_state(AlgorithmSpec("pop"), np.ones((10, 3), bool), batch_size=4)
    assert pop.mask.all() and pop.steps_per_epoch == 3


def test_proden_update_example():
    cands = np.array([[True, True, False]])
    spec = AlgorithmSpec("proden")
    st_ = make_initial_state(spec, cands)
    update_state(spec, np.array([[0.2, 0.6, 0.2]]), cands, st_, [0])
    np.testing.assert_allclose(st_.confidence, [[0.25, 0.75, 0.0]])


def test_cavl_update_example_and_tie():
    cands = np.array([[True, True, False], [True, True, True]])
    spec = AlgorithmSpec("cavl")
    st_ = make_initial_state(spec, cands)
    update_state(spec, np.array([[0.2, 0.6, 0.2], [1 / 3, 1 / 3, 1 / 3]]), cands, st_, [0, 1])
    np.testing.assert_array_equal(st_.confidence, [[0, 1, 0], [1, 0, 0]])


def test_cavl_never_leaves_candidates():
    cands = np.array([[False, True, True]])
    spec = AlgorithmSpec("cavl")
    st_ = make_initial_state(spec, cands)
    update_state(spec, np.array([[0.98, 0.01, 0.01]]), cands, st_, [0])
    assert st_.confidence[0, 0] == 0.0 and st_.confidence[0].sum() == 1.0


def test_predict_ties_lowest():
    assert predict(np.array([[0.4, 0.4, 0.2]])).tolist() == [0]


def test_stateful_needs_state():
    with pytest.raises(ValueError):
        loss_and_grad(AlgorithmSpec("proden"), softmax(np.zeros((1, 3))), np.zeros((1, 3)),
                      np.ones((1, 3), bool))


# -- gradients ------------------------------------------------------------------

@pytest.mark.parametrize("alg", ALGORITHMS)
def test_logit_gradient_finite_differences(alg):
    rng = np.random.default_rng(ALGORITHMS.index(alg))
    for _ in range(5):
        assert fd_rel_error(*random_instance(alg, rng)) <= 1e-4


@pytest.mark.parametrize("alg", ALGORITHMS)
def test_mlp_composed_gradient(alg):
    """Loss through the MLP: 20 random parameter coordinates against central differences."""
    rng = np.random.default_rng(7)
    q, d, B = 4, 3, 6
    params = init_params(d, q, 3, hidden=12)
    x = rng.normal(size=(B, d))
    spec, _, cands, state, idx = random_instance(alg, rng, q=q, B=B)

    def total(pr):
        logits, cache = forward(pr, x)
        loss, dl = loss_and_grad(spec, softmax(logits), logits, cands, state, idx)
        return loss, backward(pr, cache, dl)

    _, grads = total(params)
    arrays = params.arrays()
    h = 1e-6
    for _ in range(20):
        a = int(rng.integers(0, 4))
        k = tuple(int(rng.integers(0, s)) for s in arrays[a].shape)
        old = arrays[a][k]
        arrays[a][k] = old + h
        lp, _ = total(params)
        arrays[a][k] = old - h
        lm, _ = total(params)
        arrays[a][k] = old
        fd = (lp - lm) / (2 * h)
        an = grads.arrays()[a][k]
        assert abs(fd - an) <= 1e-4 * max(abs(fd), abs(an), 1e-6)


# -- degenerate supervision -----------------------------------------------------

def _singletons(rng, B=6, q=4):
    y = rng.integers(0, q, B)
    cands = np.zeros((B, q), bool)
    cands[np.arange(B), y] = True
    return rng.normal(size=(B, q)), cands, y


@pytest.mark.parametrize("alg", ["proden", "cavl", "pop", "cc"])
def test_singletons_reduce_to_cross_entropy(alg):
    g, cands, y = _singletons(np.random.default_rng(1))
    assert _loss(alg, g, cands) == pytest.approx(cross_entropy(g, y), rel=1e-12)


def test_singletons_reduce_to_base_losses():
    g, cands, y = _singletons(np.random.default_rng(2))
    py = softmax(g)[np.arange(len(y)), y]
    assert _loss("abs_mae", g, cands) == pytest.approx(np.mean(2 * (1 - py)))
    assert _loss("abs_gce", g, cands) == pytest.approx(np.mean((1 - py ** 0.7) / 0.7))
    assert _loss("exp", g, cands) == pytest.approx(np.mean(np.exp(-py)))
    assert _loss("mcl_gce", g, cands) == pytest.approx(np.mean((1 - py ** 0.7) / 0.7))
    p = softmax(g)
    onehot = cands.astype(float)
    assert _loss("mcl_mse", g, cands) == pytest.approx(np.mean(((p - onehot) ** 2).sum(axis=1)))


def test_cll_single_complementary_label():
    rng = np.random.default_rng(3)
    B, q = 5, 4
    ybar = rng.integers(0, q, B)
    cands = np.ones((B, q), bool)
    cands[np.arange(B), ybar] = False
    g = rng.normal(size=(B, q))
    p = softmax(g)
    pb = p[np.arange(B), ybar]
    assert _loss("scl_nl", g, cands) == pytest.approx(np.mean(-np.log(1 - pb)))
    assert _loss("scl_exp", g, cands) == pytest.approx(np.mean(np.exp(pb)))
    t = (1 - pb) / (q - 1)
    assert _loss("forward", g, cands) == pytest.approx(np.mean(-np.log(t)))


def test_cll_average_over_complement():
    rng = np.random.default_rng(4)
    g = rng.normal(size=(1, 5))
    both = np.array([[True, False, True, False, True]])
    one = np.array([[True, True, True, False, True]])
    two = np.array([[True, False, True, True, True]])
    for alg in ("scl_nl", "scl_exp", "forward", "pc", "l_w", "op_w"):
        avg = (_loss(alg, g, one) + _loss(alg, g, two)) / 2
        assert _loss(alg, g, both) == pytest.approx(avg, rel=1e-12), alg


def test_full_set_rows_contribute_nothing_to_cll():
    g = np.random.default_rng(5).normal(size=(2, 3))
    for alg in CLL + ("exp", "mcl_gce", "mcl_mse"):
        assert _loss(alg, g, np.ones((2, 3), bool)) == 0.0, alg


# -- properties -----------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_nn_loss_non_negative(seed):
    rng = np.random.default_rng(seed)
    spec, g, cands, state, idx = random_instance("nn", rng)
    assert loss_and_grad(spec, softmax(g), g, cands, state, idx)[0] >= 0.0
    r, _ = class_partial_risks(g, cands)
    assert r.shape == (g.shape[1],)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(ALGORITHMS), st.integers(0, 2**32 - 1))
def test_permutation_equivariance(alg, seed):
    rng = np.random.default_rng(seed)
    spec, g, cands, state, idx = random_instance(alg, rng)
    base = loss_and_grad(spec, softmax(g), g, cands, state, idx)
    perm = rng.permutation(g.shape[1])
    if state.confidence is not None:
        state.confidence = state.confidence[:, perm]
    if state.mask is not None:
        state.mask = state.mask[:, perm]
    gp = g[:, perm]
    moved = loss_and_grad(spec, softmax(gp), gp, cands[:, perm], state, idx)
    assert moved[0] == pytest.approx(base[0], rel=1e-9, abs=1e-12)
    np.testing.assert_allclose(moved[1], base[1][:, perm], rtol=1e-8, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(IDENTIFICATION), st.integers(0, 2**32 - 1))
def test_confidence_stays_row_stochastic_on_candidates(alg, seed):
    rng = np.random.default_rng(seed)
    n, q, B = 12, 4, 5
    cands = rng.random((n, q)) < 0.5
    cands[np.arange(n), rng.integers(0, q, n)] = True
    spec = AlgorithmSpec(alg, {"warmup": 1, "window": 2, "theta": 0.3} if alg == "pop" else {})
    st_ = make_initial_state(spec, cands, B)
    for _ in range(15):
        idx = rng.choice(n, B, replace=False)
        update_state(spec, softmax(rng.normal(scale=3, size=(B, q))), cands[idx], st_, idx)
        np.testing.assert_allclose(st_.confidence.sum(axis=1), 1.0, atol=1e-9)
        assert not (st_.confidence * ~cands).any()
        if alg == "pop":
            assert not (st_.mask & ~cands).any()
            assert st_.mask.any(axis=1).all()
            assert not (st_.confidence * ~st_.mask).any()


def test_pop_shrinks_candidates_after_warmup():
    n, q = 8, 3
    cands = np.ones((n, q), bool)
    spec = AlgorithmSpec("pop", {"warmup": 1, "window": 2, "theta": 0.5})
    st_ = make_initial_state(spec, cands, n)
    p = np.tile([[0.9, 0.08, 0.02]], (n, 1))
    for _ in range(4):
        update_state(spec, p, cands, st_, np.arange(n))
    assert st_.mask[:, 0].all() and not st_.mask[:, 2].any()


def test_lws_state_update_splits_mass():
    cands = np.array([[True, False, True]])
    spec = AlgorithmSpec("lws")
    st_ = make_initial_state(spec, cands)
    np.testing.assert_allclose(st_.confidence, 1 / 3)
    update_state(spec, np.array([[0.2, 0.5, 0.3]]), cands, st_, [0])
    np.testing.assert_allclose(st_.confidence, [[0.4, 1.0, 0.6]])
