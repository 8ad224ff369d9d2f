import numpy as np
import pytest

from pllbench.datagen import GenerationModel, SyntheticSource
from pllbench.theory import (OracleClassifier, draw_sample, gap_profile, run_suite, suite_passed,
                             validate_prop1, validate_thm_aa, validate_thm_cr)

SRC = SyntheticSource.collinear(3, 2, spacing=2.0)
N = 100_000


def test_oracle_outputs_are_distributions():
    x, _ = SRC.sample(500, 0)
    for clf in (OracleClassifier.bayes(SRC.posterior),
                OracleClassifier.corrupted(SRC.posterior, 0.3, 1),
                OracleClassifier.constant(2)):
        p = clf.predict_proba(x, 3)
        assert (p >= 0).all()
        np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_corruption_rate_and_wrong_labels():
    x, _ = SRC.sample(N, 0)
    bayes = np.argmax(SRC.posterior(x), axis=1)
    pred = np.argmax(OracleClassifier.corrupted(SRC.posterior, 0.3, 5).predict_proba(x), axis=1)
    changed = pred != bayes
    assert abs(changed.mean() - 0.3) < 3 * np.sqrt(0.21 / N)
    # the replacement label is uniform over the two wrong ones
    moved = (pred[changed] - bayes[changed]) % 3
    assert abs((moved == 1).mean() - 0.5) < 0.02


def test_corruption_deterministic_and_nested():
    x, _ = SRC.sample(2000, 0)
    a = OracleClassifier.corrupted(SRC.posterior, 0.2, 7).predict_proba(x)
    assert a.tobytes() == OracleClassifier.corrupted(SRC.posterior, 0.2, 7).predict_proba(x).tobytes()
    bayes = np.argmax(SRC.posterior(x), axis=1)
    lo = np.argmax(a, axis=1) != bayes
    hi = np.argmax(OracleClassifier.corrupted(SRC.posterior, 0.4, 7).predict_proba(x), axis=1) != bayes
    assert not (lo & ~hi).any()


def test_oracle_validation():
    with pytest.raises(ValueError):
        OracleClassifier("bayes")
    with pytest.raises(ValueError):
        OracleClassifier.corrupted(SRC.posterior, 1.5)


# -- AA consistency ---------------------------------------------------------------

def test_thm_aa_uss():
    r = validate_thm_aa(SRC, GenerationModel.uss(seed=1), N, seed=0)
    assert r["pass"] and r["status"] == "pass"
    assert abs(r["estimates"]["aa"] - r["estimates"]["acc"]) <= 0.01
    assert r["hypothesis"]["factorizes"]


def test_thm_aa_singletons_exact():
    gen = GenerationModel.fps(0.0)
    s = draw_sample(SRC, gen, 20_000, 3)
    r = validate_thm_aa(SRC, gen, sample=s)
    p = SRC.posterior(s.x)
    # with |S| = 1 the AA weight is 1 exactly when the argmax hits the label
    assert r["estimates"]["aa"] == float((np.argmax(p, axis=1) == s.y).mean())
    assert r["estimates"]["diff"] == 0.0


def test_thm_aa_constant_classifier_negative_control():
    gen = GenerationModel.uss(seed=2)
    s = draw_sample(SRC, gen, N, 4)
    r = validate_thm_aa(SRC, gen, classifier=OracleClassifier.constant(0), sample=s)
    assert r["estimates"]["aa"] == pytest.approx(s.masks[:, 0].mean())
    assert r["estimates"]["acc"] == pytest.approx((s.y == 0).mean())
    assert not r["pass"]
    assert r["status"] == "hypothesis-violated"
    assert not r["hypothesis"]["posterior_classifier"]


def test_thm_aa_skewed_generation_flags_hypothesis():
    m = np.array([[0, 0.9, 0.1], [0.1, 0, 0.9], [0.9, 0.1, 0]])
    r = validate_thm_aa(SRC, GenerationModel.fps(m, seed=3), N, seed=0)
    assert not r["hypothesis"]["factorizes"]
    assert r["status"] in ("pass", "hypothesis-violated")


# -- CR consistency ---------------------------------------------------------------

@pytest.mark.parametrize("gen,c", [(GenerationModel.fps(0.5, seed=5), 0.5),
                                   (GenerationModel.uss(seed=6), 1 / 3)])
def test_thm_cr_affine_law_and_ranking(gen, c):
    clfs = [OracleClassifier.corrupted(SRC.posterior, r, 1) for r in (0.0, 0.2, 0.4)]
    r = validate_thm_cr(SRC, gen, clfs, N, seed=0)
    assert r["setup"]["c"] == pytest.approx(c)
    assert r["pass"]
    for row in r["estimates"]["classifiers"]:
        assert abs(row["acc"] - (row["cr"] - c) / (1 - c)) <= 0.01
    assert all(p["status"] == "agree" for p in r["estimates"]["pairs"])


def test_thm_cr_reports_unseparated_pairs():
    clfs = [OracleClassifier.corrupted(SRC.posterior, 0.2, 1),
            OracleClassifier.corrupted(SRC.posterior, 0.2, 2)]
    r = validate_thm_cr(SRC, GenerationModel.fps(0.5, seed=5), clfs, 20_000)
    assert r["estimates"]["pairs"][0]["status"] == "skipped"


def test_thm_cr_needs_two_classifiers():
    with pytest.raises(ValueError):
        validate_thm_cr(SRC, GenerationModel.uss(), [OracleClassifier.bayes(SRC.posterior)], 100)


# -- gap bound --------------------------------------------------------------------

def test_prop1_zero_flip():
    r = validate_prop1(SRC, GenerationModel.fps(0.0), OracleClassifier.corrupted(SRC.posterior, 0.3),
                       20_000)
    assert r["estimates"]["gap"] == 0.0 and r["pass"]


def test_prop1_corrupted_half_flip():
    r = validate_prop1(SRC, GenerationModel.fps(0.5, seed=8),
                       OracleClassifier.corrupted(SRC.posterior, 0.3, 1), N)
    assert r["pass"]
    assert r["estimates"]["gap"] <= (1 - r["estimates"]["oa"]) * 0.5 + 3 * r["sigma"]


def test_prop1_full_set_limit_is_tight():
    gen = GenerationModel.fps(np.ones((3, 3)))
    r = validate_prop1(SRC, gen, OracleClassifier.corrupted(SRC.posterior, 0.2, 1), 20_000)
    assert r["estimates"]["cr"] == 1.0
    assert r["bound"] == r["estimates"]["gap"] == 1 - r["estimates"]["oa"]
    assert r["pass"]


@pytest.mark.parametrize("gen", [GenerationModel.uss(seed=1), GenerationModel.fps(0.5, seed=1)])
def test_gap_and_bound_grow_with_corruption(gen):
    prof = gap_profile(SRC, gen, (0.0, 0.2, 0.4), N, seed=0)
    gaps = [r["estimates"]["gap"] for r in prof]
    bounds = [r["bound"] for r in prof]
    assert gaps == sorted(gaps) and bounds == sorted(bounds)
    assert all(r["pass"] for r in prof)


def test_suite_deterministic_and_passing():
    a = run_suite(["thm-aa"], n=20_000, seed=1)
    b = run_suite(["thm-aa"], n=20_000, seed=1)
    assert a == b
    assert suite_passed(run_suite(n=N))
    with pytest.raises(ValueError):
        run_suite(["nope"])
