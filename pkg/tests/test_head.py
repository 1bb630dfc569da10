import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egochunk.errors import (
    EmptyList,
    InvalidDistribution,
    LabelOutOfRange,
    MissingSample,
    ShapeMismatch,
    ZeroProbabilityTruth,
)
from egochunk.head import (
    ClassScores,
    LabeledPrediction,
    action_outer,
    apply_prior,
    average_views,
    build_prior,
    format_report,
    fuse_samples,
    load_labels,
    load_prior,
    load_probabilities,
    macro_precision_recall,
    make_prediction,
    metrics_report,
    multitask_loss,
    ranking,
    save_labels,
    save_prior,
    save_probabilities,
    topk_accuracy,
)

from oracles import macro_pr_bf, ranks_by_counting, topk_bf

seeds = st.integers(0, 2**32 - 1)


def dist(rng, n, sharp=1.0):
    z = rng.normal(size=n) * sharp
    e = np.exp(z - z.max())
    return e / e.sum()


def one_hot(n, i):
    v = np.zeros(n)
    v[i] = 1.0
    return v


# ---- scores

def test_outer_examples():
    assert np.array_equal(action_outer(ClassScores([1, 0], [0, 1])), [[0, 1], [0, 0]])
    a = action_outer(ClassScores(np.full(3, 1 / 3), np.full(4, 1 / 4)))
    assert np.allclose(a, 1 / 12, rtol=0, atol=1e-15)
    a = action_outer(ClassScores([0.6, 0.4], [0.5, 0.3, 0.2]))
    assert np.allclose(a, [[0.30, 0.18, 0.12], [0.20, 0.12, 0.08]], rtol=0, atol=1e-15)


def test_class_scores_validation():
    with pytest.raises(InvalidDistribution):
        ClassScores([0.5, 0.6], [1.0])
    with pytest.raises(InvalidDistribution):
        ClassScores([1.5, -0.5], [1.0])
    with pytest.raises(InvalidDistribution):
        ClassScores([], [1.0])


def test_apply_prior_examples():
    a = action_outer(ClassScores([0.6, 0.4], [0.5, 0.3, 0.2]))
    assert np.array_equal(apply_prior(a, np.ones((2, 3))), a)
    only = np.zeros((2, 3))
    only[0, 0] = 1
    out = apply_prior(a, only)
    assert out[0, 0] == a[0, 0] and out.sum() == a[0, 0]
    out = apply_prior(a, [[1, 0, 1], [1, 1, 0]])
    assert np.allclose(out, [[0.30, 0, 0.12], [0.20, 0.12, 0]], rtol=0, atol=1e-15)


def test_apply_prior_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        apply_prior(np.ones((2, 3)), np.ones((3, 2)))


def test_build_prior_examples():
    p = build_prior([(2, 3)], 4, 5)
    assert p[2, 3] == 1 and p.sum() == 1
    allp = build_prior([(v, n) for v in range(3) for n in range(2)])
    assert np.array_equal(allp, np.ones((3, 2)))
    assert np.array_equal(build_prior([(0, 0), (0, 1), (1, 1)]), [[1, 1], [0, 1]])


def test_build_prior_errors():
    with pytest.raises(LabelOutOfRange):
        build_prior([(3, 0)], 2, 2)
    with pytest.raises(EmptyList):
        build_prior([])


def test_frequency_prior():
    p = build_prior([(0, 0), (0, 0), (1, 1), (0, 1)], mode="frequency")
    assert np.array_equal(p, [[0.5, 0.25], [0.0, 0.25]])


# ---- loss

def test_loss_perfect():
    pv, pn = one_hot(3, 1), one_hot(4, 2)
    with np.errstate(divide="ignore"):
        lt = multitask_loss(np.log(pv), np.log(pn), action_outer(ClassScores(pv, pn)), 1, 2)
    assert lt == (0.0, 0.0, 0.0, 0.0)


def test_loss_uniform():
    pv = pn = np.full(2, 0.5)
    a = apply_prior(action_outer(ClassScores(pv, pn)), np.ones((2, 2)))
    for v in range(2):
        for n in range(2):
            lt = multitask_loss(np.log(pv), np.log(pn), a, v, n)
            assert math.isclose(lt.verb, math.log(2)) and math.isclose(lt.noun, math.log(2))
            assert math.isclose(lt.action, math.log(4))
            assert math.isclose(lt.total, math.log(16))


def test_loss_renormalizes_masked_matrix():
    pv, pn = np.array([0.6, 0.4]), np.array([0.5, 0.5])
    a = apply_prior(action_outer(ClassScores(pv, pn)), [[1, 0], [0, 1]])
    lt = multitask_loss(np.log(pv), np.log(pn), a, 0, 0)
    assert math.isclose(lt.action, -math.log(0.3 / 0.5))


def test_loss_excluding_action():
    pv = pn = np.full(2, 0.5)
    lt = multitask_loss(np.log(pv), np.log(pn), np.full((2, 2), 0.25), 0, 1, include_action=False)
    assert math.isclose(lt.total, 2 * math.log(2))


def test_loss_zero_probability_truth():
    pv = pn = np.full(2, 0.5)
    a = apply_prior(action_outer(ClassScores(pv, pn)), [[1, 0], [1, 1]])
    with pytest.raises(ZeroProbabilityTruth) as err:
        multitask_loss(np.log(pv), np.log(pn), a, 0, 1)
    assert (err.value.verb, err.value.noun) == (0, 1)


def test_loss_infinite_not_crash():
    pv, pn = np.array([1.0, 0.0]), np.full(2, 0.5)
    with np.errstate(divide="ignore"):
        lt = multitask_loss(np.log(pv), np.log(pn), np.full((2, 2), 0.25), 1, 0)
    assert lt.verb == math.inf and lt.total == math.inf


def test_loss_label_range():
    with pytest.raises(LabelOutOfRange):
        multitask_loss(np.log([0.5, 0.5]), np.log([0.5, 0.5]), np.full((2, 2), 0.25), 2, 0)


# ---- views

def test_average_views_examples():
    s = ClassScores([0.2, 0.8], [1.0])
    assert np.array_equal(average_views([s]).p_v, s.p_v)
    two = average_views([ClassScores([1, 0], [1.0]), ClassScores([0, 1], [1.0])])
    assert np.array_equal(two.p_v, [0.5, 0.5])
    rng = np.random.default_rng(0)
    v = dist(rng, 7)
    many = average_views([ClassScores(v, [1.0])] * 100)
    assert np.abs(many.p_v - v).max() < 1e-9


def test_average_views_errors():
    with pytest.raises(EmptyList):
        average_views([])
    with pytest.raises(ShapeMismatch):
        average_views([ClassScores([1.0], [1.0]), ClassScores([0.5, 0.5], [1.0])])


# ---- metrics

def test_topk_examples():
    preds = [make_prediction(ClassScores(one_hot(3, i), one_hot(2, i % 2)), i, i % 2) for i in range(3)]
    for target in ("verb", "noun", "action"):
        assert topk_accuracy(preds, 1, target) == 100.0
    rng = np.random.default_rng(2)
    samples = []
    for truth_rank in (0, 4, 6):
        s = np.linspace(1, 0.1, 10)
        samples.append(LabeledPrediction(s / s.sum(), np.ones(1), (s / s.sum())[:, None], truth_rank, 0))
    assert math.isclose(topk_accuracy(samples, 5, "verb"), 200 / 3)
    assert round(topk_accuracy(samples, 5, "verb"), 2) == 66.67


def test_ranking_ties_ascending():
    assert list(ranking([0.2, 0.4, 0.4, 0.0, 0.4])) == [1, 2, 4, 0, 3]


def test_macro_pr_examples():
    def preds_for(truths, tops):
        return [LabeledPrediction(one_hot(2, p), np.ones(1), one_hot(2, p)[:, None], t, 0)
                for t, p in zip(truths, tops)]
    p, r = macro_precision_recall(preds_for([0, 0, 1], [0, 1, 1]), "verb")
    assert math.isclose(p, 75.0) and math.isclose(r, 75.0)
    p, r = macro_precision_recall(preds_for([0, 1, 0, 1], [0, 0, 0, 0]), "verb")
    assert math.isclose(p, 25.0) and math.isclose(r, 50.0)
    p, r = macro_precision_recall(preds_for([0, 1, 1], [0, 1, 1]), "verb")
    assert (p, r) == (100.0, 100.0)


def test_action_truth_and_scores():
    pred = make_prediction(ClassScores([0.6, 0.4], [0.5, 0.3, 0.2]), 1, 2)
    assert pred.truth("action") == 5
    assert pred.scores("action").shape == (6,)


def test_metrics_report_shape():
    preds = [make_prediction(ClassScores(one_hot(6, i), one_hot(6, i)), i, i) for i in range(6)]
    rep = metrics_report(preds)
    assert set(rep) == {"top1", "top5", "precision", "recall"}
    assert all(rep[k] == {"verb": 100.0, "noun": 100.0, "action": 100.0} for k in rep)
    assert "Top@1" in format_report(rep)


# ---- file formats

def test_probability_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    probs = {"a": [dist(rng, 5) for _ in range(3)], "b": [dist(rng, 5)]}
    save_probabilities(tmp_path / "p.csv", probs)
    back, k = load_probabilities(tmp_path / "p.csv")
    assert k == 5 and list(back) == ["a", "b"]
    assert all(np.array_equal(x, y) for x, y in zip(back["a"], probs["a"]))


def test_labels_and_prior_round_trip(tmp_path):
    labels = [("s1", 0, 2), ("s2", 3, 1)]
    save_labels(tmp_path / "l.csv", labels)
    assert load_labels(tmp_path / "l.csv") == labels
    prior = build_prior([(0, 0), (1, 2)], 2, 3)
    save_prior(tmp_path / "pr.csv", prior)
    assert np.array_equal(load_prior(tmp_path / "pr.csv"), prior)


def test_fuse_missing_sample():
    with pytest.raises(MissingSample):
        fuse_samples({"a": [np.ones(1)]}, {"a": [np.ones(1)]}, ["a", "b"])


# ---- properties

@settings(max_examples=200, deadline=None)
@given(seeds, st.integers(1, 12), st.integers(1, 12))
def test_outer_sums_to_one(seed, V, N):
    rng = np.random.default_rng(seed)
    a = action_outer(ClassScores(dist(rng, V), dist(rng, N)))
    assert abs(a.sum() - 1.0) < 1e-6


@settings(max_examples=200, deadline=None)
@given(seeds, st.integers(1, 10), st.integers(1, 10))
def test_prior_masking_argmax_equivalence(seed, V, N):
    rng = np.random.default_rng(seed)
    a = action_outer(ClassScores(dist(rng, V, 3), dist(rng, N, 3)))
    prior = (rng.random((V, N)) < 0.5).astype(float)
    prior.flat[rng.integers(V * N)] = 1.0
    masked = apply_prior(a, prior)
    assert np.all(masked <= a)
    allowed = [(a.flat[i], i) for i in range(V * N) if prior.flat[i] > 0]
    best = max(allowed, key=lambda e: (e[0], -e[1]))[1]
    assert int(np.argmax(masked)) == best
    assert int(ranking(masked.ravel())[0]) == best


@settings(max_examples=200, deadline=None)
@given(seeds, st.integers(1, 8), st.integers(2, 8), st.integers(1, 6))
def test_view_averaging_commutes_with_prior(seed, V, N, n_views):
    rng = np.random.default_rng(seed)
    views = [ClassScores(dist(rng, V, 2), dist(rng, N, 2)) for _ in range(n_views)]
    prior = (rng.random((V, N)) < 0.6).astype(float)
    prior.flat[rng.integers(V * N)] = 1.0
    pred = make_prediction(average_views(views), 0, 0, prior)
    mean_v = [sum(float(s.p_v[i]) for s in views) / n_views for i in range(V)]
    mean_n = [sum(float(s.p_n[j]) for s in views) / n_views for j in range(N)]
    cands = [(mean_v[i] * mean_n[j], -(i * N + j)) for i in range(V) for j in range(N) if prior[i, j] > 0]
    best = -max(cands)[1]
    assert int(ranking(pred.scores("action"))[0]) == best


@settings(max_examples=200, deadline=None)
@given(seeds, st.integers(1, 30), st.integers(2, 9))
def test_topk_monotone_in_k(seed, n_samples, K):
    rng = np.random.default_rng(seed)
    preds = []
    for _ in range(n_samples):
        # coarse scores so ties occur
        pv = np.round(dist(rng, K), 1) + 1e-3
        pv /= pv.sum()
        preds.append(make_prediction(ClassScores(pv, [1.0]), int(rng.integers(K)), 0))
    accs = [topk_accuracy(preds, k, "verb") for k in range(1, K + 1)]
    assert all(b >= a for a, b in zip(accs, accs[1:]))
    assert accs[-1] == 100.0
    samples = [(p.verb_scores, p.verb) for p in preds]
    assert all(math.isclose(topk_accuracy(preds, k, "verb"), topk_bf(samples, k), abs_tol=1e-9)
               for k in (1, 5))
    p, r = macro_precision_recall(preds, "verb")
    bp, br = macro_pr_bf(samples)
    assert abs(p - bp) < 1e-9 and abs(r - br) < 1e-9


@settings(max_examples=200, deadline=None)
@given(seeds, st.integers(1, 8), st.integers(1, 8), st.booleans())
def test_loss_terms_nonnegative_and_sum(seed, V, N, include):
    rng = np.random.default_rng(seed)
    pv, pn = dist(rng, V, 2), dist(rng, N, 2)
    v, n = int(rng.integers(V)), int(rng.integers(N))
    prior = (rng.random((V, N)) < 0.7).astype(float)
    prior[v, n] = 1.0
    lt = multitask_loss(np.log(pv), np.log(pn), apply_prior(action_outer(ClassScores(pv, pn)), prior), v, n, include)
    assert lt.verb >= 0 and lt.noun >= 0 and lt.action >= 0
    assert lt.total == lt.verb + lt.noun + (lt.action if include else 0.0)


def test_ranks_oracle_agrees_with_ranking():
    rng = np.random.default_rng(5)
    for _ in range(50):
        s = np.round(rng.random(8), 1)
        r = ranks_by_counting(s)
        assert [int(i) for i in ranking(s)] == sorted(range(8), key=lambda i: r[i])
