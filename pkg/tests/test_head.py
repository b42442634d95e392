import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokgraph import autodiff as ad
from tokgraph.autodiff import Tensor
from tokgraph.head import ClassifierParams, EvalReport, cross_entropy, evaluate, pool, pool_and_classify, predict


def cls(w, b):
    return ClassifierParams(Tensor(np.asarray(w, dtype=float), requires_grad=True),
                            Tensor(np.asarray(b, dtype=float), requires_grad=True))


def test_identical_nodes_pool_to_that_feature():
    f = np.array([1.5, -2.0, 0.25])
    np.testing.assert_array_equal(pool(Tensor(np.tile(f, (7, 1)))).data, f)


def test_zero_weights_uniform_probs():
    _, probs = pool_and_classify(Tensor(np.random.default_rng(0).normal(size=(5, 3))),
                                 cls(np.zeros((4, 3)), np.zeros(4)))
    np.testing.assert_allclose(probs, 0.25, atol=1e-15)


def test_two_node_example():
    logits, probs = pool_and_classify(Tensor([[2.0], [4.0]]), cls([[1.0], [-1.0]], [0.0, 0.0]))
    np.testing.assert_array_equal(logits.data, [3.0, -3.0])
    e = math.exp(6.0)
    np.testing.assert_allclose(probs, [e / (e + 1), 1 / (e + 1)], rtol=1e-14)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_cross_entropy_examples():
    assert cross_entropy(Tensor(np.zeros(4)), 2).item() == pytest.approx(math.log(4), abs=1e-15)
    assert cross_entropy(Tensor([50.0, 0.0, 0.0]), 0).item() < 1e-20
    assert cross_entropy(Tensor([3.0, -3.0]), 0).item() == pytest.approx(math.log1p(math.exp(-6)), rel=1e-13)


def test_cross_entropy_bad_label():
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros(3)), 3)


def test_eval_all_correct():
    r = evaluate([0, 1, 2, 1], [0, 1, 2, 1])
    assert r.top1 == 1.0 and r.mca == 1.0


def test_eval_counting_example():
    # class A: 3/3 correct, class B: 1/2 correct
    r = evaluate([0, 0, 0, 1, 0], [0, 0, 0, 1, 1])
    assert r.top1 == pytest.approx(0.8)
    assert r.mca == pytest.approx(0.75)
    np.testing.assert_array_equal(r.confusion.sum(axis=1), [3, 2])


def test_majority_predictor_on_imbalance():
    truths = [0] * 8 + [1] * 2 + [2] * 1
    r = evaluate([0] * 11, truths)
    assert r.top1 > r.mca


def test_empty_eval_rejected():
    with pytest.raises(ValueError):
        evaluate([], [])


def test_absent_classes_excluded():
    r = evaluate([0, 1], [0, 1], num_classes=4)
    assert r.excluded_classes == 2 and r.mca == 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=60))
def test_mca_between_recall_extremes(pairs):
    preds, truths = zip(*pairs)
    r = evaluate(preds, truths, num_classes=5)
    rec = r.per_class_recall[~np.isnan(r.per_class_recall)]
    assert rec.min() - 1e-12 <= r.mca <= rec.max() + 1e-12
    np.testing.assert_array_equal(r.confusion.sum(axis=1), np.bincount(truths, minlength=5))


def test_report_text_roundtrip():
    r = evaluate([0, 1, 1, 2], [0, 1, 2, 2], num_classes=4, loss=0.123)
    assert EvalReport.from_text(r.to_text()) == r


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 1000))
def test_pool_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    h, g = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    lhs = pool(Tensor(a * h + b * g)).data
    np.testing.assert_allclose(lhs, a * pool(Tensor(h)).data + b * pool(Tensor(g)).data, atol=1e-12)


def test_argmax_shift_invariance_and_ties():
    logits = np.array([[0.5, 2.0, 2.0], [1.0, 1.0, 1.0]])
    np.testing.assert_array_equal(predict(logits), [1, 0])
    np.testing.assert_array_equal(predict(logits + 17.25), predict(logits))


def test_head_gradients():
    rng = np.random.default_rng(0)
    h = Tensor(rng.normal(size=(3, 5, 4)), requires_grad=True)
    c = cls(rng.normal(size=(3, 4)), rng.normal(size=3))
    labels = np.array([0, 2, 1])

    def f():
        logits, _ = pool_and_classify(h, c)
        return ad.cross_entropy(logits, labels)

    assert ad.grad_check(f, [h, c.weight, c.bias]) < 1e-6
