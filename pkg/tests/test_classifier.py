import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamaica.errors import DimensionMismatch, EmptyModel, UnknownClass
from jamaica.mlengine import ClassifierModel, classifier_predict, classifier_train

from oracles import argmax_oracle


def test_zero_weights_pick_first_name():
    m = ClassifierModel.zeros(["b", "a", "c"])
    assert classifier_predict(m, [3.0]) == ("a", 0.0)


def test_single_example_trace():
    m = classifier_train(ClassifierModel.zeros(["a", "b"]), [([1], "b")], 1)
    assert m.weight("b") == (1.0, 1.0)
    assert m.weight("a") == (-1.0, -1.0)
    assert classifier_predict(m, [1]) == ("b", 4.0)


def test_single_class_data():
    m = classifier_train(ClassifierModel.zeros(["x", "y"]), [([v], "y") for v in (1, 2, 3)], 3)
    assert all(classifier_predict(m, [v])[0] == "y" for v in (1, 2, 3, 7))


def test_single_class_margin_zero():
    assert classifier_predict(ClassifierModel.zeros(["only"]), [2.0]) == ("only", 0.0)


def test_unknown_class():
    with pytest.raises(UnknownClass):
        classifier_train(ClassifierModel.zeros(["a", "b"]), [([1], "z")])


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        classifier_predict(ClassifierModel.zeros(["a", "b"], 2), [1.0])


def test_empty_model():
    with pytest.raises(EmptyModel):
        classifier_predict(ClassifierModel.zeros([]), [1.0])


def test_json_round_trip():
    m = classifier_train(ClassifierModel.zeros(["a", "b"]), [([1], "b"), ([-1], "a")], 2)
    assert ClassifierModel.from_json(m.to_json()) == m


examples_st = st.lists(
    st.tuples(st.lists(st.floats(-100, 100), min_size=2, max_size=2), st.sampled_from("abc")),
    min_size=1, max_size=40)


@settings(max_examples=80)
@given(examples_st, st.integers(1, 4))
def test_training_is_deterministic(examples, epochs):
    base = ClassifierModel.zeros(["a", "b", "c"], 2)
    assert classifier_train(base, examples, epochs) == classifier_train(base, examples, epochs)


@settings(max_examples=80)
@given(examples_st, st.lists(st.floats(-100, 100), min_size=2, max_size=2))
def test_prediction_equals_argmax_oracle(examples, x):
    m = classifier_train(ClassifierModel.zeros(["a", "b", "c"], 2), examples, 2)
    assert classifier_predict(m, x)[0] == argmax_oracle(m.classes, m.weights, x)


@settings(max_examples=80)
@given(examples_st, st.integers(-1000, 1000),
       st.lists(st.integers(-50, 50), min_size=2, max_size=2))
def test_argmax_invariant_under_common_shift(examples, shift, x):
    # integer-valued data keeps every score exact, so the shift cannot reorder by rounding
    examples = [([round(v) for v in f], c) for f, c in examples]
    m = classifier_train(ClassifierModel.zeros(["a", "b", "c"], 2), examples, 2)
    shifted = ClassifierModel(m.classes, tuple(w[:-1] + (w[-1] + shift,) for w in m.weights), 2)
    assert classifier_predict(m, x)[0] == classifier_predict(shifted, x)[0]


@st.composite
def separable_1d(draw):
    """100 points on [-10, 10], labelled by a threshold with a gap of at least 1."""
    t = draw(st.floats(-3, 3))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    n_left = draw(st.integers(10, 90))
    left = rng.uniform(-10, t - 0.5, n_left)
    right = rng.uniform(t + 0.5, 10, 100 - n_left)
    data = [([float(v)], "lo") for v in left] + [([float(v)], "hi") for v in right]
    order = rng.permutation(100)
    return [data[i] for i in order]


@settings(max_examples=60, deadline=None)
@given(separable_1d())
def test_separable_1d_converges_in_ten_epochs(data):
    m = classifier_train(ClassifierModel.zeros(["hi", "lo"]), data, 10)
    assert all(classifier_predict(m, f)[0] == c for f, c in data)
