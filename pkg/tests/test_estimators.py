import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from xbarsim import CrossbarMLPClassifier
from xbarsim.datasets import make_blobs


@pytest.fixture(scope="module")
def blobs():
    d = make_blobs(240, 6, 3, seed=0)
    labels = np.array(["a", "b", "c"])[d.y]
    return d.X, labels


def test_fit_predict_string_labels(blobs):
    X, y = blobs
    clf = CrossbarMLPClassifier(hidden=(8,), epochs=5, eta=0.1).fit(X, y)
    assert set(clf.predict(X)) <= {"a", "b", "c"}
    assert clf.score(X, y) > 0.9
    assert clf.n_features_in_ == 6 and len(clf.history_) == 5
    np.testing.assert_allclose(clf.predict_proba(X).sum(axis=1), 1.0)


def test_analog_mode_learns(blobs):
    X, y = blobs
    clf = CrossbarMLPClassifier(hidden=(8,), epochs=3, eta=0.1, mode="analog").fit(X, y)
    assert clf.score(X, y) > 0.8


def test_params_and_clone():
    clf = CrossbarMLPClassifier(eta=0.2, random_state=7)
    params = clf.get_params()
    assert params["eta"] == 0.2 and params["random_state"] == 7
    c = clone(clf)
    assert c.get_params() == params and c is not clf
    assert clf.set_params(epochs=9).epochs == 9


def test_not_fitted():
    with pytest.raises(NotFittedError):
        CrossbarMLPClassifier().predict(np.zeros((1, 3)))


def test_feature_mismatch(blobs):
    X, y = blobs
    clf = CrossbarMLPClassifier(hidden=(4,), epochs=1).fit(X, y)
    with pytest.raises(ValueError):
        clf.predict(X[:, :5])


def test_rejects_unscaled_features(blobs):
    X, y = blobs
    with pytest.raises(ValueError):
        CrossbarMLPClassifier().fit(X * 3, y)


def test_deterministic(blobs):
    X, y = blobs
    a = CrossbarMLPClassifier(hidden=(4,), epochs=2, random_state=3).fit(X, y).predict_proba(X)
    b = CrossbarMLPClassifier(hidden=(4,), epochs=2, random_state=3).fit(X, y).predict_proba(X)
    np.testing.assert_array_equal(a, b)
