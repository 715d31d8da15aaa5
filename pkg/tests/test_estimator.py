import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from adnn import ADNNClassifier, histio
from adnn.estimator import frame_features
from adnn.histfeat import extract_training_batch


def _toy(n=80, width=21):
    X = np.zeros((n, 3, width))
    y = np.arange(n) % 2
    X[y == 0, :, width // 2] = 1.0
    X[y == 1, :, -1] = 1.0
    return X, y


def test_params_round_trip():
    est = ADNNClassifier(hidden_units=32, learning_rate=1e-3)
    assert est.get_params()["hidden_units"] == 32
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    est.set_params(adl_filters=4)
    assert est.network_config().adl_filters == 4


def test_fit_predict_with_arbitrary_labels():
    X, y = _toy()
    labels = np.where(y == 1, "moving", "static")
    est = ADNNClassifier(hist_width=21, hidden_units=8, learning_rate=1e-2, max_epochs=40,
                         batch_size=16).fit(X, labels)
    assert list(est.classes_) == ["moving", "static"]
    assert (est.predict(X) == labels).mean() == 1.0
    proba = est.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=1e-6)
    assert est.score(X, labels) == 1.0
    assert len(est.loss_curve_) == 40


def test_flat_inputs_accepted():
    X, y = _toy()
    est = ADNNClassifier(hist_width=21, hidden_units=4, max_epochs=2).fit(X.reshape(len(X), -1), y)
    assert est.predict(X).shape == y.shape


def test_validation():
    X, y = _toy()
    with pytest.raises(NotFittedError):
        ADNNClassifier().predict(X)
    with pytest.raises(ValueError, match="two classes"):
        ADNNClassifier(hist_width=21).fit(X, np.arange(len(y)) % 3)
    with pytest.raises(ValueError, match="shape"):
        ADNNClassifier(hist_width=21, max_epochs=1).fit(X[:, :, :20], y)


def test_save_load(tmp_path):
    X, y = _toy()
    est = ADNNClassifier(hist_width=21, hidden_units=4, max_epochs=3).fit(X, y)
    est.save(tmp_path / "m.adnn")
    back = ADNNClassifier.load(tmp_path / "m.adnn")
    np.testing.assert_array_equal(back.predict_log_proba(X), est.predict_log_proba(X))
    assert back.hidden_units == 4


def test_predict_frame_matches_predict():
    seq, masks = histio.generate_synthetic(histio.SyntheticConfig(frames=12))
    X, y = extract_training_batch(seq, masks[8], 8, max_per_class=50)
    est = ADNNClassifier(hidden_units=16, max_epochs=5, learning_rate=1e-3).fit(X, y)
    mask = est.predict_frame(seq, 10)
    assert mask.shape == (64, 64)
    flat = est.predict(frame_features(seq, 10))
    assert np.array_equal(mask.ravel(), flat)
