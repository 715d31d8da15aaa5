"""scikit-learn compatible wrapper around the histogram classifiers."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import net
from .histfeat import HistoryConfig, extract_frame_features
from .histio import Label


class ADNNClassifier(ClassifierMixin, BaseEstimator):
    """Pixel classifier over per-channel subtraction histograms.

    ``X`` is either ``(n_samples, 3, hist_width)`` or the same flattened to
    ``(n_samples, 3 * hist_width)``.  ``y`` must contain exactly two classes;
    the smaller one plays the role of Background.

    Parameters mirror :class:`net.NetworkConfig` and :class:`net.TrainConfig`.
    Setting ``architecture="cnn1"`` gives the single-filter CNN baseline.

    Attributes
    ----------
    classes_ : ndarray of shape (2,)
    params_ : dict of name -> float32 ndarray
    loss_curve_ : list of float
        Mean training loss per epoch.
    """

    def __init__(self, architecture="adnn", adl_filters=2, adl_depth=1, hidden_units=512,
                 hist_width=201, use_bias=True, learning_rate=1e-4, max_epochs=60,
                 batch_size=1000, beta1=0.9, beta2=0.999, epsilon=1e-8, random_state=0,
                 verbose=False):
        self.architecture = architecture
        self.adl_filters = adl_filters
        self.adl_depth = adl_depth
        self.hidden_units = hidden_units
        self.hist_width = hist_width
        self.use_bias = use_bias
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.random_state = random_state
        self.verbose = verbose

    def network_config(self) -> net.NetworkConfig:
        return net.NetworkConfig(
            architecture=self.architecture, adl_filters=self.adl_filters,
            hist_width=self.hist_width, adl_depth=self.adl_depth,
            hidden_units=self.hidden_units, use_bias=self.use_bias)

    def train_config(self) -> net.TrainConfig:
        return net.TrainConfig(
            learning_rate=self.learning_rate, max_epochs=self.max_epochs,
            batch_size=self.batch_size, beta1=self.beta1, beta2=self.beta2,
            epsilon=self.epsilon, seed=int(self.random_state or 0))

    def _as_histograms(self, X):
        X = check_array(X, allow_nd=True, dtype=np.float32)
        w = self.hist_width
        if X.ndim == 2 and X.shape[1] == 3 * w:
            X = X.reshape(-1, 3, w)
        if X.ndim != 3 or X.shape[1:] != (3, w):
            raise ValueError(f"expected histograms of shape (n, 3, {w}) or (n, {3 * w}), got {X.shape}")
        return X

    def fit(self, X, y):
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float32)
        X = self._as_histograms(X)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size != 2:
            raise ValueError(f"need exactly two classes, got {self.classes_.size}")
        cfg = self.network_config()

        def report(epoch, loss):
            if self.verbose:
                print(f"epoch {epoch + 1}: loss {loss:.6f}")

        self.params_, self.loss_curve_ = net.train(X, encoded, cfg, self.train_config(),
                                                   callback=report)
        self.n_features_in_ = 3 * self.hist_width
        return self

    def predict_log_proba(self, X):
        check_is_fitted(self, "params_")
        return net.predict_log_proba(self.params_, self._as_histograms(X), self.network_config())

    def predict_proba(self, X):
        return np.exp(self.predict_log_proba(X))

    def predict(self, X):
        logp = self.predict_log_proba(X)
        # ties go to the first (background) class
        return self.classes_[(logp[:, 1] > logp[:, 0]).astype(int)]

    def predict_frame(self, seq, frame_index, history: HistoryConfig = HistoryConfig()):
        """Background/Foreground mask for one frame of a sequence."""
        check_is_fitted(self, "params_")
        return net.classify_frame(seq, frame_index, self.params_, self.network_config(), history)

    def save(self, path):
        check_is_fitted(self, "params_")
        net.save_model(self.params_, self.network_config(), path)

    @classmethod
    def load(cls, path, **train_kwargs):
        params, cfg = net.load_model(path)
        est = cls(architecture=cfg.architecture, adl_filters=cfg.adl_filters,
                  adl_depth=cfg.adl_depth, hidden_units=cfg.hidden_units,
                  hist_width=cfg.hist_width, use_bias=cfg.use_bias, **train_kwargs)
        est.params_ = params
        est.classes_ = np.array([Label.BACKGROUND, Label.FOREGROUND])
        est.loss_curve_ = []
        est.n_features_in_ = 3 * cfg.hist_width
        return est


def frame_features(seq, frame_index, history: HistoryConfig = HistoryConfig()):
    """Flattened ``(H*W, 3, width)`` features, ready for ``predict``."""
    feats = extract_frame_features(seq, frame_index, history)
    return feats.reshape(-1, 3, history.width)
