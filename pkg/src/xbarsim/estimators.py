"""scikit-learn compatible wrapper around :class:`~xbarsim.training.AnalogNetwork`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .datasets import Dataset
from .training import AnalogNetwork, NetworkSpec


class CrossbarMLPClassifier(ClassifierMixin, BaseEstimator):
    """Multilayer perceptron trained per sample on simulated crossbars.

    Features must already lie in ``[0, 1]``.  ``mode="float"`` trains the
    numpy baseline; ``mode="analog"`` stores the weights on differential
    device pairs of ``device`` and updates them with pulse trains.

    Parameters
    ----------
    hidden : tuple of int
        Hidden layer sizes.
    activation : {"relu", "sigmoid"}
    eta : float
        Learning rate.
    epochs : int
    mode : {"float", "analog"}
    device : str or DeviceParams
        Device preset used in analog mode.
    mvm : {"ideal", "nonideal"}
    adc_bits : int or None
    zero_shift : bool
    random_state : int
    """

    def __init__(self, hidden=(32,), activation="relu", eta=0.05, epochs=3, mode="float",
                 device="ideal", mvm="ideal", adc_bits=None, zero_shift=False, random_state=0):
        self.hidden = hidden
        self.activation = activation
        self.eta = eta
        self.epochs = epochs
        self.mode = mode
        self.device = device
        self.mvm = mvm
        self.adc_bits = adc_bits
        self.zero_shift = zero_shift
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        check_classification_targets(y)
        if X.min() < 0 or X.max() > 1:
            raise ValueError("features must be scaled to [0, 1]")
        self.classes_, codes = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        dims = (X.shape[1], *tuple(self.hidden), len(self.classes_))
        spec = NetworkSpec(dims, self.activation, self.eta, self.epochs, self.random_state)
        self.network_ = AnalogNetwork(spec, self.mode, self.device if self.mode == "analog" else None,
                                      mvm=self.mvm, adc_bits=self.adc_bits,
                                      zero_shift=self.zero_shift)
        self.history_ = self.network_.fit(Dataset(X, codes, len(self.classes_)))
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.network_.predict_proba(X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
