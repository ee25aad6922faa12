"""Scikit-learn estimator wrapping the DP-SGD engine.

``DPSGDClassifier`` trains a small fully-connected network with
differentially private SGD and exposes the usual fit/predict/score surface,
so it composes with pipelines, grid search, and the rest of the sklearn
ecosystem.  The fitted privacy guarantee is available as
``privacy_report_``.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import accountant
from .clipping import ClipSpec
from .engine import TrainConfig, dpsgd_general
from .errors import ConfigurationError
from .network import Batch, forward, init_weights, mlp, softmax
from .sampling import SplitSpec, split_public


class DPSGDClassifier(BaseEstimator, ClassifierMixin):
    """Differentially private MLP classifier.

    Parameters mirror one training run: ``clipping`` picks the micro-batch
    structure ("ic" clips per-sample gradients, "bc" clips the averaged
    batch gradient, "gbc" clips micro-batch gradients of
    ``micro_batch_size``), ``scope`` clips the whole gradient or each layer
    at its own constant, and ``constant_strategy`` optionally derives the
    layerwise constants from a public split of the training data
    (``public_fraction``) at every epoch.
    """

    def __init__(
        self,
        hidden_layer_sizes=(32,),
        activation="tanh",
        batchnorm=False,
        clipping="bc",
        micro_batch_size=None,
        scope="full",
        constant_strategy="fixed",
        master_c=1.0,
        c_decay=1.0,
        sigma=1.0,
        eta0=0.1,
        eta_decay=1.0,
        epochs=10,
        batch_size=32,
        sampling="sh",
        noise_convention="general",
        public_fraction=0.1,
        layer_groups=None,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.batchnorm = batchnorm
        self.clipping = clipping
        self.micro_batch_size = micro_batch_size
        self.scope = scope
        self.constant_strategy = constant_strategy
        self.master_c = master_c
        self.c_decay = c_decay
        self.sigma = sigma
        self.eta0 = eta0
        self.eta_decay = eta_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.sampling = sampling
        self.noise_convention = noise_convention
        self.public_fraction = public_fraction
        self.layer_groups = layer_groups
        self.random_state = random_state

    def _micro_structure(self):
        if self.clipping == "ic":
            return 1, self.batch_size
        if self.clipping == "bc":
            return self.batch_size, 1
        if self.clipping == "gbc":
            s = self.micro_batch_size
            if s is None or s < 1 or self.batch_size % s != 0:
                raise ConfigurationError(
                    "gbc clipping requires micro_batch_size to divide batch_size"
                )
            return s, self.batch_size // s
        raise ConfigurationError(
            f"clipping must be one of ('ic', 'bc', 'gbc'), got {self.clipping!r}"
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        X = np.asarray(X, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("classifier needs at least two classes")
        self.n_features_in_ = X.shape[1]

        s, m = self._micro_structure()
        spec = ClipSpec(
            mode=self.clipping,
            scope=self.scope,
            master_c=self.master_c,
            c_decay=self.c_decay,
            constant_strategy=self.constant_strategy,
            layer_groups=self.layer_groups,
        )
        config = TrainConfig(
            eta0=self.eta0,
            epochs=self.epochs,
            s=s,
            m=m,
            sigma=self.sigma,
            eta_decay=self.eta_decay,
            sampling=self.sampling,
            noise_convention=self.noise_convention,
            clip=spec,
            seed=self.random_state,
        )

        public_batch = None
        if self.constant_strategy != "fixed":
            train_idx, public_idx = split_public(
                X.shape[0], SplitSpec(self.public_fraction, seed=self.random_state)
            )
            public_batch = Batch(X[public_idx], y_idx[public_idx])
            train_batch = Batch(X[train_idx], y_idx[train_idx])
        else:
            train_batch = Batch(X, y_idx)

        model = mlp(
            X.shape[1],
            tuple(self.hidden_layer_sizes),
            self.classes_.size,
            activation=self.activation,
            batchnorm=self.batchnorm,
        )
        result = dpsgd_general(
            config,
            model,
            train_batch,
            public_data=public_batch,
            initial_weights=init_weights(model, self.random_state),
        )
        self.model_ = model
        self.weights_ = result.weights
        self.bn_state_ = result.bn_state
        self.train_result_ = result
        inputs = result.accountant_inputs
        self.privacy_report_ = accountant.framework_guarantee(
            g=inputs["g"],
            epochs=inputs["epochs"],
            sigma=inputs["sigma"],
            layers=inputs["num_groups"],
            layerwise=inputs["layerwise"],
        )
        return self

    def decision_function(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return forward(
            self.model_, self.weights_, np.asarray(X, dtype=np.float64),
            bn_state=self.bn_state_,
        )

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        check_is_fitted(self, "weights_")
        return self.classes_[self.decision_function(X).argmax(axis=1)]
