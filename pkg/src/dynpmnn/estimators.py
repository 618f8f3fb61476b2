"""scikit-learn compatible regressors wrapping the training loop.

    >>> from dynpmnn import PMNNRegressor
    >>> reg = PMNNRegressor(dt=1.0, t_end=20.0).fit(X_train, y_train, eval_set=(X_val, y_val))
    >>> reg.predict(X_test)

Inputs are expected to be standardised already (see
:class:`dynpmnn.data.Standardizer`); compose with a ``Pipeline`` otherwise.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dynamics import FhnParams
from .model import MLPConfig, NODEConfig, PMNNConfig, param_count
from .train import TrainConfig, fit_params, predict


class _DynamicRegressorBase(RegressorMixin, BaseEstimator):
    """Shared fit/predict; subclasses only build their model config."""

    def _model_config(self, n_features, n_outputs):
        raise NotImplementedError

    def _train_config(self):
        return TrainConfig(
            max_epochs=self.max_epochs,
            patience=self.patience,
            min_delta=self.min_delta,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            seed=self.random_state,
            shuffle=self.shuffle,
        )

    def fit(self, X, y, eval_set=None):
        """Train with early stopping on ``eval_set=(X_val, y_val)`` (or on the training loss)."""
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        self._y_ndim = y.ndim
        Y = y.reshape(len(y), -1)
        X_val = Y_val = None
        if eval_set is not None:
            X_val, y_val = check_X_y(*eval_set, multi_output=True, y_numeric=True, dtype=np.float64)
            Y_val = y_val.reshape(len(y_val), -1)
        self.config_ = self._model_config(X.shape[1], Y.shape[1])
        fit = fit_params(self.config_, X, Y, X_val, Y_val, self._train_config())
        self.params_ = fit.params
        self.history_ = {
            "train_loss": fit.train_losses,
            "val_loss": fit.val_losses,
            "best_epoch": fit.best_epoch,
            "stopped_epoch": fit.stopped_epoch,
        }
        self.diverged_ = fit.diverged
        self.n_features_in_ = X.shape[1]
        self.n_params_ = param_count(self.config_)
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} was fitted with {self.n_features_in_}"
            )
        out = predict(self.config_, self.params_, X)
        return out.ravel() if self._y_ndim == 1 else out


class PMNNRegressor(_DynamicRegressorBase):
    """FitzHugh-Nagumo PMNN regressor.

    Parameters
    ----------
    fhn_units : int, default=1
        Number of FitzHugh-Nagumo units; the hidden state has ``2 * fhn_units`` entries.
    dt, t_end : float
        Euler step and integration horizon; ``t_end / dt`` must be integral.
        The defaults are the densest Euler-stable setting for the default
        FitzHugh-Nagumo coefficients.
    fhn_a, fhn_b, fhn_g, fhn_I : float
        FitzHugh-Nagumo coefficients (held fixed during training).
    use_layer_norm, use_pre_activation : bool
        Toggle LayerNorm and SiLU before the dynamics.
    batch_size, learning_rate, max_epochs, patience, min_delta, shuffle, random_state
        Training loop settings (Adam, early stopping on the eval set).
    """

    def __init__(self, fhn_units=1, dt=1.0, t_end=20.0, fhn_a=0.25, fhn_b=0.002,
                 fhn_g=2.5, fhn_I=0.0, use_layer_norm=True, use_pre_activation=True,
                 batch_size=32, learning_rate=5e-4, max_epochs=100, patience=10,
                 min_delta=5e-2, shuffle=True, random_state=0):
        self.fhn_units = fhn_units
        self.dt = dt
        self.t_end = t_end
        self.fhn_a = fhn_a
        self.fhn_b = fhn_b
        self.fhn_g = fhn_g
        self.fhn_I = fhn_I
        self.use_layer_norm = use_layer_norm
        self.use_pre_activation = use_pre_activation
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.min_delta = min_delta
        self.shuffle = shuffle
        self.random_state = random_state

    def _model_config(self, n_features, n_outputs):
        return PMNNConfig(
            input_dim=n_features,
            fhn_units=self.fhn_units,
            dt=self.dt,
            t_end=self.t_end,
            use_layer_norm=self.use_layer_norm,
            use_pre_activation=self.use_pre_activation,
            output_dim=n_outputs,
            fhn=FhnParams(self.fhn_a, self.fhn_b, self.fhn_g, self.fhn_I),
            seed=self.random_state,
        )


class NODERegressor(_DynamicRegressorBase):
    """Neural-ODE baseline differentiated through the unrolled Euler solver."""

    def __init__(self, hidden_dim=15, num_layers=2, dt=0.1, t_end=1.0, batch_size=32,
                 learning_rate=1e-3, max_epochs=100, patience=10, min_delta=5e-2,
                 shuffle=True, random_state=0):
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.dt = dt
        self.t_end = t_end
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.min_delta = min_delta
        self.shuffle = shuffle
        self.random_state = random_state

    def _model_config(self, n_features, n_outputs):
        return NODEConfig(
            input_dim=n_features,
            hidden_dim=self.hidden_dim,
            num_layers=self.num_layers,
            dt=self.dt,
            t_end=self.t_end,
            output_dim=n_outputs,
            seed=self.random_state,
        )


class MLPBaselineRegressor(_DynamicRegressorBase):
    """Static SiLU network; ``hidden_dim=2`` with LayerNorm matches the PMNN's 25 weights."""

    def __init__(self, hidden_dim=2, use_layer_norm=True, batch_size=32, learning_rate=5e-4,
                 max_epochs=100, patience=10, min_delta=5e-2, shuffle=True, random_state=0):
        self.hidden_dim = hidden_dim
        self.use_layer_norm = use_layer_norm
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.min_delta = min_delta
        self.shuffle = shuffle
        self.random_state = random_state

    def _model_config(self, n_features, n_outputs):
        return MLPConfig(
            input_dim=n_features,
            hidden_dim=self.hidden_dim,
            use_layer_norm=self.use_layer_norm,
            output_dim=n_outputs,
            seed=self.random_state,
        )
