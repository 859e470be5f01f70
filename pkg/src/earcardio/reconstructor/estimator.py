"""scikit-learn style wrapper around training and inference."""

from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import as_cycles
from .model import ModelConfig
from .training import CalibrationConfig, TrainConfig, calibrate, predict, train


class CardiacReconstructor(BaseEstimator, RegressorMixin):
    """``fit(X_ear, Y_target)`` / ``predict(X_ear)`` on ``(n, 400)`` cycles.

    ``score`` is the mean per-cycle Pearson correlation rather than R^2.
    """

    def __init__(self, target_modality="SCG", channels_per_branch=16, encoder_blocks=3,
                 global_kernel=48, attention_dim=64, dropout_p=0.2, lr=1e-3,
                 batch_size=32, max_epochs=20, early_stop_patience=None, seed=42):
        self.target_modality = target_modality
        self.channels_per_branch = channels_per_branch
        self.encoder_blocks = encoder_blocks
        self.global_kernel = global_kernel
        self.attention_dim = attention_dim
        self.dropout_p = dropout_p
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.seed = seed

    def _configs(self):
        mcfg = ModelConfig(
            channels_per_branch=self.channels_per_branch, encoder_blocks=self.encoder_blocks,
            global_kernel=self.global_kernel, attention_dim=self.attention_dim,
            dropout_p=self.dropout_p, target_modality=self.target_modality,
        )
        tcfg = TrainConfig(lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                           early_stop_patience=self.early_stop_patience, seed=self.seed)
        return mcfg, tcfg

    def fit(self, X, y):
        mcfg, tcfg = self._configs()
        X = as_cycles(X, length=mcfg.input_len)
        y = as_cycles(y, length=mcfg.input_len)
        self.model_, self.loss_history_ = train(mcfg, tcfg, (X, y))
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict(self.model_, X)

    def calibrate(self, X, y, epochs=50, lr=1e-4, batch_size=1):
        """Return a fine-tuned copy; ``self`` is left unchanged."""
        check_is_fitted(self, "model_")
        from sklearn.base import clone

        new = clone(self)
        pairs = (as_cycles(X), as_cycles(y)) if len(X) else []
        new.model_ = calibrate(self.model_, pairs,
                               CalibrationConfig(epochs, lr, batch_size, self.seed))
        new.loss_history_ = self.loss_history_
        return new

    def score(self, X, y, sample_weight=None):
        from ..metrics import rowwise_pearson

        return float(rowwise_pearson(self.predict(X), as_cycles(y)).mean())
