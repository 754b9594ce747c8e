import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import as_stack
from .train import TrainConfig, denoise_image, train


class SelfSupervisedDenoiser(TransformerMixin, BaseEstimator):
    """Denoiser trained from noisy frames alone.

    ``fit`` accepts a FrameSequence, a list of PolarFrame or an array stack of
    shape (n, H, W); ``transform`` returns an (n, H, W) float array. After
    fitting, ``model_`` holds the network and ``history_`` the per-epoch losses.
    """

    def __init__(self, gamma=1.0, learning_rate=1e-3, epochs=50, batch_size=4,
                 gamma_ramp=False, random_state=0):
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.gamma_ramp = gamma_ramp
        self.random_state = random_state

    def _config(self):
        return TrainConfig(gamma=self.gamma, learning_rate=self.learning_rate, epochs=self.epochs,
                           batch_size=self.batch_size, gamma_ramp=self.gamma_ramp,
                           seed=self.random_state)

    def fit(self, X, y=None):
        self.model_, self.history_ = train(as_stack(X), self._config())
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return np.stack([denoise_image(self.model_, img) for img in as_stack(X)])
