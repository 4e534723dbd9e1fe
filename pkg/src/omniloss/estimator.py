"""scikit-learn style wrapper around the training loop."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ParameterError
from .optim import truncated_sample
from .trainer import TrainConfig, Variant, train

__all__ = ["ConditionalGAN"]


class ConditionalGAN(ClassifierMixin, BaseEstimator):
    """Class-conditional GAN on tabular points.

    ``fit`` trains a generator/discriminator pair on ``(X, y)``;
    ``sample`` draws class-conditional points; ``predict`` reads the trained
    discriminator as a classifier (argmax over its class scores).

    Parameters
    ----------
    variant : str
        Discriminator variant, see :data:`omniloss.trainer.VARIANTS`.
    preset : str
        Weight-decay preset name.
    steps, batch_size, z_dim : int
    hidden : int
        Width of the two hidden layers of both networks.
    lr_g, lr_d : float
    decay_mode : {'decoupled', 'coupled'}
    eval_interval : int
    random_state : int
    """

    def __init__(self, variant="omni", preset="no-decay", steps=2000, batch_size=64,
                 z_dim=16, hidden=64, lr_g=1e-4, lr_d=4e-4, decay_mode="decoupled",
                 eval_interval=250, random_state=0):
        self.variant = variant
        self.preset = preset
        self.steps = steps
        self.batch_size = batch_size
        self.z_dim = z_dim
        self.hidden = hidden
        self.lr_g = lr_g
        self.lr_d = lr_d
        self.decay_mode = decay_mode
        self.eval_interval = eval_interval
        self.random_state = random_state

    def _config(self, n_classes, n_samples):
        return TrainConfig(
            variant=self.variant, n_classes=n_classes, n_data=n_samples,
            z_dim=self.z_dim, g_hidden=(self.hidden,) * 2, d_hidden=(self.hidden,) * 2,
            batch_size=self.batch_size, lr_g=self.lr_g, lr_d=self.lr_d,
            decay_mode=self.decay_mode, steps=self.steps,
            eval_interval=self.eval_interval, seed=self.random_state,
        ).with_preset(self.preset)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 1:
            raise ParameterError("need at least one class")
        encoded = np.searchsorted(self.classes_, y)
        self.n_features_in_ = X.shape[1]
        self.config_ = self._config(len(self.classes_), len(X))
        result = train(self.config_, data=(X, encoded, None))
        self.generator_ = result.generator
        self.discriminator_ = result.discriminator
        self.history_ = result.rows
        self.collapse_ = result.collapse
        return self

    def sample(self, n, classes=None, sigma=None, random_state=None):
        """Draw ``n`` points; returns ``(X, y)``.

        ``classes`` defaults to a round-robin over the fitted classes;
        ``sigma`` enables truncated latents.
        """
        check_is_fitted(self, "generator_")
        rng = np.random.default_rng(self.random_state if random_state is None else random_state)
        if classes is None:
            idx = np.arange(n) % len(self.classes_)
        else:
            classes = np.broadcast_to(np.asarray(classes), (n,))
            idx = np.minimum(np.searchsorted(self.classes_, classes), len(self.classes_) - 1)
            if np.any(self.classes_[idx] != classes):
                raise ParameterError("unknown class label")
        z = (rng.standard_normal((n, self.z_dim)) if sigma is None
             else truncated_sample(rng, self.z_dim, sigma, size=n))
        X = self.generator_.forward(z, idx)
        self.generator_.reset()
        return X, self.classes_[idx]

    def decision_function(self, X):
        """Per-class discriminator scores, ``(n, n_classes)``."""
        check_is_fitted(self, "discriminator_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ParameterError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        D = self.discriminator_
        if D.head == "projection":
            scores = np.column_stack([D.forward(X, np.full(len(X), c))
                                      for c in range(len(self.classes_))])
        else:
            scores = Variant(self.variant, len(self.classes_)).class_scores(D.forward(X))
        D.reset()
        return scores

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
