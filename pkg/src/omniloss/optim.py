"""Adam with weight decay, a finite-difference gradient checker and
truncated latent sampling."""

import numpy as np

from .exceptions import NonFiniteError, ParameterError, ShapeError

__all__ = [
    "Adam",
    "DECAY_PRESETS",
    "grad_check",
    "relative_error",
    "truncated_sample",
]

# (lambda_D, lambda_G) keyed by dataset-size regime; smaller datasets
# overfit the discriminator sooner and need stronger decay.
DECAY_PRESETS = {
    "no-decay": (0.0, 0.0),
    "small-decay": (5e-4, 1e-3),
    "medium-decay": (1e-4, 1e-3),
    "large-decay": (1e-5, 1e-3),
}


class Adam:
    """Adam over a ``{name: array}`` mapping, updated in place.

    Parameters
    ----------
    params : dict of str to ndarray
        Live parameter arrays.
    lr : float
    betas : (float, float)
    eps : float
    weight_decay : float
        Decay coefficient ``lambda``.
    decay_mode : {'decoupled', 'coupled'}
        ``decoupled`` shrinks ``param -= lr * lambda * param`` next to the
        Adam update; ``coupled`` adds ``lambda * param`` to the gradient
        before the moment estimates.
    exclude : iterable of str
        Parameter names exempt from decay.
    """

    def __init__(self, params, lr=1e-4, betas=(0.0, 0.999), eps=1e-8,
                 weight_decay=0.0, decay_mode="decoupled", exclude=()):
        if lr <= 0:
            raise ParameterError("lr must be positive")
        if weight_decay < 0:
            raise ParameterError("weight_decay must be non-negative")
        if decay_mode not in ("decoupled", "coupled"):
            raise ParameterError(f"unknown decay_mode {decay_mode!r}")
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay_mode = decay_mode
        self.exclude = frozenset(exclude)
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}

    def step(self, grads):
        """Apply one update from ``{name: gradient}``."""
        for name, g in grads.items():
            if name not in self.params:
                raise ShapeError(f"unknown parameter {name!r}")
            if np.shape(g) != self.params[name].shape:
                raise ShapeError(f"{name}: gradient shape {np.shape(g)}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {name!r}", name=name)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, g in grads.items():
            p = self.params[name]
            decay = 0.0 if name in self.exclude else self.weight_decay
            if decay and self.decay_mode == "coupled":
                g = g + decay * p
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if decay and self.decay_mode == "decoupled":
                update = update + self.lr * decay * p
            p -= update

    def state_dict(self):
        return {"step": self.step_count, "m": self.m, "v": self.v}


def relative_error(a, b, floor=1e-8):
    """Elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numerical_gradient(f, x, step=1e-6, dtype=np.float64):
    """Central-difference gradient of a scalar function at ``x``.

    ``dtype`` sets the precision of the probe points; pass ``np.longdouble``
    together with an ``f`` that computes in that precision to push the
    roundoff floor below float64 resolution.
    """
    x = np.array(x, dtype=dtype)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f(x)
        flat[i] = orig - step
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def grad_check(f, grad, point, step=1e-6, dtype=np.float64):
    """Worst relative error between an analytic and a numerical gradient.

    Parameters
    ----------
    f : callable
        Scalar function of an array shaped like ``point``.
    grad : callable or ndarray
        Analytic gradient at ``point`` (or a function returning it).
    point : array_like
    step : float
        Central-difference half width.
    dtype : numpy dtype
        Precision of the finite-difference probes.
    """
    point = np.array(point, dtype=dtype)
    analytic = grad(point.copy()) if callable(grad) else np.asarray(grad)
    numeric = numerical_gradient(f, point, step, dtype)
    if np.shape(analytic) != numeric.shape:
        raise ShapeError("analytic gradient shape does not match the point")
    if numeric.size == 0:
        return 0.0
    return float(np.max(relative_error(analytic, numeric)))


def truncated_sample(rng, d_z, sigma, size=None):
    """Standard normal components redrawn until ``|z_i| <= sigma``.

    Returns shape ``(d_z,)``, or ``(size, d_z)`` when ``size`` is given.
    """
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    shape = (d_z,) if size is None else (size, d_z)
    z = rng.standard_normal(shape)
    bad = np.abs(z) > sigma
    while np.any(bad):
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > sigma
    return z
