"""Restoring degraded images by optimizing a trained generator's input.

Given an observation ``x_hat = phi(x)`` the latent ``z`` (and optionally the
generator parameters) are fitted so that ``phi(G(z))`` matches ``x_hat``
under a distance between discriminator trunk activations. Because the
generator renders through an INR head, the restored image can then be
drawn at any resolution.

Images are ``(H, W, channels)`` arrays with values in ``[-1, 1]``. The
discriminator has a fixed input size, so a degraded image is lifted back to
the native shape before it is scored (nearest-neighbour upsampling for
``downsample``, channel replication for ``grayscale``); both sides of the
distance go through the same lift.
"""

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NonFiniteError, ParameterError, ShapeError
from .inr import bilinear_sample, make_coord_grid

__all__ = [
    "Degradation",
    "InversionConfig",
    "InversionResult",
    "degrade",
    "feature_distance",
    "invert",
    "psnr",
    "bilinear_upsample",
    "PSNR_CAP",
]

# Reported for identical images instead of +inf.
PSNR_CAP = 99.0


@dataclass(frozen=True)
class Degradation:
    kind: str = "identity"  # 'identity', 'downsample' or 'grayscale'
    factor: int = 1

    def __post_init__(self):
        if self.kind not in ("identity", "downsample", "grayscale"):
            raise ParameterError(f"unknown degradation {self.kind!r}")
        if int(self.factor) != self.factor or self.factor < 1:
            raise ParameterError("factor must be an integer >= 1")

    @classmethod
    def parse(cls, text):
        """``'identity'``, ``'grayscale'`` or ``'downsample:4'``."""
        kind, _, arg = text.partition(":")
        if kind == "downsample":
            try:
                return cls("downsample", int(arg or 2))
            except ValueError:
                raise ParameterError(f"bad downsample factor in {text!r}") from None
        if arg:
            raise ParameterError(f"{kind} takes no argument")
        return cls(kind)

    def __str__(self):
        return f"downsample:{self.factor}" if self.kind == "downsample" else self.kind


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"images must be (H, W, ch) or (N, H, W, ch), got {x.shape}")


def degrade(x, d):
    """Apply ``d`` to one image ``(H, W, ch)`` or a batch ``(N, H, W, ch)``."""
    xb, single = _as_batch(x)
    if d.kind == "identity":
        out = xb.copy()
    elif d.kind == "grayscale":
        out = xb.mean(axis=3, keepdims=True)
    else:
        f = d.factor
        N, H, W, ch = xb.shape
        if H % f or W % f:
            raise ShapeError(f"{H}x{W} image is not divisible by factor {f}")
        out = xb.reshape(N, H // f, f, W // f, f, ch).mean(axis=(2, 4))
    return out[0] if single else out


def _degrade_backward(grad, d, shape):
    """Adjoint of :func:`degrade` for a batch of native ``shape``."""
    if d.kind == "identity":
        return grad
    if d.kind == "grayscale":
        return np.broadcast_to(grad / shape[3], shape).copy()
    f = d.factor
    up = np.repeat(np.repeat(grad, f, axis=1), f, axis=2)
    return up / (f * f)


def _lift(obs, d):
    """Bring a degraded batch back to native shape for the discriminator."""
    if d.kind == "grayscale":
        return np.repeat(obs, 3, axis=3)
    if d.kind == "downsample":
        return np.repeat(np.repeat(obs, d.factor, axis=1), d.factor, axis=2)
    return obs


def _lift_backward(grad, d):
    N, H, W, ch = grad.shape
    if d.kind == "grayscale":
        return grad.sum(axis=3, keepdims=True)
    if d.kind == "downsample":
        f = d.factor
        return grad.reshape(N, H // f, f, W // f, f, ch).sum(axis=(2, 4))
    return grad


def _check_layers(D, layers):
    layers = list(layers)
    if not layers:
        raise ParameterError("need at least one feature layer")
    for i in layers:
        if not 0 <= i < D.depth:
            raise ParameterError(f"feature layer {i} outside trunk depth {D.depth}")
    return layers


def feature_distance(D, x1, x2, layers, return_grad=False):
    """Sum over ``layers`` of the mean absolute difference of trunk activations.

    ``x1`` and ``x2`` are batches flattened by the discriminator. With
    ``return_grad`` the gradient with respect to ``x1`` is returned as well
    (the subgradient at equal activations is taken as zero).
    """
    layers = _check_layers(D, layers)
    x1 = np.asarray(x1, dtype=np.float64)
    f2 = D.features(x2, layers)
    if not return_grad:
        f1 = D.features(x1, layers)
        return float(sum(np.mean(np.abs(a - b)) for a, b in zip(f1, f2)))
    _, f1 = D.forward(x1, np.zeros(len(x1), dtype=int) if D.head == "projection" else None,
                      features=layers)
    value = float(sum(np.mean(np.abs(a - b)) for a, b in zip(f1, f2)))
    taps = {i: np.sign(a - b) / a.size for i, a, b in zip(layers, f1, f2)}
    dx = D.backward(None, feature_grads=taps)
    return value, dx.reshape(x1.shape)


@dataclass
class InversionConfig:
    steps: int = 800
    lr_z: float = 0.5
    finetune_theta: bool = False
    lr_theta: float = 1e-3
    layers: tuple = (0, 1)
    init: str = "random"  # 'zero', 'random' or 'best_of_k'
    k: int = 8
    seed: int = 0
    optimizer: str = "gd"  # 'gd' (fixed step) or 'adam'

    def __post_init__(self):
        if self.steps < 0:
            raise ParameterError("steps must be non-negative")
        if self.lr_z <= 0 or self.lr_theta <= 0:
            raise ParameterError("learning rates must be positive")
        if self.init not in ("zero", "random", "best_of_k"):
            raise ParameterError(f"unknown init {self.init!r}")
        if self.k < 1:
            raise ParameterError("k must be >= 1")
        if self.optimizer not in ("gd", "adam"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")
        self.layers = tuple(self.layers)


@dataclass
class InversionResult:
    z: np.ndarray
    theta: dict
    restored: np.ndarray
    trace: list = field(repr=False)

    @property
    def initial(self):
        return self.trace[0]

    @property
    def final(self):
        return self.trace[-1]


class _Problem:
    """Objective ``feature_distance(phi(G(z)), x_hat)`` and its gradients."""

    def __init__(self, G, D, observation, d, layers, cls):
        self.G, self.D, self.d = G, D, d
        self.layers = _check_layers(D, layers)
        self.cls = np.array([cls])
        H, W = G.image_size
        self.native = (1, H, W, 3)
        expected = degrade(np.zeros(self.native), d).shape
        obs, _ = _as_batch(observation)
        if obs.shape != expected:
            raise ShapeError(f"observation has shape {obs.shape[1:]}, expected {expected[1:]}")
        self.target = _lift(obs, d).reshape(1, -1)
        self.target_feats = D.features(self.target, self.layers)

    def value(self, z):
        x = self.G.forward(z.reshape(1, -1), self.cls)
        self.G.reset()
        lifted = _lift(degrade(x, self.d), self.d).reshape(1, -1)
        f = self.D.features(lifted, self.layers)
        return float(sum(np.mean(np.abs(a - b)) for a, b in zip(f, self.target_feats)))

    def value_and_grad(self, z):
        G, D = self.G, self.D
        G.zero_grad()
        x = G.forward(z.reshape(1, -1), self.cls)
        lifted = _lift(degrade(x, self.d), self.d).reshape(1, -1)
        _, feats = D.forward(lifted, self.cls if D.head == "projection" else None,
                             features=self.layers)
        value = float(sum(np.mean(np.abs(a - b)) for a, b in zip(feats, self.target_feats)))
        taps = {i: np.sign(a - b) / a.size
                for i, a, b in zip(self.layers, feats, self.target_feats)}
        g = D.backward(None, feature_grads=taps).reshape(x.shape)
        g = _degrade_backward(_lift_backward(g, self.d), self.d, x.shape)
        dz = G.backward(g)
        D.zero_grad()
        return value, dz.reshape(z.shape)


class _Adam:
    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = self.v = None
        self.t = 0

    def delta(self, g):
        b1, b2 = self.betas
        if self.m is None:
            self.m, self.v = np.zeros_like(g), np.zeros_like(g)
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * g
        self.v = b2 * self.v + (1 - b2) * g * g
        mh = self.m / (1 - b1**self.t)
        vh = self.v / (1 - b2**self.t)
        return self.lr * mh / (np.sqrt(vh) + self.eps)


def _initial_z(problem, config, z_dim):
    rng = np.random.default_rng(config.seed)
    if config.init == "zero":
        return np.zeros(z_dim)
    if config.init == "random":
        return rng.standard_normal(z_dim)
    candidates = rng.standard_normal((config.k, z_dim))
    scores = [problem.value(c) for c in candidates]
    return candidates[int(np.argmin(scores))].copy()


def invert(G, D, observation, degradation, config=None, cls=0, size=None):
    """Fit ``z`` (and optionally ``G``'s parameters) to a degraded observation.

    Parameters
    ----------
    G : INRGenerator
        Trained generator; it is copied, never modified.
    D : Discriminator
        Trained discriminator whose trunk defines the distance.
    observation : ndarray
        ``degrade(x, degradation)`` of a single native-size image.
    degradation : Degradation
    config : InversionConfig, optional
    cls : int
        Class fed to the generator.
    size : (int, int), optional
        Resolution of the returned restoration; native by default.

    Returns
    -------
    InversionResult
        ``trace[k]`` is the objective before step ``k``; the last entry is
        the objective at the returned state.
    """
    config = InversionConfig() if config is None else config
    G = copy.deepcopy(G)
    D = copy.deepcopy(D)
    problem = _Problem(G, D, observation, degradation, config.layers, cls)
    z = _initial_z(problem, config, G.z_dim)
    params = G.parameters()
    use_adam = config.optimizer == "adam"
    opt_z = _Adam(config.lr_z) if use_adam else None
    opt_t = {k: _Adam(config.lr_theta) for k in params} if use_adam else None
    trace = []
    for step in range(config.steps):
        value, dz = problem.value_and_grad(z)
        if not math.isfinite(value) or not np.all(np.isfinite(dz)):
            raise NonFiniteError(f"non-finite inversion objective at step {step}", name="z")
        trace.append(value)
        z = z - (opt_z.delta(dz) if use_adam else config.lr_z * dz)
        if config.finetune_theta:
            for name, g in G.gradients().items():
                p = params[name]
                p -= opt_t[name].delta(g) if use_adam else config.lr_theta * g
    final = problem.value(z)
    if not math.isfinite(final):
        raise NonFiniteError("non-finite inversion objective at the final state", name="z")
    trace.append(final)
    restored = G.forward(z.reshape(1, -1), np.array([cls]), size=size)[0]
    G.reset()
    theta = {k: v.copy() for k, v in params.items()}
    return InversionResult(z, theta, restored, trace)


def psnr(a, b, peak=2.0):
    """Peak signal-to-noise ratio in dB, capped at :data:`PSNR_CAP`.

    The default peak is the width of the ``[-1, 1]`` image range.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if not peak > 0:
        raise ParameterError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def bilinear_upsample(image, H, W):
    """Bilinear resize of an ``(h, w, ch)`` image to ``(H, W, ch)`` on cell centres."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError("image must be (h, w, ch)")
    out = bilinear_sample(np.moveaxis(image, 2, 0), make_coord_grid(H, W))
    return out.reshape(H, W, image.shape[2])
