"""Conditional-GAN training loop over every discriminator variant.

Variants differ only in the discriminator head width, the target
construction and the loss composition:

=============  ==========  ===================================================
variant        head width  discriminator / generator objective
=============  ==========  ===================================================
omni           C + 2       omni-loss, full +-1 targets
one_sided      C + 2       omni-loss, only the conditioning class supervised
imacgan        1 + C + 1   hinge + cross-entropy, fakes form class ``C``
acgan          1 + C       hinge + cross-entropy, fakes keep their class
multi_hinge    C + 1       multi-class hinge, fakes form class ``C``
projection     scalar      hinge on ``<V_c, f_1(x)> + f_2(f_1(x))``
=============  ==========  ===================================================
"""

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import labels, losses
from .exceptions import NonFiniteError, ParameterError
from .inr import INRGenerator
from .nn import Discriminator, Generator
from .optim import DECAY_PRESETS, Adam
from .toydata import MetricsRow, make_gaussian_ring, make_pattern_images, mode_coverage

__all__ = [
    "VARIANTS",
    "TrainConfig",
    "CollapseReport",
    "TrainResult",
    "Variant",
    "build_models",
    "d_step",
    "g_step",
    "evaluate",
    "train",
    "detect_collapse",
]

VARIANTS = ("omni", "one_sided", "imacgan", "acgan", "multi_hinge", "projection")


@dataclass
class TrainConfig:
    """Everything that determines a training run."""

    variant: str = "omni"
    task: str = "ring"  # 'ring' (2-D points) or 'image' (INR generator)
    n_classes: int = 8
    modes_per_class: int = 1
    sigma_data: float = 0.05
    n_data: int = 512
    z_dim: int = 16
    g_hidden: tuple = (64, 64)
    d_hidden: tuple = (64, 64)
    batch_size: int = 64
    d_steps: int = 1
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    betas: tuple = (0.0, 0.999)
    weight_decay_g: float = 0.0
    weight_decay_d: float = 0.0
    decay_mode: str = "decoupled"
    decay_exclude_bias: bool = False
    steps: int = 20000
    eval_interval: int = 250
    n_eval: int = 512
    seed: int = 0
    drop_fraction: float = 0.5
    collapse_window: int = 4
    # image task
    image_size: tuple = (8, 8)
    grid_shape: tuple = (8, 4, 4)
    inr_hidden: int = 32

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"variant must be one of {VARIANTS}")
        if self.task not in ("ring", "image"):
            raise ParameterError("task must be 'ring' or 'image'")
        for name in ("n_classes", "modes_per_class", "n_data", "z_dim", "batch_size",
                     "d_steps", "eval_interval", "n_eval"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.steps < 0:
            raise ParameterError("steps must be non-negative")
        self.g_hidden, self.d_hidden = tuple(self.g_hidden), tuple(self.d_hidden)
        self.betas = tuple(self.betas)
        self.image_size, self.grid_shape = tuple(self.image_size), tuple(self.grid_shape)

    def with_preset(self, preset):
        """Copy with the decay coefficients of a named preset."""
        if preset not in DECAY_PRESETS:
            raise ParameterError(f"preset must be one of {sorted(DECAY_PRESETS)}")
        lam_d, lam_g = DECAY_PRESETS[preset]
        return replace(self, weight_decay_d=lam_d, weight_decay_g=lam_g)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CollapseReport:
    collapsed: bool
    step: int  # evaluation step of the crossing, -1 when not collapsed
    peak: float
    trough: float


@dataclass
class TrainResult:
    rows: list
    collapse: CollapseReport
    generator: object
    discriminator: object
    config: TrainConfig
    data: tuple = field(repr=False, default=None)
    aborted: bool = False


class Variant:
    """Head width and loss composition of one discriminator variant."""

    def __init__(self, name, n_classes):
        if name not in VARIANTS:
            raise ParameterError(f"variant must be one of {VARIANTS}")
        self.name, self.C = name, n_classes

    @property
    def head_width(self):
        C = self.C
        return {"omni": C + 2, "one_sided": C + 2, "imacgan": C + 2,
                "acgan": C + 1, "multi_hinge": C + 1, "projection": 1}[self.name]

    @property
    def uses_projection(self):
        return self.name == "projection"

    def _hinge_ce(self, out, role, ce_target):
        adv = losses.hinge_gan_loss(out[:, 0], role)
        ce = losses.softmax_ce_loss(out[:, 1:], ce_target)
        grad = np.concatenate([adv.grad[:, None], ce.grad], axis=1)
        return adv.value + ce.value, grad

    def d_loss(self, out_real, c_real, out_fake, c_fake):
        """Discriminator loss ``E_real + E_fake`` and the two score gradients."""
        C, name = self.C, self.name
        if name == "omni":
            r = losses.omni_loss(out_real, labels.omni_target_batch("real", c_real, C))
            f = losses.omni_loss(out_fake, labels.omni_target_batch("fake", c_fake, C))
        elif name == "one_sided":
            r = losses.omni_loss(out_real, labels.oneside_target_batch("real", c_real, C))
            f = losses.omni_loss(out_fake, labels.oneside_target_batch("fake", c_fake, C))
        elif name in ("imacgan", "acgan"):
            fake_cls = np.full_like(c_fake, C) if name == "imacgan" else c_fake
            rv, rg = self._hinge_ce(out_real, "d_real", c_real)
            fv, fg = self._hinge_ce(out_fake, "d_fake", fake_cls)
            return rv + fv, rg, fg
        elif name == "multi_hinge":
            r = losses.multi_hinge_loss(out_real, c_real)
            f = losses.multi_hinge_loss(out_fake, np.full_like(c_fake, C))
        else:
            r = losses.hinge_gan_loss(out_real, "d_real")
            f = losses.hinge_gan_loss(out_fake, "d_fake")
        return r.value + f.value, r.grad, f.grad

    def g_loss(self, out_fake, c_gen):
        C, name = self.C, self.name
        if name == "omni":
            res = losses.omni_loss(out_fake, labels.omni_target_batch("gen", c_gen, C))
        elif name == "one_sided":
            res = losses.omni_loss(out_fake, labels.oneside_target_batch("gen", c_gen, C))
        elif name in ("imacgan", "acgan"):
            return self._hinge_ce(out_fake, "g", c_gen)
        elif name == "multi_hinge":
            res = losses.multi_hinge_loss(out_fake, c_gen)
        else:
            res = losses.hinge_gan_loss(out_fake, "g")
        return res.value, res.grad

    def class_scores(self, out):
        """Per-class logits used to read the discriminator as a classifier."""
        if self.name in ("omni", "one_sided", "multi_hinge"):
            return out[:, : self.C]
        return out[:, 1 : self.C + 1]


def load_data(config):
    """Training data ``(samples, labels, ring_dataset_or_None)`` for a config."""
    if config.task == "ring":
        ds = make_gaussian_ring(config.n_classes, config.modes_per_class,
                                config.sigma_data, config.n_data, config.seed)
        return ds.samples, ds.labels, ds
    images, y = make_pattern_images(config.n_classes, config.n_data,
                                    config.image_size[0], seed=config.seed)
    return images, y, None


def build_models(config, rng, in_dim=None):
    """Fresh generator and discriminator for ``config``."""
    variant = Variant(config.variant, config.n_classes)
    if config.task == "ring":
        in_dim = 2 if in_dim is None else in_dim
        G = Generator(config.n_classes, config.z_dim, hidden=config.g_hidden,
                      out_dim=in_dim, output="linear", rng=rng)
    else:
        if config.image_size[0] != config.image_size[1]:
            raise ParameterError("training images must be square")
        G = INRGenerator(config.n_classes, config.z_dim, grid_shape=config.grid_shape,
                         image_size=config.image_size, hidden=config.g_hidden,
                         inr_hidden=config.inr_hidden, rng=rng)
        in_dim = G.out_dim
    head = "projection" if variant.uses_projection else "vector"
    D = Discriminator(in_dim, hidden=config.d_hidden, head=head,
                      out_dim=variant.head_width, n_classes=config.n_classes, rng=rng)
    return G, D


def _d_forward(D, variant, x, classes):
    out = D.forward(x, classes if variant.uses_projection else None)
    if not np.all(np.isfinite(out)):
        D.reset()
        raise NonFiniteError("non-finite discriminator output", name="D")
    return out


def d_step(variant, D, G, batch, opt_D, rng, z_dim):
    """One discriminator update on a real batch and a detached fake batch.

    Parameters
    ----------
    batch : (ndarray, ndarray)
        Real samples and their classes.
    """
    x_real, c_real = batch
    n = len(x_real)
    z = rng.standard_normal((n, z_dim))
    c_fake = rng.integers(0, variant.C, size=n)
    x_fake = G.forward(z, c_fake)
    G.reset()
    D.zero_grad()
    # no batch statistics in D, so one pass over real and fake is exact
    x_all = np.concatenate([x_real.reshape(n, -1), x_fake.reshape(n, -1)])
    out = _d_forward(D, variant, x_all, np.concatenate([c_real, c_fake]))
    value, g_real, g_fake = variant.d_loss(out[:n], c_real, out[n:], c_fake)
    if not math.isfinite(value):
        D.reset()
        raise NonFiniteError("non-finite discriminator loss", name="d_loss")
    D.backward(np.concatenate([g_real, g_fake]))
    opt_D.step(D.gradients())
    return value


def g_step(variant, D, G, n, opt_G, rng, z_dim):
    """One generator update through a frozen discriminator."""
    z = rng.standard_normal((n, z_dim))
    c = rng.integers(0, variant.C, size=n)
    G.zero_grad()
    x_fake = G.forward(z, c)
    out = _d_forward(D, variant, x_fake, c)
    value, grad = variant.g_loss(out, c)
    if not math.isfinite(value):
        raise NonFiniteError("non-finite generator loss", name="g_loss")
    dx = D.backward(grad).reshape(np.shape(x_fake))
    D.zero_grad()
    G.backward(dx)
    opt_G.step(G.gradients())
    return value


def _generate(G, z, classes, chunk=1024):
    out = []
    for i in range(0, len(z), chunk):
        out.append(G.forward(z[i:i + chunk], classes[i:i + chunk]))
        G.reset()
    return np.concatenate(out)


def evaluate(G, eval_z, eval_c, data):
    """``(mode_coverage, class_fidelity, high_quality_fraction)`` of G.

    Point tasks use :func:`~omniloss.toydata.mode_coverage`. For images a
    sample is high quality when its RMS distance to the nearest training
    image is below 0.25, and correctly classed when that image shares the
    intended class; coverage counts classes hit.
    """
    samples, y, ring = data
    gen = _generate(G, eval_z, eval_c)
    if ring is not None:
        return mode_coverage(gen, eval_c, ring)
    flat_gen = gen.reshape(len(gen), -1)
    flat_data = samples.reshape(len(samples), -1)
    d2 = (np.sum(flat_gen**2, 1)[:, None] - 2 * flat_gen @ flat_data.T
          + np.sum(flat_data**2, 1)[None, :])
    nearest = np.argmin(d2, axis=1)
    rms = np.sqrt(np.maximum(d2[np.arange(len(gen)), nearest], 0) / flat_gen.shape[1])
    good = rms <= 0.25
    correct = good & (y[nearest] == eval_c)
    n_good = int(good.sum())
    C = int(y.max()) + 1
    return (np.unique(eval_c[correct]).size / C,
            float(correct.sum() / n_good) if n_good else 0.0,
            n_good / len(gen))


def detect_collapse(values, drop_fraction=0.5, window=4, steps=None):
    """Flag a sustained drop of a quality metric below its running peak.

    A trailing moving average over ``window`` evaluations is compared with
    its running maximum; the run has collapsed at the first evaluation where
    the average falls below ``(1 - drop_fraction) * peak``.

    Parameters
    ----------
    values : sequence of float
        Metric per evaluation (high-quality fraction during training).
    steps : sequence of int, optional
        Step label per evaluation; defaults to the evaluation index.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ParameterError("cannot detect collapse on an empty sequence")
    if not 0 < drop_fraction < 1:
        raise ParameterError("drop_fraction must lie in (0, 1)")
    if window < 1:
        raise ParameterError("window must be >= 1")
    steps = np.arange(values.size) if steps is None else np.asarray(steps)
    csum = np.cumsum(np.insert(values, 0, 0.0))
    idx = np.arange(1, values.size + 1)
    lo = np.maximum(idx - window, 0)
    avg = (csum[idx] - csum[lo]) / (idx - lo)
    peak = np.maximum.accumulate(avg)
    below = avg < (1.0 - drop_fraction) * peak
    if np.any(below):
        k = int(np.argmax(below))
        return CollapseReport(True, int(steps[k]), float(peak[k]), float(avg[k:].min()))
    top = int(np.argmax(avg))
    return CollapseReport(False, -1, float(avg[top]), float(avg[top:].min()))


def train(config, data=None, callback=None):
    """Alternate discriminator and generator updates.

    Parameters
    ----------
    config : TrainConfig
    data : tuple, optional
        ``(samples, labels, ring_dataset_or_None)``; generated from the
        config when omitted.
    callback : callable, optional
        Called with each :class:`~omniloss.toydata.MetricsRow` as produced.

    Returns
    -------
    TrainResult
        A non-finite loss stops the run early; the last row then carries the
        NaN losses and ``aborted`` is set.
    """
    rng = np.random.default_rng(config.seed)
    data = load_data(config) if data is None else data
    samples, y = data[0], data[1]
    G, D = build_models(config, rng, in_dim=int(np.prod(samples.shape[1:])))
    variant = Variant(config.variant, config.n_classes)
    opt_kw = dict(betas=config.betas, decay_mode=config.decay_mode)
    exclude_g = [k for k in G.parameters() if k.endswith(".b")] if config.decay_exclude_bias else ()
    exclude_d = [k for k in D.parameters() if k.endswith(".b")] if config.decay_exclude_bias else ()
    opt_G = Adam(G.parameters(), config.lr_g, weight_decay=config.weight_decay_g,
                 exclude=exclude_g, **opt_kw)
    opt_D = Adam(D.parameters(), config.lr_d, weight_decay=config.weight_decay_d,
                 exclude=exclude_d, **opt_kw)
    eval_rng = np.random.default_rng([config.seed, 1])
    eval_z = eval_rng.standard_normal((config.n_eval, config.z_dim))
    eval_c = np.arange(config.n_eval) % config.n_classes
    rows, aborted = [], False
    d_loss = g_loss = float("nan")
    for step in range(1, config.steps + 1):
        try:
            # overflow surfaces as a non-finite output and aborts below
            with np.errstate(over="ignore", invalid="ignore"):
                for _ in range(config.d_steps):
                    idx = rng.integers(0, len(samples), size=config.batch_size)
                    d_loss = d_step(variant, D, G, (samples[idx], y[idx]), opt_D, rng,
                                    config.z_dim)
                g_loss = g_step(variant, D, G, config.batch_size, opt_G, rng, config.z_dim)
        except (NonFiniteError, FloatingPointError):
            rows.append(MetricsRow(step, float("nan"), float("nan"), 0.0, 0.0, 0.0))
            aborted = True
            break
        if step % config.eval_interval == 0 or step == config.steps:
            cov, fid, hq = evaluate(G, eval_z, eval_c, data)
            row = MetricsRow(step, float(d_loss), float(g_loss), cov, fid, hq)
            rows.append(row)
            if callback is not None:
                callback(row)
    if rows:
        report = detect_collapse([r.high_quality_fraction for r in rows],
                                 config.drop_fraction, config.collapse_window,
                                 [r.step for r in rows])
    else:
        report = CollapseReport(False, -1, 0.0, 0.0)
    if aborted and not report.collapsed:
        report = CollapseReport(True, rows[-1].step, report.peak, 0.0)
    return TrainResult(rows, report, G, D, config, data, aborted)
