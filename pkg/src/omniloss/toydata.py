"""Synthetic labelled datasets and sample-quality metrics.

Randomness comes from numpy's ``PCG64`` bit generator seeded directly with
the integer seed (``np.random.default_rng(seed)``); the name is recorded as
:data:`PRNG_NAME` in run manifests.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError, ShapeError

__all__ = [
    "PRNG_NAME",
    "ToyDataset",
    "MetricsRow",
    "make_gaussian_ring",
    "mode_coverage",
    "make_pattern_images",
    "save_dataset_csv",
    "load_dataset_csv",
]

PRNG_NAME = "PCG64 (numpy.random.default_rng, integer seed)"


@dataclass
class ToyDataset:
    samples: np.ndarray
    labels: np.ndarray
    mode_centers: np.ndarray  # (C, modes_per_class, d)
    mode_std: float

    @property
    def n_classes(self):
        return self.mode_centers.shape[0]

    @property
    def n_modes(self):
        return self.mode_centers.shape[0] * self.mode_centers.shape[1]


@dataclass(frozen=True)
class MetricsRow:
    step: int
    d_loss: float
    g_loss: float
    mode_coverage: float
    class_fidelity: float
    high_quality_fraction: float

    FIELDS = ("step", "d_loss", "g_loss", "mode_coverage", "class_fidelity",
              "high_quality_fraction")

    def as_list(self):
        return [getattr(self, f) for f in self.FIELDS]


def ring_centers(C, modes_per_class):
    """Mode centres: class ``c`` on a ring of radius ``1 + c``.

    Modes of one class are equally spaced in angle; each class is rotated
    by ``2 pi c / (C * modes_per_class)`` so that classes interleave.
    """
    c = np.arange(C)[:, None]
    m = np.arange(modes_per_class)[None, :]
    angle = 2 * np.pi * (m / modes_per_class + c / (C * modes_per_class))
    radius = 1.0 + c
    return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)


def make_gaussian_ring(C, modes_per_class, sigma_data, N, seed):
    """Class-conditional Gaussian modes on concentric rings.

    Sample ``k`` belongs to ``(class, mode) = divmod(k % (C * M), M)`` and is
    drawn as ``center + sigma_data * standard_normal(2)``.
    """
    if C < 1 or modes_per_class < 1 or N < 1:
        raise ParameterError("C, modes_per_class and N must be >= 1")
    if not sigma_data > 0:
        raise ParameterError("sigma_data must be positive")
    rng = np.random.default_rng(seed)
    centers = ring_centers(C, modes_per_class)
    k = np.arange(N) % (C * modes_per_class)
    labels, modes = np.divmod(k, modes_per_class)
    samples = centers[labels, modes] + sigma_data * rng.standard_normal((N, 2))
    return ToyDataset(samples, labels, centers, float(sigma_data))


def mode_coverage(generated, intended, dataset, radius_mult=3.0):
    """Quality metrics of generated samples against the dataset's modes.

    Each sample is assigned to its nearest mode centre. It is high quality
    when that distance is at most ``radius_mult * mode_std``.

    Returns
    -------
    mode_coverage : float
        Fraction of modes hit by at least one high-quality sample whose
        nearest centre belongs to the sample's intended class.
    class_fidelity : float
        Among high-quality samples, fraction landing on a mode of the
        intended class (0 when there are none).
    high_quality_fraction : float
    """
    if not radius_mult > 0:
        raise ParameterError("radius_mult must be positive")
    generated = np.asarray(generated, dtype=np.float64)
    intended = np.asarray(intended)
    C, M, d = dataset.mode_centers.shape
    if generated.ndim != 2 or generated.shape[1] != d:
        raise ShapeError(f"generated samples must have shape (n, {d})")
    if intended.shape != (len(generated),):
        raise ShapeError("need one intended class per generated sample")
    flat = dataset.mode_centers.reshape(C * M, d)
    dist = np.linalg.norm(generated[:, None, :] - flat[None, :, :], axis=-1)
    nearest = np.argmin(dist, axis=1)
    good = dist[np.arange(len(generated)), nearest] <= radius_mult * dataset.mode_std
    correct = good & (nearest // M == intended)
    n_good = int(good.sum())
    fidelity = correct.sum() / n_good if n_good else 0.0
    coverage = np.unique(nearest[correct]).size / (C * M)
    hq = n_good / len(generated) if len(generated) else 0.0
    return float(coverage), float(fidelity), float(hq)


def make_pattern_images(C, N, size=8, seed=0):
    """Tiny procedural RGB images in [-1, 1], one pattern family per class.

    Families cycle through horizontal ramps, vertical ramps, stripes and a
    centred blob; every image gets a random colour and phase. Returns
    ``(images (N, size, size, 3), labels (N,))``.
    """
    if C < 1 or N < 1 or size < 2:
        raise ParameterError("C, N must be >= 1 and size >= 2")
    rng = np.random.default_rng(seed)
    labels = np.arange(N) % C
    coords = (2 * np.arange(size) + 1) / size - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    images = np.empty((N, size, size, 3))
    for k, c in enumerate(labels):
        family = c % 4
        phase = rng.uniform(-0.5, 0.5)
        color = rng.uniform(0.4, 1.0, size=3) * rng.choice([-1.0, 1.0], size=3)
        if family == 0:
            base = np.clip(xx + phase, -1, 1)
        elif family == 1:
            base = np.clip(yy + phase, -1, 1)
        elif family == 2:
            base = np.sin(np.pi * (xx + yy) * (1 + c // 4) + 3 * phase)
        else:
            base = 1.0 - 2.0 * np.exp(-((xx - phase) ** 2 + yy**2) * 4.0)
        images[k] = np.clip(base[..., None] * color, -1.0, 1.0)
    return images, labels


def save_dataset_csv(path, dataset):
    """Write ``x0, x1, ..., label`` rows with a header."""
    d = dataset.samples.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(d)] + ["label"])
        for x, y in zip(dataset.samples, dataset.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def load_dataset_csv(path):
    """Read ``(samples, labels)`` written by :func:`save_dataset_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    samples = np.array([[float(v) for v in r[:-1]] for r in body])
    labels = np.array([int(r[-1]) for r in body])
    return samples, labels
