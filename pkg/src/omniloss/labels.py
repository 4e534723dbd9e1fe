"""Target vectors for the discriminator heads.

Targets use +1 for positive slots, -1 for negative slots and 0 for slots
that the omni-loss ignores. Layouts, for ``C`` classes:

* omni and one-sided: ``[class_0 .. class_{C-1}, real, fake]`` (length C+2)
* multidomain: ``[classes.., domain_0, domain_1, real, fake]`` (length C+4)
* ImAC-GAN: a class index into C+1 logits, ``C`` being the fake class
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, ParameterError, ShapeError

__all__ = [
    "Role",
    "LabelScheme",
    "build_omni_target",
    "build_oneside_target",
    "build_imacgan_class_target",
    "build_multidomain_target",
    "nn_downsample_labels",
    "build_perpixel_targets",
    "omni_target_batch",
    "oneside_target_batch",
]

SCHEMES = ("omni", "one_sided", "imacgan", "multidomain")
ROLE_KINDS = ("real", "fake", "gen")


@dataclass(frozen=True)
class Role:
    """Who a target is built for.

    ``cls`` is the ground-truth class for ``real``, the conditioning class
    for ``gen``, and optional for ``fake`` (the one-sided scheme needs it).
    """

    kind: str
    cls: int = None

    def __post_init__(self):
        if self.kind not in ROLE_KINDS:
            raise ParameterError(f"role kind must be one of {ROLE_KINDS}")
        if self.kind != "fake" and self.cls is None:
            raise ParameterError(f"role {self.kind!r} needs a class")

    @classmethod
    def real(cls, c):
        return cls("real", c)

    @classmethod
    def fake(cls, c=None):
        return cls("fake", c)

    @classmethod
    def gen(cls, c):
        return cls("gen", c)


@dataclass(frozen=True)
class LabelScheme:
    num_classes: int
    scheme: str = "omni"
    num_domains: int = 2

    def __post_init__(self):
        if self.num_classes < 1:
            raise ParameterError("num_classes must be >= 1")
        if self.scheme not in SCHEMES:
            raise ParameterError(f"scheme must be one of {SCHEMES}")

    @property
    def output_dim(self):
        if self.scheme == "imacgan":
            return self.num_classes + 1
        if self.scheme == "multidomain":
            return self.num_classes + self.num_domains + 2
        return self.num_classes + 2


def _check_class(c, C):
    if c is None or not 0 <= int(c) < C:
        raise InputError(f"class {c} out of range [0, {C})")
    return int(c)


def _require(scheme, name):
    if scheme.scheme != name:
        raise ParameterError(f"expected a {name!r} scheme, got {scheme.scheme!r}")


def build_omni_target(scheme, role):
    """Full-supervision target: every slot is +1 or -1.

    Real and generator roles share a layout; the fake role marks only the
    final (fake) slot positive.
    """
    _require(scheme, "omni")
    C = scheme.num_classes
    y = -np.ones(C + 2, dtype=np.int8)
    if role.kind == "fake":
        y[C + 1] = 1
    else:
        y[_check_class(role.cls, C)] = 1
        y[C] = 1
    return y


def build_oneside_target(scheme, role):
    """Projection-style target: only the conditioning class and the real slot
    are supervised; every other slot is 0 and ignored.
    """
    _require(scheme, "one_sided")
    C = scheme.num_classes
    y = np.zeros(C + 2, dtype=np.int8)
    if role.kind == "fake" and role.cls is None:
        raise ParameterError("one-sided fake targets need the generator's class")
    c = _check_class(role.cls, C)
    sign = -1 if role.kind == "fake" else 1
    y[c] = sign
    y[C] = sign
    return y


def build_imacgan_class_target(C, role):
    """Class index for the C+1-way auxiliary classifier (fakes map to ``C``)."""
    if C < 1:
        raise ParameterError("C must be >= 1")
    if role.kind == "fake":
        return C
    return _check_class(role.cls, C)


def build_multidomain_target(C, role, domain=None):
    """Class + domain + reality target of length C+4.

    Real and generator targets hold three positives (class, domain, real);
    the fake target is one-hot on the final slot.
    """
    if C < 1:
        raise ParameterError("C must be >= 1")
    y = -np.ones(C + 4, dtype=np.int8)
    if role.kind == "fake":
        y[C + 3] = 1
        return y
    c = _check_class(role.cls, C)
    if domain not in (0, 1):
        raise InputError(f"domain must be 0 or 1, got {domain}")
    y[c] = 1
    y[C + domain] = 1
    y[C + 2] = 1
    return y


def nn_downsample_labels(label_map, H_out, W_out):
    """Nearest-neighbour downsampling with floor index mapping.

    ``out[i, j] = in[floor(i * H_in / H_out), floor(j * W_in / W_out)]``.
    """
    label_map = np.asarray(label_map)
    if label_map.ndim != 2:
        raise ShapeError("label map must be 2-D")
    H_in, W_in = label_map.shape
    if H_out < 1 or W_out < 1:
        raise ShapeError("output dimensions must be >= 1")
    if H_out > H_in or W_out > W_in:
        raise ShapeError("output size must not exceed input size")
    rows = (np.arange(H_out) * H_in) // H_out
    cols = (np.arange(W_out) * W_in) // W_out
    return label_map[np.ix_(rows, cols)]


def omni_target_batch(kind, classes, C):
    """Vectorized :func:`build_omni_target`; ``classes`` may be any shape.

    Returns an array of shape ``classes.shape + (C + 2,)``.
    """
    classes = np.asarray(classes)
    if kind == "fake":
        Y = -np.ones(classes.shape + (C + 2,), dtype=np.int8)
        Y[..., C + 1] = 1
        return Y
    if kind not in ROLE_KINDS:
        raise ParameterError(f"role kind must be one of {ROLE_KINDS}")
    if np.any(classes < 0) or np.any(classes >= C):
        raise InputError(f"class out of range [0, {C})")
    Y = np.where(np.arange(C + 2) == classes[..., None], 1, -1).astype(np.int8)
    Y[..., C] = 1
    return Y


def oneside_target_batch(kind, classes, C):
    classes = np.asarray(classes)
    if kind not in ROLE_KINDS:
        raise ParameterError(f"role kind must be one of {ROLE_KINDS}")
    if np.any(classes < 0) or np.any(classes >= C):
        raise InputError(f"class out of range [0, {C})")
    sign = -1 if kind == "fake" else 1
    Y = np.where(np.arange(C + 2) == classes[..., None], sign, 0).astype(np.int8)
    Y[..., C] = sign
    return Y


def build_perpixel_targets(label_map, C, role):
    """Omni targets at every pixel of a class-index map, shape (C+2, H, W).

    For the fake role the map only supplies the spatial size.
    """
    label_map = np.asarray(label_map)
    if label_map.ndim != 2:
        raise ShapeError("label map must be 2-D")
    Y = omni_target_batch(role.kind, label_map, C)
    return np.moveaxis(Y, -1, 0)
