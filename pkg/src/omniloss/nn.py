"""A small reverse-mode neural network library on float64 numpy arrays.

Layers cache their inputs on ``forward`` and consume the cache on
``backward``; calling ``backward`` twice for one forward raises
:class:`~omniloss.exceptions.StaleCacheError`. Parameter gradients
accumulate until :meth:`Module.zero_grad`.

Networks expose their parameters as a flat ``{name: array}`` mapping of live
arrays, which is what the optimizers and the checkpoint format consume.
"""

import json

import numpy as np

from .exceptions import InputError, ShapeError, StaleCacheError

__all__ = [
    "Module",
    "Dense",
    "LeakyReLU",
    "ReLU",
    "Tanh",
    "Sequential",
    "ClassEmbedding",
    "Generator",
    "Discriminator",
    "save_arrays",
    "load_arrays",
]

LEAKY_SLOPE = 0.2
# Set to True to verify that every forward output is finite.
DEBUG = False


def _check_finite(out, where):
    if DEBUG and not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite output in {where}")
    return out


class Module:
    """Base class: named parameters, matching gradients, nested children."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.children = {}

    def parameters(self):
        out = {k: v for k, v in self.params.items()}
        for prefix, child in self.children.items():
            for k, v in child.parameters().items():
                out[f"{prefix}.{k}"] = v
        return out

    def gradients(self):
        out = {k: v for k, v in self.grads.items()}
        for prefix, child in self.children.items():
            for k, v in child.gradients().items():
                out[f"{prefix}.{k}"] = v
        return out

    def zero_grad(self):
        for g in self.gradients().values():
            g[...] = 0.0

    def reset(self):
        """Drop forward caches of this module and its children."""
        for attr in ("_x", "_cache", "_idx", "_h", "_proj_rows", "_ctx"):
            if hasattr(self, attr):
                setattr(self, attr, None)
        for child in self.children.values():
            child.reset()

    def load_parameters(self, arrays):
        """Copy values into the live parameter arrays (shapes must match)."""
        own = self.parameters()
        missing = set(own) - set(arrays)
        if missing:
            raise ShapeError(f"missing parameters: {sorted(missing)}")
        for name, p in own.items():
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != p.shape:
                raise ShapeError(f"{name}: expected {p.shape}, got {src.shape}")
            p[...] = src

    def n_parameters(self):
        return sum(p.size for p in self.parameters().values())


class Dense(Module):
    """Affine layer ``y = x W^T + b`` with ``W`` of shape (out, in)."""

    def __init__(self, n_in, n_out, rng=None, gain=np.sqrt(2.0)):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.n_in, self.n_out = n_in, n_out
        self.params["W"] = rng.normal(0.0, gain / np.sqrt(n_in), size=(n_out, n_in))
        self.params["b"] = np.zeros(n_out)
        self.grads["W"] = np.zeros((n_out, n_in))
        self.grads["b"] = np.zeros(n_out)
        self._x = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"Dense expects (N, {self.n_in}), got {x.shape}")
        self._x = x
        return _check_finite(x @ self.params["W"].T + self.params["b"], "Dense")

    def backward(self, grad):
        if self._x is None:
            raise StaleCacheError("Dense.backward called without a forward pass")
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != (self._x.shape[0], self.n_out):
            raise ShapeError(f"upstream gradient has shape {grad.shape}")
        self.grads["W"] += grad.T @ self._x
        self.grads["b"] += grad.sum(axis=0)
        self._x = None
        return grad @ self.params["W"]


class _Activation(Module):
    def __init__(self):
        super().__init__()
        self._cache = None

    def _take(self):
        if self._cache is None:
            raise StaleCacheError(f"{type(self).__name__}.backward without forward")
        c, self._cache = self._cache, None
        return c


class LeakyReLU(_Activation):
    def __init__(self, slope=LEAKY_SLOPE):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, self.slope * x)

    def backward(self, grad):
        return np.where(self._take(), grad, self.slope * grad)


class ReLU(_Activation):
    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, grad):
        return np.where(self._take(), grad, 0.0)


class Tanh(_Activation):
    def forward(self, x):
        out = np.tanh(x)
        self._cache = out
        return out

    def backward(self, grad):
        out = self._take()
        return grad * (1.0 - out**2)


class Sequential(Module):
    """Chain of layers. ``backward`` can inject extra gradients at any layer
    output (used to differentiate intermediate features)."""

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)
        self.children = {str(i): layer for i, layer in enumerate(self.layers)}

    def forward(self, x, keep=()):
        """Run the chain; with ``keep`` also return the listed layer outputs."""
        kept = {}
        for i, layer in enumerate(self.layers):
            x = layer.forward(x)
            if i in keep:
                kept[i] = x
        return (x, kept) if keep else x

    def backward(self, grad, taps=None):
        taps = taps or {}
        last = len(self.layers) - 1
        if grad is None:
            grad = 0.0
        for i in range(last, -1, -1):
            if i in taps:
                grad = grad + taps[i]
            grad = self.layers[i].backward(np.asarray(grad, dtype=np.float64))
        return grad


def mlp(sizes, rng, activation=LeakyReLU, final=None):
    """Dense stack with ``activation`` between layers and optional final one."""
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Dense(a, b, rng))
        if i < len(sizes) - 2:
            layers.append(activation())
    if final is not None:
        layers.append(final())
    return Sequential(layers)


class ClassEmbedding(Module):
    """Lookup table of shape (C, d)."""

    def __init__(self, n_classes, dim, rng=None, scale=1.0):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.n_classes, self.dim = n_classes, dim
        self.params["table"] = rng.normal(0.0, scale, size=(n_classes, dim))
        self.grads["table"] = np.zeros((n_classes, dim))
        self._idx = None

    def forward(self, classes):
        idx = np.asarray(classes)
        if not np.issubdtype(idx.dtype, np.integer):
            raise InputError("class indices must be integers")
        if np.any(idx < 0) or np.any(idx >= self.n_classes):
            raise InputError(f"class index out of range [0, {self.n_classes})")
        self._idx = idx
        return self.params["table"][idx]

    def backward(self, grad):
        if self._idx is None:
            raise StaleCacheError("ClassEmbedding.backward without forward")
        np.add.at(self.grads["table"], self._idx, grad)
        self._idx = None


class Generator(Module):
    """Class-conditional generator ``G(z, c)``.

    The class embedding is concatenated to ``z`` and passed through a
    leaky-ReLU MLP. With ``grid_shape=(C_f, H_f, W_f)`` the output is a
    feature grid for an INR head instead of a sample vector.

    Parameters
    ----------
    n_classes, z_dim : int
    hidden : tuple of int
    out_dim : int
        Sample dimension for the direct head (ignored for grid output).
    output : {'tanh', 'linear'}
        Final activation of the direct head.
    """

    def __init__(self, n_classes, z_dim, hidden=(64, 64), out_dim=2,
                 embed_dim=None, output="tanh", grid_shape=None, rng=None):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        if output not in ("tanh", "linear"):
            raise InputError(f"unknown output activation {output!r}")
        self.n_classes, self.z_dim = n_classes, z_dim
        self.hidden = tuple(hidden)
        self.embed_dim = z_dim if embed_dim is None else embed_dim
        self.output = output
        self.grid_shape = None if grid_shape is None else tuple(grid_shape)
        self.out_dim = int(np.prod(self.grid_shape)) if self.grid_shape else out_dim
        final = Tanh if (self.grid_shape is None and output == "tanh") else None
        self.embed = ClassEmbedding(n_classes, self.embed_dim, rng)
        self.net = mlp((z_dim + self.embed_dim,) + self.hidden + (self.out_dim,),
                       rng, final=final)
        self.children = {"embed": self.embed, "net": self.net}

    def config(self):
        return {"n_classes": self.n_classes, "z_dim": self.z_dim,
                "hidden": list(self.hidden), "out_dim": self.out_dim,
                "embed_dim": self.embed_dim, "output": self.output,
                "grid_shape": None if self.grid_shape is None else list(self.grid_shape)}

    def forward(self, z, classes):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.z_dim:
            raise ShapeError(f"z must have shape (N, {self.z_dim}), got {z.shape}")
        classes = np.asarray(classes)
        if classes.shape != (z.shape[0],):
            raise ShapeError("need one class per latent vector")
        h = np.concatenate([z, self.embed.forward(classes)], axis=1)
        out = self.net.forward(h)
        if self.grid_shape is not None:
            out = out.reshape((z.shape[0],) + self.grid_shape)
        return out

    def backward(self, grad):
        """Accumulate parameter gradients; return the gradient w.r.t. ``z``."""
        grad = np.asarray(grad, dtype=np.float64).reshape(-1, self.out_dim)
        dh = self.net.backward(grad)
        self.embed.backward(dh[:, self.z_dim:])
        return dh[:, : self.z_dim]


class Discriminator(Module):
    """Leaky-ReLU trunk ``f_1`` with a vector or projection head.

    ``head='vector'`` emits ``out_dim`` logits (omni, one-sided, AC-GAN,
    ImAC-GAN, multi-hinge). ``head='projection'`` emits the scalar
    ``<V[c], f_1(x)> + f_2(f_1(x))``.
    """

    def __init__(self, in_dim, hidden=(64, 64), head="vector", out_dim=1,
                 n_classes=None, rng=None):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        if head not in ("vector", "projection"):
            raise InputError(f"unknown head {head!r}")
        if head == "projection" and not n_classes:
            raise InputError("projection head needs n_classes")
        self.in_dim, self.hidden, self.head = in_dim, tuple(hidden), head
        self.n_classes = n_classes
        self.out_dim = 1 if head == "projection" else out_dim
        self.trunk = mlp((in_dim,) + self.hidden, rng, final=LeakyReLU)
        self.children = {"trunk": self.trunk}
        if head == "vector":
            self.out = Dense(self.hidden[-1], self.out_dim, rng, gain=1.0)
            self.children["out"] = self.out
        else:
            self.proj = ClassEmbedding(n_classes, self.hidden[-1], rng,
                                       scale=1.0 / np.sqrt(self.hidden[-1]))
            self.out = Dense(self.hidden[-1], 1, rng, gain=1.0)
            self.children.update(proj=self.proj, out=self.out)
        self._h = None
        self._proj_rows = None

    @property
    def depth(self):
        return len(self.hidden)

    def feature_layers(self):
        """Indices (into the trunk) of the activation output of each block."""
        return [2 * i + 1 for i in range(self.depth)]

    def config(self):
        return {"in_dim": self.in_dim, "hidden": list(self.hidden),
                "head": self.head, "out_dim": self.out_dim,
                "n_classes": self.n_classes}

    def _trunk(self, x, features=()):
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"discriminator expects {self.in_dim} inputs, got {x.shape[1]}")
        keep = [self.feature_layers()[i] for i in features]
        if keep:
            return self.trunk.forward(x, keep=keep)
        return self.trunk.forward(x), {}

    def forward(self, x, classes=None, features=()):
        """Scores for a batch ``x``.

        Returns ``(N, out_dim)`` logits, or ``(N,)`` projection scores when
        the head is a projection (``classes`` required). With ``features``
        (block indices) a list of those trunk activations is returned too.
        """
        h, kept = self._trunk(x, features)
        self._h = h
        if self.head == "vector":
            out = self.out.forward(h)
        else:
            if classes is None:
                raise InputError("projection head needs classes")
            rows = self.proj.forward(classes)
            self._proj_rows = rows
            out = np.sum(rows * h, axis=1) + self.out.forward(h)[:, 0]
        out = _check_finite(out, "Discriminator")
        if features:
            return out, [kept[self.feature_layers()[i]] for i in features]
        return out

    def projection_score(self, x, c):
        """Scalar projection score of a single input for class ``c``."""
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        return float(self.forward(x, np.array([c]))[0])

    def backward(self, grad, feature_grads=None):
        """Backpropagate an output gradient (and optional feature gradients
        keyed by block index); returns the gradient w.r.t. the input."""
        if self._h is None:
            raise StaleCacheError("Discriminator.backward without forward")
        h, self._h = self._h, None
        if grad is None:
            dh = np.zeros_like(h)
            self.out.reset()
            if self.head == "projection":
                self.proj.reset()
        elif self.head == "vector":
            dh = self.out.backward(grad)
        else:
            g = np.asarray(grad, dtype=np.float64).reshape(-1, 1)
            self.proj.backward(g * h)
            dh = self.out.backward(g) + g * self._proj_rows
        taps = {self.feature_layers()[i]: g for i, g in (feature_grads or {}).items()}
        return self.trunk.backward(dh, taps=taps)

    def features(self, x, layers):
        """Trunk activations at the given block indices (no cache kept)."""
        _, kept = self._trunk(x, layers)
        self.trunk.reset()
        return [kept[self.feature_layers()[i]] for i in layers]


MAGIC = b"OMNILOSS-PARAMS 1\n"


def save_arrays(path, arrays, meta=None):
    """Write named float64 arrays.

    Layout: a magic line, one line of JSON holding ``meta`` and the ordered
    ``[name, shape]`` manifest, then the concatenated little-endian float64
    data in manifest order.
    """
    manifest = [[name, list(np.shape(a))] for name, a in arrays.items()]
    header = json.dumps({"meta": meta or {}, "arrays": manifest}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("utf-8") + b"\n")
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_arrays(path):
    """Inverse of :func:`save_arrays`; returns ``(arrays, meta)``."""
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise InputError(f"{path} is not a parameter file")
        header = json.loads(fh.readline().decode("utf-8"))
        data = fh.read()
    arrays, offset = {}, 0
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) * 8
        if offset + n > len(data):
            raise InputError(f"{path} is truncated")
        arrays[name] = np.frombuffer(data[offset:offset + n], dtype="<f8").reshape(shape).copy()
        offset += n
    if offset != len(data):
        raise InputError(f"{path} has trailing bytes")
    return arrays, header["meta"]
