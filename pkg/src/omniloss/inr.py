"""Implicit-neural-representation output head for arbitrary-resolution images.

A backbone produces a feature grid ``M`` of shape ``(C_f, H_f, W_f)``. Each
cell is widened to its zero-padded 3x3 neighbourhood (``9 * C_f``
channels), sampled bilinearly at continuous coordinates and fed, together
with the coordinate itself, through a small MLP ending in ``tanh``.

Coordinates live in ``[-1, 1]^2`` as ``(x, y)`` pairs; cell ``(i, j)`` of an
``H x W`` grid is centred at ``x = -1 + (2j + 1) / W``,
``y = -1 + (2i + 1) / H``. Queries outside the centre hull are clamped to
the border cells.

The head evaluates its dense layers with a row-wise contraction
(``np.einsum``) rather than BLAS, so the value at a coordinate does not
depend on which other coordinates are queried alongside it.
"""

import numpy as np

from .exceptions import ShapeError, StaleCacheError
from .nn import Dense, Generator, Module, ReLU, Sequential, Tanh

__all__ = [
    "make_coord_grid",
    "unfold3x3",
    "unfold3x3_backward",
    "bilinear_sample",
    "bilinear_sample_backward",
    "INRHead",
    "INRGenerator",
    "inr_forward",
    "synthesize",
]

# Queries within this distance (in cell units) of a cell centre snap to it.
_SNAP = 1e-9


def make_coord_grid(H, W):
    """Cell-centre coordinates of an ``H x W`` grid, row-major, shape (H*W, 2)."""
    if H < 1 or W < 1:
        raise ShapeError("grid dimensions must be >= 1")
    xs = -1.0 + (2.0 * np.arange(W) + 1.0) / W
    ys = -1.0 + (2.0 * np.arange(H) + 1.0) / H
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def _batched(grid):
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 3:
        return grid[None], True
    if grid.ndim == 4:
        return grid, False
    raise ShapeError(f"feature grid must be (C, H, W) or (N, C, H, W), got {grid.shape}")


def unfold3x3(grid):
    """Concatenate each cell's 3x3 neighbourhood (zero padded) along channels.

    Output channel ``k * C + c`` holds channel ``c`` of the neighbour at
    offset ``(dy, dx) = divmod(k, 3) - 1``; block 4 is the cell itself.
    """
    g, single = _batched(grid)
    N, C, H, W = g.shape
    padded = np.zeros((N, C, H + 2, W + 2))
    padded[:, :, 1:-1, 1:-1] = g
    blocks = [padded[:, :, dy:dy + H, dx:dx + W] for dy in range(3) for dx in range(3)]
    out = np.concatenate(blocks, axis=1)
    return out[0] if single else out


def unfold3x3_backward(grad):
    """Adjoint of :func:`unfold3x3`."""
    g, single = _batched(grad)
    N, C9, H, W = g.shape
    C = C9 // 9
    padded = np.zeros((N, C, H + 2, W + 2))
    for k in range(9):
        dy, dx = divmod(k, 3)
        padded[:, :, dy:dy + H, dx:dx + W] += g[:, k * C:(k + 1) * C]
    out = padded[:, :, 1:-1, 1:-1]
    return out[0] if single else out


def _axis_weights(u, n):
    """Lower index, upper index and upper weight along one axis."""
    p = np.clip((u + 1.0) * n / 2.0 - 0.5, 0.0, n - 1.0)
    r = np.round(p)
    p = np.where(np.abs(p - r) < _SNAP, r, p)
    lo = np.minimum(np.floor(p).astype(np.intp), max(n - 2, 0))
    hi = np.minimum(lo + 1, n - 1)
    return lo, hi, p - lo


def _corners(coords, H, W):
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError("coords must have shape (Q, 2)")
    x0, x1, fx = _axis_weights(coords[:, 0], W)
    y0, y1, fy = _axis_weights(coords[:, 1], H)
    return ((y0, x0, (1 - fy) * (1 - fx)), (y0, x1, (1 - fy) * fx),
            (y1, x0, fy * (1 - fx)), (y1, x1, fy * fx))


def bilinear_sample(grid, coords):
    """Bilinearly interpolate grid features at ``coords``.

    Returns ``(Q, C)`` for a single grid or ``(N, Q, C)`` for a batch. A
    query on a cell centre returns that cell's features bit for bit.
    """
    g, single = _batched(grid)
    _, _, H, W = g.shape
    out = None
    for yi, xi, w in _corners(coords, H, W):
        term = g[:, :, yi, xi] * w
        out = term if out is None else out + term
    out = np.swapaxes(out, 1, 2)
    return out[0] if single else out


def bilinear_sample_backward(grad, coords, grid_shape):
    """Adjoint of :func:`bilinear_sample` for a batch ``grad`` of (N, Q, C)."""
    grad = np.swapaxes(np.asarray(grad, dtype=np.float64), 1, 2)
    N, C, H, W = grid_shape
    flat = np.zeros((N, C, H * W))
    for yi, xi, w in _corners(coords, H, W):
        np.add.at(flat, (slice(None), slice(None), yi * W + xi), grad * w)
    return flat.reshape(grid_shape)


class _RowwiseDense(Dense):
    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"Dense expects (N, {self.n_in}), got {x.shape}")
        self._x = x
        return np.einsum("ni,oi->no", x, self.params["W"]) + self.params["b"]


class INRHead(Module):
    """``f(features, x, y) -> rgb``: (9 C_f + 2) -> h -> h -> 3, ReLU, tanh."""

    def __init__(self, feature_channels, hidden=32, rng=None):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.feature_channels, self.hidden = feature_channels, hidden
        self.in_dim = 9 * feature_channels + 2
        self.net = Sequential([
            _RowwiseDense(self.in_dim, hidden, rng), ReLU(),
            _RowwiseDense(hidden, hidden, rng), ReLU(),
            _RowwiseDense(hidden, 3, rng, gain=1.0), Tanh(),
        ])
        self.children = {"net": self.net}
        self._ctx = None

    def config(self):
        return {"feature_channels": self.feature_channels, "hidden": self.hidden}

    def forward(self, grid, coords):
        """RGB at each query: ``(Q, 3)`` for one grid, ``(N, Q, 3)`` for a batch."""
        g, single = _batched(grid)
        N, C, H, W = g.shape
        if 9 * C + 2 != self.in_dim:
            raise ShapeError(f"head expects {self.feature_channels} feature channels, got {C}")
        coords = np.asarray(coords, dtype=np.float64)
        unfolded = unfold3x3(g)
        feats = bilinear_sample(unfolded, coords)
        Q = coords.shape[0]
        x = np.concatenate([feats, np.broadcast_to(coords, (N, Q, 2))], axis=2)
        out = self.net.forward(x.reshape(N * Q, self.in_dim)).reshape(N, Q, 3)
        self._ctx = (coords, unfolded.shape, g.shape, single)
        return out[0] if single else out

    def backward(self, grad):
        """Accumulate head gradients; return the gradient w.r.t. the grid."""
        if self._ctx is None:
            raise StaleCacheError("INRHead.backward without forward")
        coords, ushape, gshape, single = self._ctx
        self._ctx = None
        N, Q = gshape[0], coords.shape[0]
        grad = np.asarray(grad, dtype=np.float64).reshape(N * Q, 3)
        dx = self.net.backward(grad).reshape(N, Q, self.in_dim)
        du = bilinear_sample_backward(dx[:, :, :-2], coords, ushape)
        dg = unfold3x3_backward(du)
        return dg[0] if single else dg


def inr_forward(head, grid, coords):
    return head.forward(grid, coords)


class INRGenerator(Module):
    """Feature-grid generator followed by an INR head, rendering ``H x W``
    images during training and any size afterwards."""

    def __init__(self, n_classes, z_dim, grid_shape=(8, 4, 4), image_size=(8, 8),
                 hidden=(64, 64), inr_hidden=32, rng=None):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.backbone = Generator(n_classes, z_dim, hidden=hidden,
                                  grid_shape=grid_shape, rng=rng)
        self.head = INRHead(grid_shape[0], inr_hidden, rng)
        self.children = {"backbone": self.backbone, "head": self.head}
        self.image_size = tuple(image_size)
        self.coords = make_coord_grid(*self.image_size)
        self.n_classes, self.z_dim = n_classes, z_dim

    @property
    def out_dim(self):
        return self.image_size[0] * self.image_size[1] * 3

    def config(self):
        return {"n_classes": self.n_classes, "z_dim": self.z_dim,
                "grid_shape": list(self.backbone.grid_shape),
                "image_size": list(self.image_size),
                "hidden": list(self.backbone.hidden),
                "inr_hidden": self.head.hidden}

    def forward(self, z, classes, size=None):
        H, W = self.image_size if size is None else size
        coords = self.coords if size is None else make_coord_grid(H, W)
        grid = self.backbone.forward(z, classes)
        return self.head.forward(grid, coords).reshape(len(grid), H, W, 3)

    def backward(self, grad):
        dg = self.head.backward(np.asarray(grad).reshape(len(grad), -1, 3))
        return self.backbone.backward(dg)


def synthesize(G, head, z, cls, H, W):
    """Render one image of any size from a grid generator and an INR head.

    Returns an ``(H, W, 3)`` array.
    """
    if H < 1 or W < 1:
        raise ShapeError("image dimensions must be >= 1")
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    grid = G.forward(z, np.array([cls]))
    G.reset()
    out = head.forward(grid[0], make_coord_grid(H, W))
    head.reset()
    return out.reshape(H, W, 3)
