import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omniloss.exceptions import ShapeError
from omniloss.inr import (
    INRGenerator,
    INRHead,
    bilinear_sample,
    bilinear_sample_backward,
    inr_forward,
    make_coord_grid,
    synthesize,
    unfold3x3,
    unfold3x3_backward,
)
from omniloss.nn import Generator
from omniloss.optim import grad_check


def test_coord_grid_values():
    assert make_coord_grid(1, 1).tolist() == [[0.0, 0.0]]
    assert make_coord_grid(1, 2)[:, 0].tolist() == [-0.5, 0.5]
    assert make_coord_grid(4, 1)[:, 1].tolist() == [-0.75, -0.25, 0.25, 0.75]
    g = make_coord_grid(2, 3)
    assert g.shape == (6, 2)
    # row-major: x varies fastest
    assert g[1].tolist() == [0.0, -0.5]
    with pytest.raises(ShapeError):
        make_coord_grid(0, 3)


def test_unfold_single_cell():
    g = np.array([1.0, 2.0]).reshape(2, 1, 1)
    u = unfold3x3(g)
    assert u.shape == (18, 1, 1)
    np.testing.assert_array_equal(u[8:10, 0, 0], [1.0, 2.0])
    assert np.count_nonzero(u) == 2


def test_unfold_constant_interior():
    u = unfold3x3(np.full((2, 4, 4), 3.0))
    np.testing.assert_array_equal(u[:, 1:3, 1:3], 3.0)


def test_unfold_loop_oracle():
    rng = np.random.default_rng(0)
    g = rng.normal(size=(2, 3, 3))
    u = unfold3x3(g)
    expected = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            expected.extend(g[:, 1 + dy, 1 + dx])
    np.testing.assert_array_equal(u[:, 1, 1], expected)
    corner = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            i, j = dy, dx
            corner.extend(g[:, i, j] if i >= 0 and j >= 0 else [0.0, 0.0])
    np.testing.assert_array_equal(u[:, 0, 0], corner)


def test_unfold_centre_block_recovers_grid():
    g = np.random.default_rng(1).normal(size=(3, 4, 5))
    np.testing.assert_array_equal(unfold3x3(g)[12:15], g)


def test_unfold_backward_is_adjoint():
    rng = np.random.default_rng(2)
    g = rng.normal(size=(2, 3, 4, 5))
    w = rng.normal(size=(2, 27, 4, 5))
    assert np.sum(unfold3x3(g) * w) == pytest.approx(np.sum(g * unfold3x3_backward(w)), rel=1e-12)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_centre_sampling_is_identity_gather(H, W, seed):
    grid = np.random.default_rng(seed).normal(size=(3, H, W))
    out = bilinear_sample(grid, make_coord_grid(H, W))
    np.testing.assert_array_equal(out, grid.reshape(3, -1).T)


def test_midpoint_is_mean_of_four():
    grid = np.random.default_rng(3).normal(size=(2, 2, 2))
    out = bilinear_sample(grid, np.array([[0.0, 0.0]]))
    np.testing.assert_allclose(out[0], grid.mean(axis=(1, 2)), rtol=1e-14)


def test_affine_field_reproduced():
    H, W = 5, 7
    c = make_coord_grid(H, W)
    field = np.stack([0.3 + 2.0 * c[:, 0] - 1.5 * c[:, 1], -c[:, 0]]).reshape(2, H, W)
    rng = np.random.default_rng(4)
    lo = np.array([-1 + 1 / W, -1 + 1 / H])
    q = rng.uniform(lo, -lo, size=(200, 2))
    out = bilinear_sample(field, q)
    np.testing.assert_allclose(out[:, 0], 0.3 + 2.0 * q[:, 0] - 1.5 * q[:, 1], atol=1e-12)
    np.testing.assert_allclose(out[:, 1], -q[:, 0], atol=1e-12)


def test_queries_clamped_to_border():
    grid = np.arange(4.0).reshape(1, 2, 2)
    out = bilinear_sample(grid, np.array([[-1.0, -1.0], [1.0, 1.0], [5.0, -5.0]]))
    assert out[:, 0].tolist() == [0.0, 3.0, 1.0]


def test_bilinear_backward_is_adjoint():
    rng = np.random.default_rng(5)
    grid = rng.normal(size=(2, 3, 4, 4))
    q = rng.uniform(-1.2, 1.2, size=(30, 2))
    w = rng.normal(size=(2, 30, 3))
    lhs = np.sum(bilinear_sample(grid, q) * w)
    rhs = np.sum(grid * bilinear_sample_backward(w, q, grid.shape))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_zero_weight_head_is_constant():
    head = INRHead(2, hidden=4, rng=np.random.default_rng(6))
    for p in head.parameters().values():
        p[...] = 0.0
    head.parameters()["net.4.b"][...] = [0.1, -0.4, 2.0]
    out = inr_forward(head, np.random.default_rng(7).normal(size=(2, 3, 3)), make_coord_grid(5, 6))
    np.testing.assert_array_equal(out, np.tile(np.tanh([0.1, -0.4, 2.0]), (30, 1)))


def test_centre_query_equals_head_on_unfolded_features():
    rng = np.random.default_rng(8)
    head = INRHead(2, hidden=8, rng=rng)
    grid = rng.normal(size=(2, 3, 4))
    coords = make_coord_grid(3, 4)
    out = head.forward(grid, coords)
    head.reset()
    feats = unfold3x3(grid).reshape(18, -1).T
    direct = head.net.forward(np.concatenate([feats, coords], axis=1))
    np.testing.assert_array_equal(out, direct)


def test_head_gradients_finite_differences():
    rng = np.random.default_rng(9)
    head = INRHead(2, hidden=6, rng=rng)
    grid = rng.normal(size=(2, 2, 3, 3))
    coords = rng.uniform(-1, 1, size=(11, 2))
    w = rng.normal(size=(2, 11, 3))
    head.forward(grid, coords)
    dgrid = head.backward(w)
    f = lambda g: float(np.sum(w * head.forward(g, coords)))
    assert grad_check(f, dgrid, grid) <= 1e-5


def test_inr_generator_gradients():
    rng = np.random.default_rng(10)
    G = INRGenerator(3, 4, grid_shape=(2, 2, 2), image_size=(4, 4), hidden=(6,),
                     inr_hidden=5, rng=rng)
    z = rng.normal(size=(2, 4))
    c = np.array([0, 2])
    w = rng.normal(size=(2, 4, 4, 3))
    G.zero_grad()
    G.forward(z, c)
    dz = G.backward(w)
    analytic = {k: v.copy() for k, v in G.gradients().items()}
    f = lambda v: float(np.sum(w * G.forward(v, c)))
    assert grad_check(f, dz, z) <= 1e-5
    for name, p in G.parameters().items():
        def fp(v, p=p):
            saved = p.copy()
            p[...] = v
            out = float(np.sum(w * G.forward(z, c)))
            p[...] = saved
            return out
        assert grad_check(fp, analytic[name], p.copy()) <= 1e-5, name


def _grid_model(seed=11):
    rng = np.random.default_rng(seed)
    G = Generator(3, 4, hidden=(8,), grid_shape=(4, 3, 3), rng=rng)
    head = INRHead(4, hidden=16, rng=rng)
    return G, head, rng.normal(size=4)


def test_synthesize_shape_and_range():
    G, head, z = _grid_model()
    img = synthesize(G, head, z, 1, 7, 13)
    assert img.shape == (7, 13, 3)
    assert np.all(np.abs(img) < 1)
    with pytest.raises(ShapeError):
        synthesize(G, head, z, 1, 0, 4)


def test_native_synthesis_matches_per_cell_head():
    G, head, z = _grid_model()
    img = synthesize(G, head, z, 2, 3, 3)
    grid = G.forward(z[None], np.array([2]))[0]
    G.reset()
    feats = unfold3x3(grid).reshape(36, -1).T
    per_cell = np.array([head.net.forward(np.concatenate([f, c])[None])[0]
                         for f, c in zip(feats, make_coord_grid(3, 3))])
    np.testing.assert_array_equal(img.reshape(-1, 3), per_cell)


def test_resolution_consistency_shared_coordinates():
    G, head, z = _grid_model()
    low = synthesize(G, head, z, 0, 3, 5)
    high = synthesize(G, head, z, 0, 9, 15)
    # cell centres of an H x W grid recur in the 3H x 3W grid at (3i+1, 3j+1)
    np.testing.assert_array_equal(high[1::3, 1::3], low)


def test_two_x_synthesis_is_pointwise():
    G, head, z = _grid_model()
    native = synthesize(G, head, z, 0, 3, 3)
    double = synthesize(G, head, z, 0, 6, 6)
    grid = G.forward(z[None], np.array([0]))[0]
    G.reset()
    both = np.concatenate([make_coord_grid(3, 3), make_coord_grid(6, 6)])
    joint = head.forward(grid, both)
    np.testing.assert_array_equal(joint[:9], native.reshape(-1, 3))
    np.testing.assert_array_equal(joint[9:], double.reshape(-1, 3))


def test_width_mismatch():
    head = INRHead(3, rng=np.random.default_rng(0))
    with pytest.raises(ShapeError):
        head.forward(np.zeros((2, 3, 3)), make_coord_grid(2, 2))
