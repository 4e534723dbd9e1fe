import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omniloss.exceptions import ParameterError, ShapeError
from omniloss.toydata import (
    MetricsRow,
    load_dataset_csv,
    make_gaussian_ring,
    make_pattern_images,
    mode_coverage,
    ring_centers,
    save_dataset_csv,
)


def test_single_center_degenerate():
    ds = make_gaussian_ring(1, 1, 1e-9, 20, seed=0)
    np.testing.assert_allclose(ds.samples, np.tile([1.0, 0.0], (20, 1)), atol=1e-8)


def test_center_placement():
    centers = ring_centers(2, 4)
    assert centers.shape == (2, 4, 2)
    np.testing.assert_allclose(np.linalg.norm(centers[1], axis=1), 2.0)
    np.testing.assert_allclose(np.linalg.norm(centers[0], axis=1), 1.0)
    # class 0 modes at quarter turns; class 1 rotated by 1/8 turn
    np.testing.assert_allclose(centers[0, 1], [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(centers[1, 0], 2.0 * np.array([np.cos(np.pi / 4), np.sin(np.pi / 4)]))


def test_round_robin_and_determinism():
    a = make_gaussian_ring(3, 2, 0.1, 13, seed=5)
    b = make_gaussian_ring(3, 2, 0.1, 13, seed=5)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.labels.tolist() == [0, 0, 1, 1, 2, 2, 0, 0, 1, 1, 2, 2, 0]
    c = make_gaussian_ring(3, 2, 0.1, 13, seed=6)
    assert not np.array_equal(a.samples, c.samples)


def test_invalid_counts():
    with pytest.raises(ParameterError):
        make_gaussian_ring(0, 1, 0.1, 10, 0)
    with pytest.raises(ParameterError):
        make_gaussian_ring(2, 1, 0.0, 10, 0)


def test_self_evaluation():
    ds = make_gaussian_ring(8, 1, 0.05, 4096, seed=1)
    cov, fid, hq = mode_coverage(ds.samples, ds.labels, ds)
    assert cov == 1.0 and fid >= 0.99 and hq >= 0.98


def test_all_at_one_center():
    ds = make_gaussian_ring(4, 2, 0.05, 64, seed=2)
    gen = np.tile(ds.mode_centers[2, 1], (10, 1))
    cov, fid, hq = mode_coverage(gen, np.full(10, 2), ds)
    assert cov == pytest.approx(1 / 8) and fid == 1.0 and hq == 1.0
    cov, fid, _ = mode_coverage(gen, np.full(10, 0), ds)
    assert cov == 0.0 and fid == 0.0


def test_far_samples_are_low_quality():
    ds = make_gaussian_ring(1, 1, 0.05, 8, seed=0)
    angles = np.linspace(0, 2 * np.pi, 7)
    gen = ds.mode_centers[0, 0] + 0.5 * np.stack([np.cos(angles), np.sin(angles)], 1)
    assert mode_coverage(gen, np.zeros(7, int), ds) == (0.0, 0.0, 0.0)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_permutation_invariance_and_radius_monotonicity(seed):
    rng = np.random.default_rng(seed)
    ds = make_gaussian_ring(3, 2, 0.1, 30, seed=0)
    gen = rng.uniform(-4, 4, size=(40, 2))
    cls = rng.integers(0, 3, size=40)
    perm = rng.permutation(40)
    assert mode_coverage(gen, cls, ds) == mode_coverage(gen[perm], cls[perm], ds)
    covs = [mode_coverage(gen, cls, ds, r)[0] for r in (0.5, 1, 3, 10, 40)]
    assert covs == sorted(covs)


def test_metric_shape_errors():
    ds = make_gaussian_ring(2, 1, 0.1, 4, 0)
    with pytest.raises(ShapeError):
        mode_coverage(np.zeros((3, 3)), np.zeros(3, int), ds)
    with pytest.raises(ShapeError):
        mode_coverage(np.zeros((3, 2)), np.zeros(2, int), ds)


def test_csv_roundtrip(tmp_path):
    ds = make_gaussian_ring(3, 1, 0.2, 17, seed=4)
    save_dataset_csv(tmp_path / "d.csv", ds)
    x, y = load_dataset_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(x, ds.samples)
    np.testing.assert_array_equal(y, ds.labels)
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x0,x1,label"


def test_pattern_images():
    x, y = make_pattern_images(5, 20, size=8, seed=0)
    assert x.shape == (20, 8, 8, 3) and y.tolist() == list(range(5)) * 4
    assert x.min() >= -1 and x.max() <= 1
    x2, _ = make_pattern_images(5, 20, size=8, seed=0)
    np.testing.assert_array_equal(x, x2)


def test_metrics_row_fields():
    row = MetricsRow(10, 0.5, 1.5, 0.25, 1.0, 0.75)
    assert row.as_list() == [10, 0.5, 1.5, 0.25, 1.0, 0.75]
    assert ",".join(MetricsRow.FIELDS) == \
        "step,d_loss,g_loss,mode_coverage,class_fidelity,high_quality_fraction"
