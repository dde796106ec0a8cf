import numpy as np
import pytest

from lossland.projection_lab import (
    CloudError,
    CloudSpec,
    basin_check,
    figure1_dataset,
    find_multivalued,
    pca_residual,
    project,
    sample_image,
    solar_check,
)
from lossland.schemes import Dataset, Polynomial, ToyLightning
from lossland.yspace import YVector

X = figure1_dataset()
SMALL = CloudSpec(step=0.1, random_points=20_000)


@pytest.fixture(scope="module")
def toy():
    return sample_image(ToyLightning(), X, SMALL, seed=0)


def test_linear_cloud_is_planar():
    cloud = sample_image(Polynomial(1), X, CloudSpec(step=0.5, random_points=500), seed=0)
    assert pca_residual(cloud) <= 1e-10


def test_spec_errors():
    with pytest.raises(CloudError):
        sample_image(ToyLightning(), X, CloudSpec(step=None, random_points=0))
    with pytest.raises(CloudError):
        sample_image(ToyLightning(), X, CloudSpec(step=5e-3, random_points=10**6))
    with pytest.raises(CloudError):
        sample_image(Polynomial(1), Dataset(np.linspace(0, 1, 5)[:, None]), SMALL)


def test_reproducible_points(toy):
    assert toy.reproduce_error(np.arange(0, len(toy.points), 101)) <= 1e-12
    again = sample_image(ToyLightning(), X, SMALL, seed=0)
    assert np.array_equal(again.points, toy.points)


def test_project_point_in_cloud(toy):
    y = toy.y(12345)
    res = project(toy, y)
    assert res.min_dist == 0.0 and not res.multivalued


def test_cluster_distances_within_tolerance(toy):
    y = YVector(np.array([0.8, -0.4, 1.5]))
    res = project(toy, y)
    for c in res.clusters:
        d = (c - y).norm()
        assert res.min_dist <= d <= res.min_dist * (1 + res.cluster_tol) + 1e-15


def test_refinement_never_worse():
    y = YVector(np.array([0.3, 0.9, -0.7]))
    coarse = sample_image(ToyLightning(), X, CloudSpec(step=0.4, random_points=0))
    fine = sample_image(ToyLightning(), X, CloudSpec(step=0.2, random_points=0))
    # the finer grid contains the coarser one
    assert project(fine, y).min_dist <= project(coarse, y).min_dist + 1e-15
    assert fine.resolution == pytest.approx(coarse.resolution / 2)


def test_conic_homogeneity():
    cloud = sample_image(ToyLightning(conic=True), X, SMALL, seed=0)
    y = YVector(np.array([0.4, -1.1, 0.6]))
    base = project(cloud, y).min_dist
    for s in (0.5, 3.0):
        assert abs(project(cloud, s * y).min_dist - s * base) <= 2 * s * cloud.resolution


def test_multivalued_and_basins():
    cloud = sample_image(ToyLightning(), X, CloudSpec(step=0.05, random_points=100_000), seed=0)
    res = find_multivalued(cloud, seed=0)
    assert res is not None and len(res.clusters) >= 2
    a1, a2 = res.cluster_alphas[:2]
    lab = 0.99 * res.y_d + 0.01 * res.clusters[0]
    rep = basin_check(ToyLightning(), X, lab, a1, a2, SMALL.box, 0.05)
    assert rep.separated


def test_solar_zero_base():
    cloud = sample_image(ToyLightning(conic=True), X, SMALL, seed=0)
    ybar = YVector.zeros(3)
    y = YVector(np.array([0.2, 0.1, -0.3]))
    rep = solar_check(cloud, y, ybar, 2 / 3, [0.5, 1.0])
    assert rep.threshold == 0.0
    assert all(r.asserted for r in rep.rows)
