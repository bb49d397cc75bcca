import numpy as np
import pytest

from tcr3.core.geometry import (
    SCALE_EPS,
    CameraModel,
    Pointmap,
    Sim3Transform,
    compute_normalization,
    denormalize,
    normalize,
    percentile_inliers,
    project_points,
    project_to_image,
    recover_tracks,
    residual_from_tracks,
    rotation_from_axis_angle,
    umeyama_sim3,
    unproject_to_world,
    visibility_from_projection,
)
from tcr3.errors import DegenerateAlignmentError, InvalidInputError


def random_rotation(rng):
    return rotation_from_axis_angle(rng.normal(size=3))


def test_zero_axis_angle_is_exact_identity():
    assert np.array_equal(rotation_from_axis_angle(np.zeros(3)), np.eye(3))


def test_unproject_then_project_returns_pixel_grid(rng):
    cam = CameraModel(20.0, 18.0, 7.3, 6.1, random_rotation(rng), rng.normal(size=3))
    depth = rng.uniform(1.0, 5.0, size=(12, 14))
    pm = unproject_to_world(depth, cam, frame_index=3)
    u, v, z, in_front = project_points(pm.points, cam)

    assert pm.frame_index == 3 and pm.timestamp_index == 3
    assert np.all(in_front)
    np.testing.assert_allclose(z, depth, atol=1e-10)
    np.testing.assert_allclose(u, np.tile(np.arange(14.0), (12, 1)), atol=1e-9)
    np.testing.assert_allclose(v, np.tile(np.arange(12.0)[:, None], (1, 14)), atol=1e-9)


def test_unproject_center_pixel_lies_on_optical_axis():
    cam = CameraModel(10.0, 10.0, 2.0, 1.0)
    depth = np.full((3, 5), 4.0)
    pm = unproject_to_world(depth, cam)
    np.testing.assert_array_equal(pm.points[1, 2], [0.0, 0.0, 4.0])


def test_unproject_rejects_non_finite_depth(camera):
    depth = np.ones((4, 4))
    depth[1, 2] = np.nan
    with pytest.raises(InvalidInputError):
        unproject_to_world(depth, camera)


def test_project_behind_camera_is_flagged(camera):
    u, v, z, in_front = project_to_image([0.0, 0.0, -1.0], camera)
    assert not in_front and z < 0 and np.isnan(u) and np.isnan(v)


def test_normalize_roundtrip_over_random_pointmaps(rng):
    for _ in range(1000):
        points = rng.normal(scale=rng.uniform(0.1, 10.0), size=(4, 5, 3)) + rng.normal(size=3)
        depths = rng.uniform(0.5, 5.0, size=(4, 5))
        pm = Pointmap(points.astype(np.float32).astype(np.float64))
        stats = compute_normalization([pm], [depths])
        back = denormalize(normalize(pm, stats), stats)
        np.testing.assert_allclose(back.points, pm.points, atol=1e-6 * max(1.0, np.abs(pm.points).max()))


def test_normalized_inliers_fit_in_unit_ball(rng):
    points = rng.normal(size=(8, 8, 3)) * 3.0
    depths = rng.uniform(1.0, 4.0, size=(8, 8))
    pm = Pointmap(points)
    stats = compute_normalization([pm], [depths])
    inliers = normalize(pm, stats).points[percentile_inliers(depths)]
    assert np.max(np.linalg.norm(inliers, axis=-1)) == pytest.approx(1.0)
    np.testing.assert_allclose(inliers.mean(axis=0), 0.0, atol=1e-12)


def test_degenerate_cloud_floors_scale_and_normalizes_to_zero():
    pm = Pointmap(np.full((3, 3, 3), 2.5))
    stats = compute_normalization([pm], [np.ones((3, 3))])
    assert stats.scale == SCALE_EPS
    np.testing.assert_array_equal(normalize(pm, stats).points, np.zeros((3, 3, 3)))


def test_residual_roundtrip_over_random_pointmaps(rng):
    for _ in range(1000):
        reference = Pointmap(rng.normal(size=(3, 4, 3)).astype(np.float32).astype(np.float64))
        track = Pointmap(reference.points + rng.normal(scale=0.1, size=(3, 4, 3)), 0, 2)
        recovered = recover_tracks(reference, residual_from_tracks(track, reference), timestamp_index=2)
        np.testing.assert_allclose(recovered.points, track.points, atol=1e-6)
        assert recovered.frame_index == 0 and recovered.timestamp_index == 2


def test_static_content_has_zero_residual(rng):
    reference = Pointmap(rng.normal(size=(2, 2, 3)))
    assert np.all(residual_from_tracks(reference, reference) == 0.0)


def test_umeyama_recovers_random_similarities(rng):
    for _ in range(1000):
        n = int(rng.integers(4, 40))
        source = rng.normal(size=(n, 3))
        truth = Sim3Transform(float(rng.uniform(0.2, 5.0)), random_rotation(rng), rng.normal(size=3) * 3)
        target = truth.apply(source)
        fitted = umeyama_sim3(source, target)
        rmse = np.sqrt(np.mean(np.sum((fitted.apply(source) - target) ** 2, axis=-1)))
        assert rmse < 1e-9
        assert fitted.scale == pytest.approx(truth.scale, rel=1e-9)


def test_umeyama_never_returns_reflection(rng):
    source = rng.normal(size=(20, 3))
    mirrored = source * np.array([1.0, 1.0, -1.0])
    fitted = umeyama_sim3(source, mirrored)
    assert np.linalg.det(fitted.rotation) == pytest.approx(1.0)


def test_umeyama_weights_ignore_outliers(rng):
    source = rng.normal(size=(30, 3))
    target = source * 2.0 + 1.0
    target[:5] += 50.0
    weights = np.ones(30)
    weights[:5] = 0.0
    fitted = umeyama_sim3(source, target, weights)
    assert fitted.scale == pytest.approx(2.0)
    np.testing.assert_allclose(fitted.translation, [1.0, 1.0, 1.0], atol=1e-9)


@pytest.mark.parametrize(
    "points",
    [
        np.zeros((2, 3)),
        np.outer(np.arange(6.0), [1.0, 2.0, 3.0]),
        np.ones((5, 3)),
    ],
)
def test_umeyama_rejects_degenerate_sets(points):
    with pytest.raises(DegenerateAlignmentError):
        umeyama_sim3(points, points + 1.0)


def test_visibility_from_projection_marks_occluded_and_out_of_view(camera):
    depth = np.full((16, 16), 3.0)
    points = unproject_to_world(depth, camera).points.copy()
    points[0, 0] += [0.0, 0.0, 1.0]  # behind the surface seen at its pixel
    points[0, 1] += [100.0, 0.0, 0.0]  # leaves the image
    vis = visibility_from_projection(Pointmap(points), depth, camera, tol=0.10)

    assert vis.values[0, 0] == 0.0
    assert vis.values[0, 1] == 0.0
    assert vis.values[5, 5] == 1.0
    assert set(np.unique(vis.values)) <= {0.0, 1.0}


@pytest.mark.parametrize("x, expected", [(-0.04, 0.0), (0.0, 1.0), (0.36, 1.0), (0.4, 0.0)])
def test_projection_bounds_use_the_unrounded_pixel(x, expected):
    # fx=10, cx=0 on a 4 x 4 image: x -> u = 10x; u=-0.4 and u=4 fall outside [0, 4), u=3.6 is inside
    cam = CameraModel(10.0, 10.0, 0.0, 0.0)
    vis = visibility_from_projection(Pointmap(np.array([[[x, 0.0, 1.0]]])), np.ones((4, 4)), cam, tol=0.10)
    assert vis.values[0, 0] == expected


def test_projection_depth_tolerance_is_inclusive():
    cam = CameraModel(10.0, 10.0, 0.0, 0.0)
    depth = np.full((4, 4), 2.0)
    at_tol = visibility_from_projection(Pointmap(np.array([[[0.0, 0.0, 2.5]]])), depth, cam, tol=0.25)
    beyond = visibility_from_projection(Pointmap(np.array([[[0.0, 0.0, 2.5001]]])), depth, cam, tol=0.25)
    assert at_tol.values[0, 0] == 1.0
    assert beyond.values[0, 0] == 0.0


def test_camera_rejects_non_rotation():
    with pytest.raises(InvalidInputError):
        CameraModel(1.0, 1.0, 0.0, 0.0, rotation=np.diag([1.0, 1.0, -1.0]))
