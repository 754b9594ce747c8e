import math

import numpy as np
import pytest

from sonarkit.errors import InvalidArgument
from sonarkit.geometry import SensorGeometry, polar_to_cartesian
from sonarkit.pose import Pose2D
from sonarkit.synth import (
    NoiseParams,
    Scene,
    footprint_overlap,
    make_dataset,
    make_scene,
    metric_to_pixel_pose,
    pixel_trajectory,
    render_frame,
    scene_for_sweep,
    sweep_trajectory,
)

G = SensorGeometry(beam_count=32, sample_count=64)


@pytest.fixture(scope="module")
def scene():
    w, h, _ = scene_for_sweep(5, 0.05, G)
    return make_scene(w, h, seed=3)


def test_base_texture_range():
    s = make_scene(1.0, 1.0, particle_density=0, depression_density=0, seed=1)
    assert s.reflectivity.min() >= 0.3 - 1e-12
    assert s.reflectivity.max() <= 0.5 + 1e-12
    assert not s.particles and not s.depressions


def test_scene_deterministic():
    a = make_scene(1.0, 0.8, seed=9)
    b = make_scene(1.0, 0.8, seed=9)
    np.testing.assert_array_equal(a.reflectivity, b.reflectivity)
    assert not np.array_equal(a.reflectivity, make_scene(1.0, 0.8, seed=10).reflectivity)


def test_particle_count_poisson():
    density, area = 40.0, 2.0 * 1.5
    counts = [len(make_scene(2.0, 1.5, meters_per_cell=0.02, particle_density=density, seed=s).particles)
              for s in range(10)]
    mean = density * area
    assert all(abs(c - mean) <= 3 * math.sqrt(mean) for c in counts)


def test_scene_rejects_bad_size():
    with pytest.raises(InvalidArgument):
        make_scene(0.0, 1.0)
    with pytest.raises(InvalidArgument):
        NoiseParams(speckle_looks=0.0)


def test_degenerate_noise_gives_clean(scene):
    pose = sweep_trajectory(1, start=scene_for_sweep(5, 0.05, G)[2])[0]
    noisy, clean = render_frame(scene, pose, G, NoiseParams(1e9, 0.0, 0.0), seed=4)
    np.testing.assert_allclose(noisy.data, clean.data, atol=1e-4)


def test_render_deterministic(scene):
    pose = Pose2D(0.0, scene_for_sweep(5, 0.05, G)[2])
    a, _ = render_frame(scene, pose, G, seed=11)
    b, _ = render_frame(scene, pose, G, seed=11)
    np.testing.assert_array_equal(a.data, b.data)


def test_clean_independent_of_seed(scene):
    pose = Pose2D(0.0, scene_for_sweep(5, 0.05, G)[2])
    _, c1 = render_frame(scene, pose, G, seed=1)
    _, c2 = render_frame(scene, pose, G, seed=2)
    np.testing.assert_array_equal(c1.data, c2.data)


def test_speckle_mean_is_one():
    # Constant 0.2 reflectivity keeps clean * speckle far from the clamp at 1.
    g = SensorGeometry()
    flat = Scene(np.full((200, 200), 0.2), 0.05)
    poses = [Pose2D(0.0, (5.0, 1.0))] * 3
    noisy, clean, _ = make_dataset(flat, poses, g, NoiseParams(4.0, 0.0, 0.0), seed=5)
    ratio = noisy.stack() / clean.stack()
    assert ratio.size >= 1e5
    assert abs(ratio.mean() - 1.0) < 0.01


def test_attenuation_scales_clean(scene):
    pose = Pose2D(0.0, scene_for_sweep(5, 0.05, G)[2])
    _, plain = render_frame(scene, pose, G, NoiseParams(4, 0, 0.0))
    _, att = render_frame(scene, pose, G, NoiseParams(4, 0, 0.5))
    expected = plain.data * np.exp(-0.5 * G.ranges_m)[:, None]
    np.testing.assert_allclose(att.data, expected, atol=1e-12)


def test_dataset_identical_poses(scene):
    pose = Pose2D(0.0, scene_for_sweep(5, 0.05, G)[2])
    noisy, clean, poses = make_dataset(scene, [pose, pose], G, seed=2)
    np.testing.assert_array_equal(clean[0].data, clean[1].data)
    assert not np.array_equal(noisy[0].data, noisy[1].data)
    assert len(make_dataset(scene, [pose], G)[0]) == 1
    with pytest.raises(InvalidArgument):
        make_dataset(scene, [], G)


def test_default_sweep_overlap():
    g = SensorGeometry()
    traj = sweep_trajectory(6, seed=1)
    for a, b in zip(traj, traj[1:]):
        assert footprint_overlap(a, b, g) >= 0.6


def test_overlap_oracle_pure_translation():
    # Translating a wedge sideways by d: compare to a Monte-Carlo estimate in polar coordinates.
    g = SensorGeometry()
    d = 0.2
    rng = np.random.default_rng(0)
    n = 200_000
    r = np.sqrt(rng.uniform(g.range_min_m**2, g.range_max_m**2, n))
    az = rng.uniform(-g.fov_deg / 2, g.fov_deg / 2, n)
    u, v = r * np.sin(np.radians(az)) - d, r * np.cos(np.radians(az))
    inside = g.contains(np.hypot(u, v), np.degrees(np.arctan2(u, v)))
    assert footprint_overlap(Pose2D(0, (0, 0)), Pose2D(0, (d, 0)), g) == pytest.approx(inside.mean(), abs=0.01)


def test_pixel_pose_matches_rendered_motion(scene):
    # A ground-truth pixel pose maps a scene feature from frame 1 onto frame 0.
    w, h, start = scene_for_sweep(5, 0.05, G)
    poses = [Pose2D(0.0, start), Pose2D(1.5, (start[0] + 0.08, start[1] + 0.03))]
    mpp = 0.01
    gt = pixel_trajectory(poses, G, mpp)
    _, clean, _ = make_dataset(scene, poses, G, NoiseParams(1e9, 0, 0))
    c0 = polar_to_cartesian(clean[0], mpp)
    c1 = polar_to_cartesian(clean[1], mpp)
    ys, xs = np.nonzero(c1.mask)
    mapped = gt[1].apply(np.stack([xs, ys], axis=1).astype(float))
    ok = (mapped[:, 0] > 2) & (mapped[:, 0] < c0.pixels.shape[1] - 3) & \
         (mapped[:, 1] > 2) & (mapped[:, 1] < c0.pixels.shape[0] - 3)
    xi, yi = np.round(mapped[ok]).astype(int).T
    both = c0.mask[yi, xi]
    diff = np.abs(c0.pixels[yi[both], xi[both]] - c1.pixels[ys[ok][both], xs[ok][both]])
    assert both.sum() > 1000
    assert np.median(diff) < 0.01


def test_metric_to_pixel_pose_identity():
    p = metric_to_pixel_pose(Pose2D.identity(), (10.0, 20.0), 0.01)
    assert p.rotation_deg == pytest.approx(0.0)
    np.testing.assert_allclose(p.translation, (0.0, 0.0), atol=1e-12)
