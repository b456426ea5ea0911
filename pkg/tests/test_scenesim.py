import dataclasses
import math

import numpy as np
import pytest

from activepose.dome import rig_from_angles
from activepose.kernels import blocked_joints
from activepose.scenesim import (
    CANONICAL_BONES,
    FEATURE_DIM,
    MAP_SHAPE,
    N_JOINTS,
    EstimatorConfig,
    Scene,
    SceneConfig,
    _capsules,
    _noisy_pose,
    base_feature_map,
    bone_lengths,
    generate_scene,
    max_joint_step,
    noise_sigma,
    observe,
    view_geometry,
    visibilities,
    visibility,
)
from helpers import centered_person_scene, multi_scene


def test_single_person_scene_shape():
    sc = generate_scene(SceneConfig(persons=(1, 1), length=10), 3)
    assert len(sc.persons) == 1
    assert sc.length == 10
    assert sc.persons[0].trajectory.shape == (10, N_JOINTS, 3)
    assert sc.persons[0].signature.shape == (FEATURE_DIM,)


def test_generation_is_deterministic():
    cfg = SceneConfig(persons=(3, 7), n_occluders=2)
    assert generate_scene(cfg, 8) == generate_scene(cfg, 8)
    assert generate_scene(cfg, 8) != generate_scene(cfg, 9)


@pytest.mark.parametrize("persons", [(0, 1), (1, 8), (5, 3)])
def test_rejects_bad_person_counts(persons):
    with pytest.raises(ValueError):
        SceneConfig(persons=persons)


def test_rejects_short_scenes():
    with pytest.raises(ValueError):
        SceneConfig(length=9)


def test_signature_margin_pairwise_scan():
    cfg = SceneConfig(persons=(5, 5))
    sc = generate_scene(cfg, 11)
    sigs = np.stack([p.signature for p in sc.persons])
    for i in range(len(sigs)):
        for j in range(i + 1, len(sigs)):
            assert np.linalg.norm(sigs[i] - sigs[j]) >= cfg.signature_margin


@pytest.mark.parametrize("seed", range(5))
def test_motion_is_smooth_and_bones_stay_in_bounds(seed):
    cfg = SceneConfig(persons=(3, 7))
    sc = generate_scene(cfg, seed)
    assert max_joint_step(sc) <= cfg.max_joint_step
    for p in sc.persons:
        ratio = bone_lengths(p.trajectory) / CANONICAL_BONES
        assert np.all(ratio >= 0.5) and np.all(ratio <= 1.5)
        assert np.all(np.isfinite(p.trajectory))


def test_scene_text_round_trip():
    sc = multi_scene(4, n_occluders=2)
    text = sc.to_text()
    assert text.startswith("scenesim-v1\n")
    again = Scene.from_text(text)
    assert again == sc
    np.testing.assert_array_equal(again.persons[1].trajectory, sc.persons[1].trajectory)


def test_scene_text_rejects_unknown_version():
    with pytest.raises(ValueError):
        Scene.from_text("scenesim-v0\n{}\n")


# -- visibility -------------------------------------------------------------


def _seg_point_dist(p, a, b):
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0, 1)
    return np.linalg.norm(a + t[:, None] * ab - p, axis=1)


def sampled_blocked(scene, cam, t, n=4000):
    """Dense-sampling oracle: (blocked mask, minimum clearance) per person and joint."""
    poses = scene.poses(t)
    c = cam.position_mm
    s = np.linspace(0.0, 1.0, n)
    out = np.zeros(poses.shape[:2], dtype=bool)
    margin = np.full(poses.shape[:2], np.inf)
    for p in range(len(poses)):
        for j in range(N_JOINTS):
            pts = poses[p, j] + s[:, None] * (c - poses[p, j])
            for q in range(len(poses)):
                if q == p:
                    continue
                a = poses[q, 2].copy()
                a[2] = min(poses[q, 8, 2], poses[q, 14, 2])
                d = _seg_point_dist(pts, a, poses[q, 1]).min() - scene.capsule_radius
                out[p, j] |= d < 0
                margin[p, j] = min(margin[p, j], abs(d))
            for sph in scene.occluders * 1000.0:
                d = np.linalg.norm(pts - sph[:3], axis=1).min() - sph[3]
                out[p, j] |= d < 0
                margin[p, j] = min(margin[p, j], abs(d))
    return out, margin


def test_lone_person_fully_visible():
    sc = centered_person_scene()
    for cam in sc.rig.cameras:
        assert visibility(sc, 0, cam, 0) == 1.0


def test_enclosing_occluder_hides_everything():
    sc = centered_person_scene()
    pelvis = sc.pose(0, 0)[2] / 1000.0
    sc = dataclasses.replace(sc, occluders=np.array([[*pelvis, 1.5]]))
    assert visibility(sc, 0, sc.rig[0], 0) == 0.0
    dets, _ = observe(sc, sc.rig[0], 0)
    assert dets == []


def test_one_blocked_joint():
    sc = centered_person_scene()
    cam = sc.rig[0]
    head = sc.pose(0, 0)[1]
    centre = head + 0.08 * (cam.position_mm - head)
    sc = dataclasses.replace(sc, occluders=np.array([[*(centre / 1000.0), 0.02]]))
    oracle, _ = sampled_blocked(sc, cam, 0)
    assert oracle[0].sum() == 1
    assert visibility(sc, 0, cam, 0) == pytest.approx(14 / 15, abs=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_visibility_matches_sampling_oracle(seed):
    sc = multi_scene(seed, n_occluders=3)
    rng = np.random.default_rng(seed)
    for _ in range(3):
        cam = sc.rig[int(rng.integers(len(sc.rig)))]
        t = int(rng.integers(sc.length))
        oracle, margin = sampled_blocked(sc, cam, t)
        a, b, r = _capsules(sc, t)
        got = blocked_joints(sc.poses(t), cam.position_mm, a, b, r, sc.occluders * 1000.0)
        clear = margin > 5.0  # sampling is only trusted away from tangency
        assert clear.mean() > 0.9
        np.testing.assert_array_equal(got[clear], oracle[clear])
        np.testing.assert_allclose(visibilities(sc, cam, t), 1.0 - got.mean(axis=1), atol=1e-15)


# -- estimator ----------------------------------------------------------------


def test_zero_noise_reproduces_ground_truth():
    sc = centered_person_scene()
    est = EstimatorConfig(noise_scale=0.0)
    for seed in range(5):
        dets, _ = observe(sc, sc.rig[1], 3, seed, est)
        assert len(dets) == 1
        np.testing.assert_array_equal(dets[0].pose_estimate, sc.pose(0, 3))


def test_frontal_view_error_matches_base_noise():
    sc = centered_person_scene()
    cam = sc.rig[0]
    rel, elev, rr = view_geometry(sc, 0, cam, 0)
    assert abs(rel) < 1e-9 and abs(elev) < 1e-9 and rr == pytest.approx(1.0)
    est = EstimatorConfig(p_fail=0.0)
    errs = [
        np.linalg.norm(observe(sc, cam, 0, s, est)[0][0].pose_estimate - sc.pose(0, 0), axis=1).mean()
        for s in range(10_000)
    ]
    assert np.mean(errs) == pytest.approx(est.sigma0, rel=0.05)


def test_expected_error_grows_with_occlusion():
    sc = centered_person_scene()
    est = EstimatorConfig()
    gt = sc.pose(0, 0)
    means = []
    for vis in (1.0, 0.7, 0.4):
        rng = np.random.default_rng(0)
        sigma = noise_sigma(sc, 0, sc.rig[0], 0, vis, est)
        p_fail = est.p_fail + est.p_fail_occ * (1 - vis)
        e = [np.linalg.norm(_noisy_pose(rng, gt, sigma, p_fail, 1.0, est) - gt, axis=1).mean() for _ in range(1000)]
        means.append(np.mean(e))
    assert means[0] <= means[1] <= means[2]


def test_rear_and_top_views_are_noisier():
    sc = centered_person_scene()
    est = EstimatorConfig()
    front = noise_sigma(sc, 0, sc.rig[0], 0, 1.0, est)
    side = noise_sigma(sc, 0, sc.rig[1], 0, 1.0, est)
    back = noise_sigma(sc, 0, sc.rig[2], 0, 1.0, est)
    assert front < side < back
    high = rig_from_angles([float(sc.persons[0].facing[0])] * 2, [0.9, -0.9], kappa=1.0)
    assert noise_sigma(sc, 0, high[0], 0, 1.0, est) > front


def test_detections_respect_threshold_and_determinism():
    sc = multi_scene(2, n_occluders=2)
    est = EstimatorConfig()
    for cam in sc.rig.cameras[:10]:
        vis = visibilities(sc, cam, 5)
        dets, bmap = observe(sc, cam, 5, 7, est)
        hints = sorted(d.person_index_hint for d in dets)
        assert hints == [k for k in range(len(sc.persons)) if vis[k] >= est.detect_threshold]
        for d in dets:
            assert d.visibility_fraction >= est.detect_threshold
            assert np.all(np.isfinite(d.pose_estimate))
        again, bmap2 = observe(sc, cam, 5, 7, est)
        for a, b in zip(dets, again):
            np.testing.assert_array_equal(a.pose_estimate, b.pose_estimate)
            np.testing.assert_array_equal(a.instance_feature, b.instance_feature)
        np.testing.assert_array_equal(bmap.grid, bmap2.grid)
        assert bmap.grid.shape == MAP_SHAPE and np.all(np.isfinite(bmap.grid))


def test_base_map_ignores_detection_order():
    sc = multi_scene(5)
    cam = sc.rig[4]
    dets, bmap = observe(sc, cam, 2)
    rev = base_feature_map(sc, cam, 2, dets[::-1])
    np.testing.assert_allclose(rev.grid, bmap.grid, atol=1e-12)


def test_instance_features_scatter_around_signature():
    sc = centered_person_scene()
    est = EstimatorConfig()
    feats = np.stack([observe(sc, sc.rig[0], 0, s, est)[0][0].instance_feature for s in range(2000)])
    sig = sc.persons[0].signature
    np.testing.assert_allclose(feats.mean(axis=0), sig, atol=5 * est.sigma_feat / math.sqrt(2000))
    assert feats.std(axis=0).mean() == pytest.approx(est.sigma_feat, rel=0.05)
