import numpy as np
import pytest

from dpmkit.errors import (
    DegenerateGeometryError,
    EmptyTargetError,
    InsufficientDataError,
    InsufficientStaticStructureError,
)
from dpmkit.geometry import (
    CameraModel,
    PointMap,
    RigidTransform,
    axis_angle_rotation,
    pixel_grid,
)
from dpmkit.losses import rpe_rot, rpe_trans
from dpmkit.solvers import (
    alignment_residual,
    compute_flows,
    default_motion_eps,
    estimate_camera_motion,
    fuse_points,
    match_points,
    motion_mask,
    recover_focal,
    track_object,
    umeyama_align,
)
from dpmkit.synth import (
    ObjectTrack,
    Primitive,
    SceneSpec,
    build_quad,
    exact_correspondence,
    exact_match_scene,
    follow_camera_scene,
    perturb,
    perturb_point_map,
    random_scene,
    static_room_scene,
    swap_scene,
)

# Values pinned from tests/oracles/calibrate_solvers.py (100 seeds each):
#   focal outliers: worst 1.78e-15
#   camera noise 1%: median rot 0.0114567 deg, median trans 0.00478551
#   object noise 1%: median rot 1.41958 deg, median trans 0.14305
CAMERA_NOISE_ROT_DEG = 0.0114567
CAMERA_NOISE_TRANS = 0.00478551
OBJECT_NOISE_ROT_DEG = 1.41958
OBJECT_NOISE_TRANS = 0.14305


def median_depth(pmap):
    return float(np.median(pmap.points[2, pmap.valid]))


def brute_force_match(a, b):
    """Independent O(N^2) scan used as the matching oracle."""
    tsel = np.flatnonzero(b.valid)
    tp = b.points[:, tsel]
    idx = np.full(a.size, -1, dtype=np.int64)
    dist = np.full(a.size, np.inf)
    for j in np.flatnonzero(a.valid):
        d = np.sqrt(np.sum((tp - a.points[:, j][:, None]) ** 2, axis=0))
        k = int(np.argmin(d))
        idx[j] = tsel[k]
        dist[j] = d[k]
    return idx, dist


class TestRecoverFocal:
    def test_noiseless_recovery(self):
        spec = random_scene(0)
        quad, _ = build_quad(spec)
        grid = pixel_grid(spec.width, spec.height)
        f = recover_focal(quad.img1_t1, grid, (spec.camera1.cx, spec.camera1.cy))
        assert abs(f / spec.camera1.fx - 1.0) < 1e-4

    def test_outliers_at_triple_depth(self):
        # calibrated worst case over 100 seeds is 1.78e-15; the robust
        # iteration must stay far inside the 1% contract
        worst = 0.0
        for seed in range(100):
            spec = random_scene(seed, width=64, height=48)
            quad, _ = build_quad(spec)
            pm = quad.img1_t1.copy()
            rng = np.random.default_rng(seed + 10_000)
            sel = np.flatnonzero(pm.valid)
            bad = rng.choice(sel, size=max(1, sel.size // 10), replace=False)
            pm.points[2, bad] *= 3.0
            grid = pixel_grid(spec.width, spec.height)
            f = recover_focal(pm, grid, (spec.camera1.cx, spec.camera1.cy))
            worst = max(worst, abs(f / spec.camera1.fx - 1.0))
        assert worst < 1e-12
        assert worst < 0.01

    def test_insufficient_pixels(self):
        grid = pixel_grid(3, 3)
        pts = np.zeros((3, 9))
        pts[2] = 2.0
        valid = np.zeros(9, bool)
        valid[:5] = True
        with pytest.raises(InsufficientDataError):
            recover_focal(PointMap(pts, valid), grid, (1.5, 1.5))

    def test_optical_axis_degenerate(self):
        grid = pixel_grid(4, 3)
        pts = np.zeros((3, 12))
        pts[2] = np.linspace(1.0, 3.0, 12)
        with pytest.raises(DegenerateGeometryError):
            recover_focal(PointMap(pts, np.ones(12, bool)), grid, (2.0, 1.5))


class TestMatchPoints:
    def test_self_match_is_identity(self):
        quad, _ = build_quad(random_scene(1, width=32, height=24))
        corr = match_points(quad.img1_t1, quad.img1_t1)
        sel = quad.valid1
        np.testing.assert_array_equal(corr.target_index[sel], np.flatnonzero(sel))
        assert np.all(corr.distance[sel] == 0.0)

    def test_cyclic_shift_recovered(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(3, 40))
        a = PointMap(pts, np.ones(40, bool))
        b = PointMap(np.roll(pts, 1, axis=1), np.ones(40, bool))
        corr = match_points(a, b)
        np.testing.assert_array_equal(corr.target_index, (np.arange(40) + 1) % 40)

    def test_empty_target_errors(self):
        a = PointMap(np.zeros((3, 4)), np.ones(4, bool))
        b = PointMap(np.zeros((3, 4)), np.zeros(4, bool))
        with pytest.raises(EmptyTargetError):
            match_points(a, b)

    def test_matches_address_valid_targets_only(self):
        rng = np.random.default_rng(3)
        a = PointMap(rng.normal(size=(3, 50)), np.ones(50, bool))
        bv = rng.random(50) > 0.5
        b = PointMap(rng.normal(size=(3, 50)), bv)
        corr = match_points(a, b)
        assert np.all(bv[corr.target_index[corr.valid]])

    def test_grid_equals_brute_oracle(self):
        for seed in (0, 1, 2):
            quad, _ = build_quad(random_scene(seed, width=64, height=48))
            oracle_idx, oracle_dist = brute_force_match(quad.img1_t1, quad.img2_t1)
            got = match_points(quad.img1_t1, quad.img2_t1, method="grid")
            np.testing.assert_array_equal(got.target_index, oracle_idx)
            sel = quad.valid1
            np.testing.assert_array_equal(got.distance[sel], oracle_dist[sel])

    def test_gt_correspondence_accuracy_is_100_percent(self):
        for seed in (0, 5, 9):
            spec = exact_match_scene(seed)
            quad, gt = build_quad(spec)
            target, covis = exact_correspondence(spec, quad, gt)
            assert covis.sum() > 1000
            corr = match_points(quad.img1_t1, quad.img2_t1)
            assert np.all(corr.target_index[covis] == target[covis])

    def test_tie_breaks_to_lowest_index(self):
        a = PointMap(np.zeros((3, 1)), np.ones(1, bool))
        pts = np.array([[1.0, -1.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        b = PointMap(pts, np.ones(3, bool))
        corr = match_points(a, b)
        assert corr.target_index[0] == 0  # indices 0 and 2 tie at distance 1


class TestMotionMask:
    def test_identical_maps_all_false(self):
        quad, _ = build_quad(random_scene(4, width=32, height=24))
        for eps in (0.0, 0.1, 10.0):
            mm = motion_mask(quad.img1_t1, quad.img1_t1, eps)
            assert not mm.moved.any()

    def test_single_displaced_column(self):
        pts = np.zeros((3, 10))
        pts[2] = 1.0
        a = PointMap(pts, np.ones(10, bool), frame=(1, 1))
        moved = pts.copy()
        moved[0, 4] += 0.2
        b = PointMap(moved, np.ones(10, bool), frame=(2, 1))
        mm = motion_mask(a, b, eps=0.1)
        expected = np.zeros(10, bool)
        expected[4] = True
        np.testing.assert_array_equal(mm.moved, expected)

    def test_matches_gt_mask_noiselessly(self):
        for seed in range(5):
            quad, _ = build_quad(random_scene(seed))
            eps = default_motion_eps(quad)
            mm = motion_mask(quad.img1_t1, quad.img1_t2, eps)
            np.testing.assert_array_equal(mm.moved, quad.mask1)

    def test_mismatched_sizes_rejected(self):
        a = PointMap(np.zeros((3, 4)), np.ones(4, bool))
        b = PointMap(np.zeros((3, 5)), np.ones(5, bool))
        with pytest.raises(ValueError):
            motion_mask(a, b, 0.1)


class TestUmeyama:
    def test_identity_on_equal_clouds(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(3, 30))
        t = umeyama_align(pts, pts, with_scale=True)
        np.testing.assert_allclose(t.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(t.translation, 0.0, atol=1e-12)
        assert t.scale == pytest.approx(1.0, abs=1e-12)

    def test_exact_similarity_recovery(self):
        rng = np.random.default_rng(6)
        src = rng.normal(size=(3, 50))
        truth = RigidTransform(
            axis_angle_rotation([0, 0, 1], np.pi / 2), np.array([1.0, 2.0, 3.0]), 2.0
        )
        dst = truth.apply(src)
        est = umeyama_align(src, dst, with_scale=True)
        np.testing.assert_allclose(est.rotation, truth.rotation, atol=1e-9)
        np.testing.assert_allclose(est.translation, truth.translation, atol=1e-9)
        assert est.scale == pytest.approx(2.0, abs=1e-9)

    def test_weighted_ignores_zero_weight_outliers(self):
        rng = np.random.default_rng(7)
        src = rng.normal(size=(3, 40))
        truth = RigidTransform(axis_angle_rotation([1, 1, 0], 0.4), np.array([0.5, -1, 2]))
        dst = truth.apply(src)
        dst[:, :5] += 100.0  # poisoned points
        w = np.ones(40)
        w[:5] = 0.0
        est = umeyama_align(src, dst, weights=w)
        np.testing.assert_allclose(est.rotation, truth.rotation, atol=1e-9)

    def test_near_planar_reflections_corrected(self):
        # fuzz: noisy near-planar clouds must never yield det(R) = -1
        rng = np.random.default_rng(8)
        for _ in range(1000):
            src = rng.normal(size=(3, 12))
            src[2] *= 1e-4
            dst = -src[:, ::-1] + rng.normal(scale=1e-3, size=src.shape)
            dst = dst[:, ::-1]
            try:
                est = umeyama_align(src, dst, with_scale=True)
            except DegenerateGeometryError:
                continue
            assert np.linalg.det(est.rotation) == pytest.approx(1.0, abs=1e-9)

    def test_collinear_degenerate(self):
        src = np.zeros((3, 10))
        src[0] = np.linspace(0, 1, 10)
        with pytest.raises(DegenerateGeometryError):
            umeyama_align(src, src.copy())

    def test_too_few_points(self):
        with pytest.raises(InsufficientDataError):
            umeyama_align(np.zeros((3, 2)), np.zeros((3, 2)))

    def test_local_optimality_probe(self):
        rng = np.random.default_rng(9)
        src = rng.normal(size=(3, 60))
        truth = RigidTransform(axis_angle_rotation([1, 2, 3], 0.7), np.array([1, 0, -2]), 1.3)
        dst = truth.apply(src) + rng.normal(scale=0.05, size=src.shape)
        est = umeyama_align(src, dst, with_scale=True)
        base = alignment_residual(est, src, dst)
        for _ in range(100):
            wiggle = RigidTransform(
                axis_angle_rotation(rng.normal(size=3), rng.uniform(0.001, 0.05)),
                rng.normal(scale=0.02, size=3),
                float(np.exp(rng.normal(scale=0.02))),
            )
            probe = wiggle.compose(est)
            assert alignment_residual(probe, src, dst) >= base - 1e-12

    def test_scale_equals_brute_force_scan(self):
        rng = np.random.default_rng(10)
        src = rng.normal(size=(3, 40))
        dst = 1.7 * src + rng.normal(scale=0.1, size=src.shape)
        est = umeyama_align(src, dst, with_scale=True)
        # residual as a function of scale alone (R, t re-optimised per s in
        # closed form through the centroids; R does not depend on s)
        scales = np.linspace(max(1e-3, est.scale - 0.5), est.scale + 0.5, 20001)
        best = min(
            scales,
            key=lambda s: alignment_residual(
                RigidTransform(
                    est.rotation,
                    dst.mean(axis=1) - s * est.rotation @ src.mean(axis=1),
                    float(s),
                ),
                src,
                dst,
            ),
        )
        assert abs(best - est.scale) < 1e-4


class TestEstimateCameraMotion:
    def test_static_scene_exact(self):
        spec = static_room_scene(0)
        quad, gt = build_quad(spec)
        est = estimate_camera_motion(quad, gt.img2_t1_view2, mode="gt")
        assert rpe_rot(gt.cam_motion.rotation, est.rotation) < 1e-6
        assert rpe_trans(gt.cam_motion.translation, est.translation) < 1e-6

    def test_half_dynamic_scene_exact(self):
        # a dynamic box covering roughly half the pixels
        cam = CameraModel(100.0, 100.0, 32.0, 24.0, RigidTransform.identity())
        delta = RigidTransform(
            axis_angle_rotation([0, 1, 0], 0.05), np.array([0.3, 0.0, 0.1])
        )
        cam2 = CameraModel(100.0, 100.0, 32.0, 24.0, delta)
        plane = ObjectTrack(
            Primitive("plane", (8.0,), 0),
            RigidTransform.identity(),
            RigidTransform.identity(),
            False,
        )
        box_pose = RigidTransform(np.eye(3), np.array([-1.3, 0.0, 4.0]))
        box_motion = RigidTransform(np.eye(3), np.array([0.8, 0.6, 0.0]))
        box = ObjectTrack(
            Primitive("box", (1.3, 1.6, 0.5), 1),
            box_pose,
            box_motion.compose(box_pose),
            True,
        )
        spec = SceneSpec(64, 48, cam, cam2, (plane, box))
        quad, gt = build_quad(spec)
        frac = quad.mask2.sum() / quad.valid2.sum()
        assert 0.3 < frac < 0.7
        est = estimate_camera_motion(quad, gt.img2_t1_view2, mode="auto")
        assert rpe_rot(gt.cam_motion.rotation, est.rotation) < 1e-6
        assert rpe_trans(gt.cam_motion.translation, est.translation) < 1e-6

    def test_noise_one_percent_median_rotation(self):
        rots, trans = [], []
        for seed in range(100):
            spec = random_scene(seed, width=64, height=48)
            quad, gt = build_quad(spec)
            sigma = 0.01 * median_depth(quad.img1_t1)
            noisy = perturb(quad, sigma, seed=seed + 20_000)
            src = perturb_point_map(gt.img2_t1_view2, sigma, seed=seed + 30_000)
            est = estimate_camera_motion(noisy, src, mode="auto")
            rots.append(rpe_rot(gt.cam_motion.rotation, est.rotation))
            trans.append(rpe_trans(gt.cam_motion.translation, est.translation))
        med_rot_deg = float(np.degrees(np.median(rots)))
        assert med_rot_deg < np.degrees(np.deg2rad(2.0))  # < 2 degrees
        assert med_rot_deg < 1.5 * CAMERA_NOISE_ROT_DEG
        assert float(np.median(trans)) < 1.5 * CAMERA_NOISE_TRANS

    def test_all_dynamic_raises(self):
        cam = CameraModel(100.0, 100.0, 16.0, 12.0, RigidTransform.identity())
        sphere = ObjectTrack(
            Primitive("sphere", (3.0,), 0),
            RigidTransform(np.eye(3), np.array([0.0, 0.0, 5.0])),
            RigidTransform(np.eye(3), np.array([1.5, 0.0, 5.0])),
            True,
        )
        spec = SceneSpec(32, 24, cam, cam, (sphere,))
        quad, gt = build_quad(spec)
        with pytest.raises(InsufficientStaticStructureError):
            estimate_camera_motion(quad, gt.img2_t1_view2, mode="gt")

    def test_scale_invariance_of_rotation(self):
        spec = random_scene(31)
        quad, gt = build_quad(spec)
        base = estimate_camera_motion(quad, gt.img2_t1_view2, mode="auto", with_scale=True)
        for alpha in (0.01, 3.0, 250.0):
            scaled = quad.copy()
            for pm in scaled.maps().values():
                pm.points *= alpha
            src = gt.img2_t1_view2.copy()
            src.points = src.points * alpha
            est = estimate_camera_motion(scaled, src, mode="auto", with_scale=True)
            np.testing.assert_allclose(est.rotation, base.rotation, atol=1e-9)

    def test_swapped_quad_source(self):
        spec = random_scene(12)
        quad, gt = build_quad(spec)
        swapped, _ = build_quad(swap_scene(spec))
        est = estimate_camera_motion(quad, swapped, mode="auto")
        assert rpe_rot(gt.cam_motion.rotation, est.rotation) < 1e-6
        assert rpe_trans(gt.cam_motion.translation, est.translation) < 1e-6


class TestTrackObject:
    def test_static_object_identity(self):
        quad, gt = build_quad(static_room_scene(1))
        mask = quad.objid1 == 1
        est = track_object(quad, mask)
        # arccos bottoms out around 1.5e-8 near zero angle, so identity is
        # asserted at the matrix level
        assert np.max(np.abs(est.rotation - np.eye(3))) < 1e-9
        assert np.linalg.norm(est.translation) < 1e-9

    def test_exact_recovery_all_objects(self):
        for seed in range(10):
            quad, gt = build_quad(random_scene(seed))
            for oid, motion in gt.object_motions.items():
                mask = quad.objid1 == oid
                if (mask & quad.valid1).sum() < 3:
                    continue
                est = track_object(quad, mask)
                assert rpe_rot(motion.rotation, est.rotation) < 1e-6
                assert rpe_trans(motion.translation, est.translation) < 1e-6

    def test_noisy_rpe_medians_within_calibration(self):
        rots, trans = [], []
        for seed in range(100):
            spec = random_scene(seed, width=64, height=48)
            quad, gt = build_quad(spec)
            sigma = 0.01 * median_depth(quad.img1_t1)
            noisy = perturb(quad, sigma, seed=seed + 40_000)
            for oid, motion in gt.object_motions.items():
                mask = (quad.objid1 == oid) & quad.valid1
                if mask.sum() < 50:
                    continue
                est = track_object(noisy, mask)
                rots.append(rpe_rot(motion.rotation, est.rotation))
                trans.append(rpe_trans(motion.translation, est.translation))
        assert float(np.degrees(np.median(rots))) < 1.5 * OBJECT_NOISE_ROT_DEG
        assert float(np.median(trans)) < 1.5 * OBJECT_NOISE_TRANS

    def test_tiny_mask_raises(self):
        quad, _ = build_quad(random_scene(2))
        mask = np.zeros(quad.valid1.size, bool)
        mask[:2] = True
        with pytest.raises(InsufficientDataError):
            track_object(quad, mask)


class TestComputeFlows:
    def test_static_scene_static_camera_all_zero(self):
        cam = CameraModel(100.0, 100.0, 16.0, 12.0, RigidTransform.identity())
        plane = ObjectTrack(
            Primitive("plane", (5.0,), 0),
            RigidTransform.identity(),
            RigidTransform.identity(),
            False,
        )
        spec = SceneSpec(32, 24, cam, cam, (plane,))
        quad, gt = build_quad(spec)
        flows = compute_flows(quad, cam_motion=gt.cam_motion)
        for f in flows.values():
            assert np.all(f.vectors[:, f.valid] == 0.0)

    def test_static_scene_moving_camera(self):
        spec = static_room_scene(3)
        quad, gt = build_quad(spec)
        flows = compute_flows(quad, cam_motion=gt.cam_motion)
        of = flows["OF-F"]
        assert np.max(np.abs(of.vectors[:, of.valid])) == 0.0
        sf = flows["SF-F"]
        expected = gt.cam_motion.inverse().apply(quad.img1_t1.points) - quad.img1_t1.points
        np.testing.assert_allclose(
            sf.vectors[:, sf.valid], expected[:, sf.valid], atol=1e-9
        )

    def test_flows_match_generator_gt(self):
        for seed in (0, 1, 2):
            spec = random_scene(seed)
            quad, gt = build_quad(spec)
            flows = compute_flows(quad, cam_motion=gt.cam_motion)
            for kind, flow in flows.items():
                ref = gt.flows[kind]
                np.testing.assert_array_equal(flow.valid, ref.valid)
                err = np.abs(flow.vectors - ref.vectors)[:, flow.valid]
                assert err.max() < 1e-9

    def test_swapped_route_matches_gt(self):
        spec = random_scene(6)
        quad, gt = build_quad(spec)
        swapped, _ = build_quad(swap_scene(spec))
        flows = compute_flows(quad, swapped=swapped)
        for kind in ("SF-F", "SF-B"):
            ref = gt.flows[kind]
            sel = flows[kind].valid & ref.valid
            err = np.abs(flows[kind].vectors - ref.vectors)[:, sel]
            assert err.max() < 1e-9

    def test_scene_flow_without_source_errors(self):
        quad, _ = build_quad(random_scene(7, width=32, height=24))
        with pytest.raises(ValueError):
            compute_flows(quad, scene_flow=True)
        flows = compute_flows(quad)  # object flows only
        assert set(flows) == {"OF-F", "OF-B"}


class TestFusePoints:
    def test_fused_size_is_sum_of_valid(self):
        quad, _ = build_quad(random_scene(8))
        cloud = fuse_points(quad, "t1")
        assert cloud.points.shape[1] == quad.valid1.sum() + quad.valid2.sum()
        assert set(np.unique(cloud.source_image)) <= {1, 2}

    def test_static_scene_double_covers_surface(self):
        quad, _ = build_quad(static_room_scene(4))
        cloud = fuse_points(quad, "t1")
        a = cloud.points[:, cloud.source_image == 1]
        b = cloud.points[:, cloud.source_image == 2]
        # subsample for speed; co-visible static structure must coincide
        rng = np.random.default_rng(0)
        take = rng.choice(b.shape[1], size=200, replace=False)
        d = np.sqrt(np.sum((b[:, take][:, None, :] - a[:, :, None]) ** 2, axis=0))
        nn = d.min(axis=0)
        assert np.median(nn) < 0.1

    def test_followed_sphere_coincides_across_sources(self):
        spec = follow_camera_scene(0)
        quad, _ = build_quad(spec)
        sphere_id = 1
        cloud = fuse_points(quad, "t1")
        on_sphere1 = (cloud.source_image == 1) & (
            quad.objid1[cloud.pixel_index] == sphere_id
        )
        on_sphere2 = (cloud.source_image == 2) & (
            quad.objid2[cloud.pixel_index] == sphere_id
        )
        a = cloud.points[:, on_sphere1]
        b = cloud.points[:, on_sphere2]
        assert a.shape[1] > 200 and b.shape[1] > 200
        # camera 2 rides the sphere's motion, so both images sample the
        # same physical sphere points: cross-source NN distance ~ 0
        d = np.sqrt(np.sum((b[:, None, :] - a[:, :, None]) ** 2, axis=0))
        assert d.min(axis=0).max() < 1e-6

    def test_bad_time_tag(self):
        quad, _ = build_quad(random_scene(9, width=16, height=12))
        with pytest.raises(ValueError):
            fuse_points(quad, "t3")
