import math

import numpy as np
import pytest

from armteleop.config import ConfigError
from armteleop.geometry import Pose, quat_normalize
from armteleop.motion import (
    BoxMode,
    ClutchState,
    Fence,
    FilterState,
    FrameMapping,
    apply_fences,
    clutch_target,
    filter_step,
    rate_limit,
    validate_fences,
)


def engaged_clutch(origin_operator=None, origin_robot=None):
    c = ClutchState()
    c.engage(origin_operator or Pose.identity(), origin_robot or Pose.identity())
    return c


class TestClutchTarget:
    def test_zero_delta_returns_robot_origin(self):
        origin_op = Pose.from_axis_angle([0, 0, 1], 0.3, position=(0.5, 0.1, 0.2))
        origin_rb = Pose.from_axis_angle([1, 0, 0], -0.2, position=(0.4, -0.3, 0.5))
        c = engaged_clutch(origin_op, origin_rb)
        out = clutch_target(c, FrameMapping(), origin_op)
        assert out.approx_equal(origin_rb, pos_tol=1e-12, rot_tol=1e-12)

    def test_identity_mapping_translates_through(self):
        c = engaged_clutch()
        moved = Pose.from_translation(0.1, 0, 0)
        out = clutch_target(c, FrameMapping(), moved)
        assert np.allclose(out.position, [0.1, 0, 0], atol=1e-12)

    def test_rotated_mapping_remaps_axes(self):
        # operator +x becomes robot +y under a 90 deg z mapping rotation
        c = engaged_clutch()
        mapping = FrameMapping(rotation=Pose.from_axis_angle([0, 0, 1], math.pi / 2).orientation)
        out = clutch_target(c, mapping, Pose.from_translation(0.1, 0, 0))
        assert np.allclose(out.position, [0, 0.1, 0], atol=1e-12)

    def test_matches_matrix_conjugation_oracle(self, rng):
        # oracle: T_out = T_origin_robot @ (M @ T_delta @ M^-1) with M the
        # pure-rotation mapping as a homogeneous matrix (scale 1)
        for _ in range(100):
            origin_op = Pose(rng.uniform(-1, 1, 3), quat_normalize(rng.normal(size=4)))
            origin_rb = Pose(rng.uniform(-1, 1, 3), quat_normalize(rng.normal(size=4)))
            op_pose = Pose(rng.uniform(-1, 1, 3), quat_normalize(rng.normal(size=4)))
            rot = quat_normalize(rng.normal(size=4))
            c = engaged_clutch(origin_op, origin_rb)
            out = clutch_target(c, FrameMapping(rotation=rot), op_pose)

            M = np.eye(4)
            M[:3, :3] = Pose(np.zeros(3), rot).to_matrix()[:3, :3]
            T_delta = np.linalg.inv(origin_op.to_matrix()) @ op_pose.to_matrix()
            T_out = origin_rb.to_matrix() @ (M @ T_delta @ np.linalg.inv(M))
            assert np.allclose(out.to_matrix(), T_out, atol=1e-9)

    def test_translation_scale(self):
        c = engaged_clutch()
        mapping = FrameMapping(translation_scale=2.0)
        out = clutch_target(c, mapping, Pose.from_translation(0.05, 0, 0))
        assert np.allclose(out.position, [0.1, 0, 0], atol=1e-12)

    def test_disengaged_is_contract_violation(self):
        with pytest.raises(RuntimeError):
            clutch_target(ClutchState(), FrameMapping(), Pose.identity())

    def test_engage_release_cycle(self):
        c = ClutchState()
        c.engage(Pose.identity(), Pose.from_translation(1, 0, 0))
        assert c.engaged and c.origin_robot is not None
        c.release()
        assert not c.engaged and c.origin_robot is None

    def test_bad_mapping_rejected(self):
        with pytest.raises(ValueError):
            FrameMapping(translation_scale=0.0)
        with pytest.raises(ValueError):
            FrameMapping(translation_scale=float("inf"))


class TestFilterStep:
    def test_alpha_one_is_passthrough(self):
        st = FilterState(alpha_pos=1.0, alpha_rot=1.0)
        filter_step(st, Pose.identity())
        p = Pose.from_axis_angle([0, 1, 0], 0.8, position=(1, 2, 3))
        assert filter_step(st, p).approx_equal(p, pos_tol=1e-12, rot_tol=1e-12)

    def test_first_call_seeds_and_passes_through(self):
        st = FilterState(alpha_pos=0.2, alpha_rot=0.2)
        p = Pose.from_translation(0.5, 0, 0)
        out = filter_step(st, p)
        assert out.approx_equal(p, pos_tol=1e-12, rot_tol=1e-12)
        assert st.last is not None

    def test_ema_arithmetic(self):
        st = FilterState(alpha_pos=0.2, alpha_rot=0.2)
        filter_step(st, Pose.identity())
        out = filter_step(st, Pose.from_translation(1, 0, 0))
        assert np.allclose(out.position, [0.2, 0, 0], atol=1e-12)

    def test_constant_stream_converges_then_exact(self):
        st = FilterState(alpha_pos=0.3, alpha_rot=0.3)
        target = Pose.from_axis_angle([0, 0, 1], 1.0, position=(0.3, -0.2, 0.4))
        filter_step(st, Pose.identity())
        out = None
        for _ in range(200):
            out = filter_step(st, target)
        assert out.approx_equal(target, pos_tol=1e-9, rot_tol=1e-9)
        # once at the fixed point, it stays exactly
        settled = filter_step(st, st.last.copy())
        assert np.array_equal(settled.position, st.last.position)

    def test_never_overshoots(self, rng):
        st = FilterState(alpha_pos=0.4, alpha_rot=0.4)
        last = Pose(rng.uniform(-1, 1, 3))
        filter_step(st, last)
        for _ in range(200):
            target = Pose(rng.uniform(-1, 1, 3))
            prev = st.last.position.copy()
            out = filter_step(st, target)
            seg = target.position - prev
            t = float(seg @ (out.position - prev)) / max(float(seg @ seg), 1e-30)
            assert -1e-12 <= t <= 1.0 + 1e-12
            off_seg = out.position - (prev + t * seg)
            assert np.linalg.norm(off_seg) < 1e-12

    def test_reset_reseeds(self):
        st = FilterState()
        filter_step(st, Pose.from_translation(1, 1, 1))
        st.reset()
        p = Pose.from_translation(-1, 0, 0)
        assert filter_step(st, p).approx_equal(p, pos_tol=1e-12, rot_tol=1e-12)

    def test_alpha_range_enforced(self):
        with pytest.raises(ValueError):
            FilterState(alpha_pos=0.0)
        with pytest.raises(ValueError):
            FilterState(alpha_rot=1.5)


def bench_fences(margin=0.0):
    return [
        Fence(name="workspace", box_min=[-1, -1, 0], box_max=[1, 1, 1], mode=BoxMode.KEEP_IN, margin=margin),
        Fence(name="tester-body", box_min=[0.2, -0.3, 0], box_max=[0.6, 0.3, 0.4], mode=BoxMode.KEEP_OUT, margin=margin),
    ]


def admissible(fences, p, eps=1e-12):
    return all(f.violation(p) <= eps for f in fences)


class TestApplyFences:
    def test_inside_everything_untouched(self):
        fences = bench_fences()
        target = Pose.from_translation(-0.5, 0.5, 0.5)
        out, clamped, lock = apply_fences(fences, target, Pose.identity())
        assert out is target
        assert not clamped and not lock

    def test_half_space_projection(self):
        fence = Fence(name="floor", normal=[0, 0, 1], offset=0.1)
        target = Pose.from_translation(0.3, -0.2, 0.05)
        out, clamped, _ = apply_fences([fence], target, Pose.identity())
        assert clamped
        assert np.allclose(out.position, [0.3, -0.2, 0.1], atol=1e-12)

    def test_keep_out_pushes_to_nearest_face(self):
        fences = bench_fences()
        target = Pose.from_translation(0.25, 0.0, 0.2)  # just inside the -x face
        out, clamped, _ = apply_fences(fences, target, Pose.identity())
        assert clamped
        assert out.position[0] == pytest.approx(0.2, abs=1e-12)

    def test_random_targets_projected_admissibly(self, rng):
        # brute-force oracle: output admissible; along the correction
        # direction nothing admissible comes strictly earlier
        fences = bench_fences()
        for _ in range(10_000):
            raw = rng.uniform(-1.5, 1.5, 3)
            target = Pose(raw)
            out, clamped, _ = apply_fences(fences, target, Pose.identity())
            assert admissible(fences, out.position)
            if clamped:
                direction = out.position - raw
                for t in np.linspace(0.02, 0.98, 25):
                    p_t = raw + t * direction
                    assert not admissible(fences, p_t, eps=-1e-9)

    def test_idempotent_exactly(self, rng):
        fences = bench_fences()
        for _ in range(2_000):
            target = Pose(rng.uniform(-1.5, 1.5, 3))
            once, _, _ = apply_fences(fences, target, Pose.identity())
            twice, clamped2, _ = apply_fences(fences, once, Pose.identity())
            assert not clamped2
            assert np.array_equal(once.position, twice.position)

    def test_margin_shrinks_admissible_region(self):
        fences = [Fence(name="floor", normal=[0, 0, 1], offset=0.1, margin=0.002)]
        out, clamped, _ = apply_fences(fences, Pose.from_translation(0, 0, 0.1005), Pose.identity())
        assert clamped
        assert out.position[2] == pytest.approx(0.102, abs=1e-12)

    def test_lock_orientation_engages_while_pressing(self):
        fence = Fence(name="guide", normal=[0, 0, 1], offset=0.1, lock_orientation=True)
        current = Pose.from_axis_angle([1, 0, 0], 0.5)
        pressing = Pose.from_axis_angle([0, 1, 0], 1.0, position=(0, 0, 0.05))
        out, clamped, lock = apply_fences([fence], pressing, current)
        assert clamped and lock
        assert np.allclose(out.orientation, current.orientation)
        clear = Pose.from_axis_angle([0, 1, 0], 1.0, position=(0, 0, 0.5))
        out2, clamped2, lock2 = apply_fences([fence], clear, current)
        assert not clamped2 and not lock2
        assert np.allclose(out2.orientation, clear.orientation)

    def test_contradictory_config_rejected_at_load(self):
        impossible = [
            Fence(name="above", normal=[0, 0, 1], offset=1.0),
            Fence(name="below", normal=[0, 0, -1], offset=0.0),  # z <= 0 and z >= 1
        ]
        with pytest.raises(ConfigError):
            validate_fences(impossible)
        validate_fences(bench_fences())  # sane config loads fine

    def test_bad_fence_definitions_rejected(self):
        with pytest.raises(ConfigError):
            Fence(name="both", normal=[0, 0, 1], box_min=[0, 0, 0], box_max=[1, 1, 1])
        with pytest.raises(ConfigError):
            Fence(name="non-unit", normal=[0, 0, 2], offset=0.0)
        with pytest.raises(ConfigError):
            Fence(name="inverted", box_min=[1, 0, 0], box_max=[0, 1, 1])


class TestRateLimit:
    def test_exact_step_when_beyond_cap(self):
        prev = np.zeros(6)
        target = np.full(6, math.radians(10.0))
        out = rate_limit(prev, target, dt=0.05, cap=math.radians(100.0))
        assert np.allclose(out, math.radians(5.0), atol=1e-15)

    def test_exact_arrival_within_cap(self):
        prev = np.zeros(6)
        target = np.full(6, math.radians(2.0))
        out = rate_limit(prev, target, dt=0.05, cap=math.radians(100.0))
        assert np.array_equal(out, target)

    def test_velocity_never_exceeds_cap(self, rng):
        cap = math.radians(100.0)
        dt = 0.004
        q = np.zeros(6)
        for _ in range(5_000):
            target = rng.uniform(-math.pi, math.pi, 6)
            out = rate_limit(q, target, dt, cap)
            assert np.max(np.abs(out - q)) / dt <= cap + 1e-9
            q = out

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            rate_limit(np.zeros(6), np.zeros(6), dt=0.0, cap=1.0)
        with pytest.raises(ValueError):
            rate_limit(np.zeros(5), np.zeros(6), dt=0.01, cap=1.0)
