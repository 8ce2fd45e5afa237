"""Control modules: estimators, bus aggregation, servo behavior."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from decsim.chain import (
    ChainConfig,
    ChainPose,
    ConfigurationError,
    LinkParams,
    com_of_subchain_oracle,
    inertia_of_subchain_oracle,
    joint_to_space,
)
from decsim.control import (
    DecModule,
    EstimatorFlags,
    EstimatorParams,
    ModuleError,
    ServoParams,
    SetPoint,
    aggregate_com,
    aggregate_inertia,
    build_network,
    dead_band,
    default_servo_params,
)
from decsim.sensors import SensorFrame

DT = 1e-3


def _random_chain(rng, n):
    links = []
    for _ in range(n):
        length = rng.uniform(0.2, 1.2)
        links.append(LinkParams(
            mass=rng.uniform(0.5, 20.0),
            length=length,
            com_distance=rng.uniform(0.05, 1.0) * length,
            inertia_about_com=rng.uniform(0.0, 2.0),
        ))
    return ChainConfig(links=tuple(links))


def _run_down_chain(config, space_angles):
    """Evaluate the COM/inertia recursion top-down, returning per-joint values."""
    results = []
    down = None
    for i in reversed(range(config.n_links)):
        link = config.links[i]
        com, mass = aggregate_com(down, link, space_angles[i])
        j_star, j_up = aggregate_inertia(down, link, space_angles[i], com, mass)
        results.append((com, mass, j_star, j_up))
        from decsim.control import DownMsg

        down = DownMsg(
            com_above=com, mass_above=mass, inertia_above=j_star,
            space_angle_down=0.0, space_velocity_down=0.0,
            self_acceleration=np.zeros(2), head_angular_acc=0.0,
        )
    return list(reversed(results))


class TestDeadBand:
    @given(st.floats(-10, 10), st.floats(0, 3))
    def test_odd(self, x, thr):
        assert dead_band(-x, thr) == pytest.approx(-dead_band(x, thr))

    @given(st.floats(-10, 10), st.floats(0, 3))
    def test_zero_iff_within_threshold(self, x, thr):
        out = dead_band(x, thr)
        if abs(x) <= thr:
            assert out == 0.0
        else:
            assert out != 0.0

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 3))
    def test_non_decreasing(self, a, b, thr):
        lo, hi = min(a, b), max(a, b)
        assert dead_band(lo, thr) <= dead_band(hi, thr) + 1e-15

    def test_continuous_at_threshold(self):
        thr = 0.5
        eps = 1e-9
        assert abs(dead_band(thr + eps, thr)) < 1e-8

    def test_rejects_negative_threshold(self):
        with pytest.raises(ConfigurationError):
            dead_band(1.0, -0.1)


class TestAggregationOracleEquivalence:
    def test_matches_brute_force_over_random_chains(self):
        rng = np.random.default_rng(11)
        for trial in range(1000):
            n = int(rng.integers(1, 7))
            config = _random_chain(rng, n)
            space = rng.uniform(-1.4, 1.4, n)
            pose = ChainPose(space)
            results = _run_down_chain(config, space)
            for joint in range(1, n + 1):
                com, mass, j_star, j_up = results[joint - 1]
                # both the recursion and the oracle are relative to this joint
                com_ref, mass_ref = com_of_subchain_oracle(config, pose, joint)
                assert np.allclose(com, com_ref, atol=1e-9)
                assert mass == pytest.approx(mass_ref, abs=1e-12)
                j_joint_ref, j_com_ref = inertia_of_subchain_oracle(
                    config, pose, joint)
                assert j_star == pytest.approx(j_com_ref, rel=1e-9, abs=1e-9)
                assert j_up == pytest.approx(j_joint_ref, rel=1e-9, abs=1e-9)


def _frame(n, head_angle=0.0, head_velocity=0.0, head_acc=(0.0, 0.0),
           joints=None, joint_velocities=None, torques=None):
    joints = np.zeros(n) if joints is None else np.asarray(joints, float)
    jvel = np.zeros(n) if joint_velocities is None else np.asarray(joint_velocities, float)
    torq = np.zeros(n) if torques is None else np.asarray(torques, float)
    return SensorFrame(
        head_space_angle=head_angle,
        head_space_velocity=head_velocity,
        head_linear_acceleration=np.asarray(head_acc, float),
        joint_angles=joints.copy(),
        joint_velocities=jvel.copy(),
        joint_torques=torq.copy(),
        active_torques=np.zeros(n),
        dec_joint_angles=joints.copy(),
        dec_joint_velocities=jvel.copy(),
    )


def _sip_config(mass=70.0, h=0.9):
    return ChainConfig(links=(LinkParams(
        mass=mass, length=1.7, com_distance=h, inertia_about_com=mass * 0.09),))


class TestDownChanneling:
    def test_head_minus_joint_sums_gives_base(self):
        # head at 5 deg with joints 2 and 3 deg chains down to base 0
        cfg = ChainConfig(links=(
            LinkParams(1, 0.5, 0.25, 0.01), LinkParams(1, 0.5, 0.25, 0.01)))
        net = build_network(cfg, default_servo_params(cfg))
        joints = np.radians([2.0, 3.0])
        frame = _frame(2, head_angle=math.radians(5.0), joints=joints)
        net.control_tick(frame, 0.0)
        assert net.modules[0].support_angle_raw == pytest.approx(0.0, abs=1e-12)

    def test_base_reconstruction_matches_platform_tilt(self):
        # channeling consistency: raw support angle equals true tilt to 1e-9
        rng = np.random.default_rng(5)
        for _ in range(20):
            n = int(rng.integers(1, 5))
            cfg = _random_chain(rng, n)
            net = build_network(cfg, default_servo_params(cfg))
            tilt = rng.uniform(-0.3, 0.3)
            joints = rng.uniform(-0.2, 0.2, n)
            space = joint_to_space(joints, tilt)
            frame = _frame(n, head_angle=float(space[-1]), joints=joints)
            try:
                net.control_tick(frame, 0.0)
            except ModuleError:
                continue  # degenerate random pose
            assert net.modules[0].support_angle_raw == pytest.approx(
                tilt, abs=1e-9)


class TestTiltEstimator:
    def test_dead_band_blocks_slow_drift(self):
        cfg = _sip_config()
        net = build_network(cfg, default_servo_params(cfg))
        slow = math.radians(0.1)  # below the 0.18 deg/s threshold
        for i in range(100):
            frame = _frame(1, head_angle=slow * i * DT, head_velocity=slow)
            net.control_tick(frame, i * DT)
        assert net.modules[0].tilt_estimate == 0.0

    def test_suprathreshold_velocity_integrates_with_gain(self):
        cfg = _sip_config()
        net = build_network(cfg, default_servo_params(cfg))
        v = math.radians(2.0)
        ticks = 500
        for i in range(ticks):
            frame = _frame(1, head_angle=v * i * DT, head_velocity=v)
            net.control_tick(frame, i * DT)
        p = EstimatorParams()
        expected = p.tilt_gain * (v - p.tilt_threshold) * ticks * DT
        assert net.modules[0].tilt_estimate == pytest.approx(expected, rel=1e-9)


class TestSipReduction:
    def test_gravity_estimate_matches_small_angle_form(self):
        # generalized COM-based torque vs mass*g*h*angle, within 0.1% at <= 4 deg
        cfg = _sip_config()
        link = cfg.links[0]
        m, g, h = link.mass, cfg.gravity, link.com_distance
        servo = default_servo_params(cfg)[0]
        for deg in (1.0, 2.0, 3.0, 4.0):
            a = math.radians(deg)
            mod = DecModule(1, link, servo, is_top=True, is_bottom=True,
                            gravity=g)
            frame = _frame(1, head_angle=a, joints=[a])
            mod.down_pass(frame, None)
            raw, _ = mod.estimate_gravity(a)
            small_angle = m * g * h * a
            assert raw == pytest.approx(small_angle, rel=1e-3)

    def test_acceleration_estimate_exact_at_upright(self):
        # at alpha = 0 the torque equals -m*h*a exactly
        cfg = _sip_config()
        link = cfg.links[0]
        servo = default_servo_params(cfg)[0]
        mod = DecModule(1, link, servo, is_top=True, is_bottom=True,
                        gravity=cfg.gravity)
        a_support = 0.7
        frame = _frame(1, head_acc=(a_support, 0.0))
        mod.down_pass(frame, None)
        raw, _ = mod.estimate_acceleration(frame)
        assert raw == pytest.approx(-link.mass * link.com_distance * a_support)


class TestServo:
    def test_zero_error_zero_torque(self):
        cfg = _sip_config()
        net = build_network(
            cfg, default_servo_params(cfg),
            flags=[EstimatorFlags(tilt=False, gravity=False)],
        )
        torques, _ = net.control_tick(_frame(1), 0.0)
        assert torques[0] == 0.0

    def test_default_kp_is_gravitational_load(self):
        cfg = _sip_config()
        servo = default_servo_params(cfg)[0]
        link = cfg.links[0]
        assert servo.kp == pytest.approx(link.mass * cfg.gravity * link.com_distance)
        assert servo.kd == pytest.approx(0.25 * servo.kp)
        assert servo.ki == pytest.approx(0.05 * servo.kp)

    def test_small_constant_error_gives_proportional_torque(self):
        cfg = _sip_config()
        eps = math.radians(0.5)
        net = build_network(
            cfg, default_servo_params(cfg),
            flags=[EstimatorFlags(tilt=False, gravity=False)],
            setpoints=[SetPoint(mode="above-com-space", value=lambda t: eps)],
        )
        torques, _ = net.control_tick(_frame(1), 0.0)
        servo = default_servo_params(cfg)[0]
        # one tick of integral has already accumulated
        expected = 0.85 * (servo.kp + servo.ki * DT) * eps
        assert torques[0] == pytest.approx(expected, rel=1e-9)


class TestParamValidation:
    def test_ext_gain_must_be_below_one(self):
        with pytest.raises(ConfigurationError):
            EstimatorParams(ext_torque_gain=1.0)

    def test_shares_must_sum_to_one(self):
        with pytest.raises(ConfigurationError):
            ServoParams(kp=100.0, reflexive_share=0.9, passive_share=0.2)

    def test_unknown_setpoint_mode(self):
        with pytest.raises(ConfigurationError):
            SetPoint(mode="astral-projection")

    def test_negative_threshold_rejected(self):
        with pytest.raises(ConfigurationError):
            EstimatorParams(tilt_threshold=-0.1)

    def test_module_error_carries_index(self):
        # above-links COM below the joint makes angle equivalents undefined
        cfg = ChainConfig(links=(
            LinkParams(1.0, 0.5, 0.4, 0.01), LinkParams(1.0, 0.5, 0.4, 0.01)))
        net = build_network(cfg, default_servo_params(cfg))
        frame = _frame(2, head_angle=math.pi,
                       joints=[0.0, math.pi])  # top link points straight down
        with pytest.raises(ModuleError) as err:
            net.control_tick(frame, 0.0)
        assert err.value.index == 2
