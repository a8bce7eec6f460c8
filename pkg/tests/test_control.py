import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from huauv.control import (
    AIR_MIX,
    DT,
    MEM_SIZE,
    PID,
    WATER_MIX,
    ControlError,
    ControlInput,
    ControllerMemory,
    GainSet,
    ReferenceCommand,
    Rollout,
    aerial_altitude_law,
    aerial_attitude_law,
    aerial_mix,
    aerial_position_law,
    closed_loop_step,
    control_kernel,
    underwater_attitude_law,
    underwater_depth_law,
    underwater_mix,
    underwater_surge_law,
)
from huauv.dynamics import Medium, VehicleState
from huauv.params import VehicleModel, air_params, water_params

AIR = air_params()
WATER = water_params()
MODEL = VehicleModel()
HOVER = math.sqrt(AIR.m * 9.78 / (4 * AIR.rho * AIR.zeta))
ZERO = GainSet(
    altitude=PID(0, 0, 0), attitude=PID(0, 0, 0), position=PID(0, 0, 0), depth=PID(0, 0, 0),
    water_attitude=PID(0, 0, 0), surge_v=0.0, surge_alpha=0.0,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def at(z=5.0, euler=(0.0, 0.0, 0.0), x=0.0, y=0.0):
    return VehicleState(np.array([x, y, z]), np.array(euler, float), np.zeros(3), np.zeros(3))


def with_gains(**kw):
    return GainSet(**{**ZERO.__dict__, **kw})


# -- mixing ----------------------------------------------------------------------


def test_aerial_mix_examples():
    np.testing.assert_array_equal(aerial_mix(ControlInput(Medium.AIR, 1, 0, 0, 0)), [1, 1, 1, 1])
    np.testing.assert_array_equal(aerial_mix(ControlInput(Medium.AIR, 0, 1, 0, 0), clamp=False), [0, 1, 0, -1])
    np.testing.assert_array_equal(aerial_mix(ControlInput(Medium.AIR, 0, 1, 0, 0)), [0, 1, 0, 0])
    np.testing.assert_array_equal(aerial_mix(ControlInput(Medium.AIR, 0, 0, 0, 1), clamp=False), [1, -1, 1, -1])


def test_underwater_mix_examples():
    np.testing.assert_array_equal(underwater_mix(ControlInput(Medium.WATER, 1, 0, 0, 0)), [1, 0, 1, 0])
    np.testing.assert_array_equal(underwater_mix(ControlInput(Medium.WATER, 0, 1, 0, 0)), [0, 1, 0, 1])
    np.testing.assert_array_equal(underwater_mix(ControlInput(Medium.WATER, 0, 0, 0, 0)), [0, 0, 0, 0])
    # reversible thrusters keep negative speeds
    np.testing.assert_array_equal(underwater_mix(ControlInput(Medium.WATER, 0, 0, 0, 5)), [0, 5, 0, -5])


def test_mix_rejects_wrong_mode():
    with pytest.raises(ControlError):
        aerial_mix(ControlInput(Medium.WATER, 1, 0, 0, 0))
    with pytest.raises(ControlError):
        underwater_mix(ControlInput(Medium.AIR, 1, 0, 0, 0))


def test_mix_saturates():
    assert aerial_mix(ControlInput(Medium.AIR, 2e4, 0, 0, 0)).max() == 10000.0
    assert underwater_mix(ControlInput(Medium.WATER, -2e4, 0, 0, 0)).min() == -10000.0


@given(st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=4, max_size=4), finite, finite)
def test_mixing_is_linear(u1, u2, a, b):
    for mode, fn in ((Medium.AIR, aerial_mix), (Medium.WATER, underwater_mix)):
        lhs = fn(ControlInput(mode, *(a * np.array(u1) + b * np.array(u2))), clamp=False)
        rhs = a * fn(ControlInput(mode, *u1), clamp=False) + b * fn(ControlInput(mode, *u2), clamp=False)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-6)


def test_mix_matrices():
    assert AIR_MIX.shape == WATER_MIX.shape == (4, 4)
    np.testing.assert_array_equal(AIR_MIX[:, 0], 1.0)


# -- aerial laws ---------------------------------------------------------------


def test_altitude_law_zero_error_gives_hover_bias():
    u = aerial_altitude_law(at(5.0), ReferenceCommand(0, 0, 5.0), GainSet())
    assert u == pytest.approx(HOVER, rel=1e-12)
    assert u == pytest.approx(3151, abs=1)


def test_altitude_law_unit_proportional():
    g = with_gains(altitude=PID(1, 0, 0))
    assert aerial_altitude_law(at(5.0), ReferenceCommand(0, 0, 6.0), g) == pytest.approx(1 + HOVER, rel=1e-12)


def test_altitude_law_tilt_compensation():
    g = with_gains(altitude=PID(3, 0, 0))
    ref = ReferenceCommand(0, 0, 6.0)
    level = aerial_altitude_law(at(5.0), ref, g) - HOVER
    tilted = aerial_altitude_law(at(5.0, (0.0, math.radians(60), 0.0)), ref, g) - HOVER
    assert tilted == pytest.approx(2 * level, rel=1e-9)


def test_altitude_law_singular_attitude():
    with pytest.raises(ControlError):
        aerial_altitude_law(at(5.0, (0.0, math.pi / 2, 0.0)), ReferenceCommand(0, 0, 5), GainSet())


def test_attitude_law_examples():
    assert aerial_attitude_law(at(), (0.0, 0.0, 0.0), GainSet()) == (0.0, 0.0, 0.0)
    out = aerial_attitude_law(at(), (0.0, 0.0, 2 * math.pi), GainSet())
    assert out[2] == pytest.approx(0.0, abs=1e-9)
    g = with_gains(attitude=PID(2, 0, 0))
    assert aerial_attitude_law(at(), (0.1, 0.0, 0.0), g)[0] == pytest.approx(0.2)


def test_position_law_examples():
    g = GainSet()
    assert aerial_position_law(at(), ReferenceCommand(0, 0, 5), g) == (0.0, 0.0)
    phi, theta = aerial_position_law(at(), ReferenceCommand(1, 0, 5), g)
    assert phi == 0.0 and abs(theta) > 0
    phi_q, theta_q = aerial_position_law(at(euler=(0, 0, math.pi / 2)), ReferenceCommand(1, 0, 5), g)
    assert abs(phi_q) == pytest.approx(abs(theta), rel=1e-12)
    assert theta_q == pytest.approx(0.0, abs=1e-12)


def test_position_law_clamps_tilt():
    phi, theta = aerial_position_law(at(), ReferenceCommand(100, -100, 5), GainSet())
    assert abs(phi) == abs(theta) == pytest.approx(0.35)


def test_position_law_sign_closes_the_loop():
    # a forward error must shrink over a one-second closed-loop rollout
    for yaw in (0.0, math.pi / 2, -2.0):
        for target in ((1.0, 0.0), (0.0, -1.0)):
            x = at(5.0, (0, 0, yaw))
            mem = None
            for _ in range(100):
                x, mem = closed_loop_step(x, ReferenceCommand(*target, 5.0, yaw), GainSet(), mem)
            assert np.linalg.norm(x.p[:2] - target) < 0.8


# -- underwater laws -------------------------------------------------------------


def test_depth_law_bias():
    u = underwater_depth_law(at(-2.0), ReferenceCommand(0, 0, -2.0), GainSet())
    assert u == pytest.approx(-972.7, abs=0.1)
    net = (WATER.rho * WATER.V - WATER.m) * 9.78
    assert 2 * WATER.rho * WATER.zeta * u * u == pytest.approx(net, rel=1e-12)
    g = with_gains(depth=PID(1, 0, 0))
    assert underwater_depth_law(at(-2.0), ReferenceCommand(0, 0, -1.0), g) == pytest.approx(1 + u, rel=1e-12)


def test_depth_law_singular_attitude():
    with pytest.raises(ControlError):
        underwater_depth_law(at(-2.0, (math.pi / 2, 0, 0)), ReferenceCommand(0, 0, -2), GainSet())


def test_underwater_attitude_examples():
    assert underwater_attitude_law(at(-2.0), (0.0, 0.0), GainSet()) == (0.0, 0.0)
    g = with_gains(water_attitude=PID(2, 0, 0))
    assert underwater_attitude_law(at(-2.0), (0.5, 0.0), g)[0] == pytest.approx(1.0)
    assert underwater_attitude_law(at(-2.0), (0.0, 2 * math.pi), GainSet())[1] == pytest.approx(0.0, abs=1e-9)


def test_surge_law_examples():
    g = with_gains(surge_v=1.0, surge_alpha=0.0)
    assert underwater_surge_law(at(-2.0), ReferenceCommand(2, 0, -2), g) == pytest.approx(2.0)
    g = with_gains(surge_v=1.0, surge_alpha=3.0)
    # at the target point only the heading term remains
    assert underwater_surge_law(at(-2.0), ReferenceCommand(0, 0, -2, 0.5), g) == pytest.approx(3.0 * 0.25)


@given(st.floats(-3.0, 3.0, allow_nan=False))
def test_surge_law_even_in_heading_error(e):
    g = GainSet()
    a = underwater_surge_law(at(-2.0), ReferenceCommand(0, 0, -2, e), g)
    b = underwater_surge_law(at(-2.0), ReferenceCommand(0, 0, -2, -e), g)
    assert a == pytest.approx(b, rel=1e-12)


# -- fixed points and invariances ------------------------------------------------


def _kernel(x, ref, mem=None):
    mem = np.zeros(MEM_SIZE) if mem is None else mem
    return control_kernel(
        np.asarray(x, float), np.asarray(ref, float), mem, GainSet().pack(), AIR.pack(), WATER.pack(), DT, AIR_MIX,
        WATER_MIX,
    )


def test_zero_error_fixed_point():
    assert aerial_attitude_law(at(), (0, 0, 0), GainSet()) == (0.0, 0.0, 0.0)
    rotors, _, ok = _kernel(at(5.0).to_array(), [0, 0, 5.0, 0])
    assert ok
    np.testing.assert_allclose(rotors, HOVER, rtol=1e-12)
    rotors, _, ok = _kernel(at(-2.0).to_array(), [0, 0, -2.0, 0])
    bias = math.sqrt((WATER.rho * WATER.V - WATER.m) * 9.78 / (2 * WATER.rho * WATER.zeta))
    np.testing.assert_allclose(rotors, [-bias, 0, -bias, 0], rtol=1e-12)


@settings(max_examples=100)
@given(st.floats(-8, 8), st.floats(-8, 8), st.sampled_from([5.0, -2.0]), st.floats(-3, 3), st.floats(-3, 3))
def test_yaw_wrap_invariance(x, y, z, yaw, psi_ref):
    state = at(z, (0.05, -0.03, yaw)).to_array()
    a, ma, _ = _kernel(state, [x, y, z + 0.3, psi_ref])
    b, mb, _ = _kernel(state, [x, y, z + 0.3, psi_ref + 2 * math.pi])
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-6)


# -- closed loop -----------------------------------------------------------------


def test_hover_rollout_holds_pose():
    x, mem = at(5.0), None
    for _ in range(100):
        x, mem = closed_loop_step(x, ReferenceCommand(0, 0, 5.0), GainSet(), mem)
    assert np.linalg.norm(x.p - (0, 0, 5.0)) < 1e-3


def test_altitude_step_settles():
    refs = np.tile([0.0, 0.0, 4.0, 0.0], (1000, 1))
    states, _, _, ok = Rollout()(at(5.0).to_array(), np.zeros(MEM_SIZE), refs)
    assert ok
    z = states[:, 2]
    settled = np.abs(z - 4.0) <= 0.05
    # index from which the response stays within 5% of the step
    first = len(z) - np.argmin(settled[::-1]) if not settled.all() else 0
    assert settled[-1] and first * DT < 10.0


def test_medium_switch_resets_integrators():
    air_mem = ControllerMemory(np.full(4, 40.0), np.zeros(6), mode=1)
    _, mem = closed_loop_step(at(-2.0), ReferenceCommand(0, 0, -2.5), GainSet(), air_mem)
    assert mem.mode == -1
    assert mem.integral[0] == pytest.approx(-0.5 * DT)
    assert mem.integral[1] == 0.0 and mem.integral[2] == 0.0
    assert abs(mem.integral[3]) < 1e-12


def test_closed_loop_step_matches_rollout_bitwise():
    x0 = at(0.9, (0.01, -0.02, 0.3))
    refs = np.array([[1.0, 0.5, -2.0, 0.2]] * 150)
    states, _, _, ok = Rollout()(x0.to_array(), np.zeros(MEM_SIZE), refs)
    assert ok
    x, mem = x0, None
    for k in range(150):
        x, mem = closed_loop_step(x, ReferenceCommand(*refs[k]), GainSet(), mem)
        assert x.to_array().tobytes() == states[k + 1].tobytes()


def test_closed_loop_rejects_bad_dt():
    with pytest.raises(ValueError):
        closed_loop_step(at(), ReferenceCommand(0, 0, 5), GainSet(), None, dt=0.0)


def test_gains_must_be_non_negative():
    with pytest.raises(ValueError):
        GainSet(altitude=PID(-1, 0, 0))
    with pytest.raises(ValueError):
        GainSet(surge_v=-1.0)


def test_water_station_keeping():
    refs = np.tile([1.0, -1.0, -2.5, 0.7], (1500, 1))
    states, _, _, ok = Rollout()(at(-2.0).to_array(), np.zeros(MEM_SIZE), refs)
    assert ok
    # no sideways thrust: inside the bearing radius only the along-heading error is corrected
    assert np.linalg.norm(states[-1, :2] - refs[0, :2]) < GainSet().bearing_radius
    assert abs(states[-1, 2] - refs[0, 2]) < 0.02
