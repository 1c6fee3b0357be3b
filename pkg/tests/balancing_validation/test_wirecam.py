# pylint: disable=import-outside-toplevel
"""
Wire-wrapped cams: tangency and wire length on a circular cam, profile synthesis round trips and per-leg cam design.
"""

import numpy as np
import pytest

CIRCLE_RADIUS = 0.06
LENGTH_STEP = 1e-4


@pytest.fixture(params=[1, 2, 3, 4])
def circle_geometry(request):
    from rrr_balance_study.wirecam import WireCamGeometry

    return WireCamGeometry(a=0.25, r=0.04, k=100.0, u_t=0.1, q0=0.0, case=request.param)


@pytest.mark.parametrize("theta", [0.0, 0.3, 1.1])
def test_circular_cam_is_a_capstan(circle_geometry, theta):
    """
    On a circle the wire unwinds at the cam radius: dL/dtheta and the moment arm both equal g0.
    """
    from rrr_balance_study.wirecam import CamProfile, wire_length, wire_tangency
    from rrr_balance_study.wirecam.profile import tangency_residual

    profile = CamProfile.circle(CIRCLE_RADIUS)
    tangency = wire_tangency(profile, theta, circle_geometry)
    assert tangency.moment_arm == pytest.approx(CIRCLE_RADIUS, rel=1e-9)
    assert abs(tangency_residual(profile, tangency.phi_tilde, theta, circle_geometry, circle_geometry.case)) <= 1e-10

    rate = (
        wire_length(profile, theta + LENGTH_STEP, circle_geometry)
        - wire_length(profile, theta - LENGTH_STEP, circle_geometry)
    ) / (2.0 * LENGTH_STEP)
    assert rate == pytest.approx(CIRCLE_RADIUS, rel=1e-6)


def test_wire_span_touches_the_idler(circle_geometry):
    from rrr_balance_study.wirecam import CamProfile, wire_tangency

    tangency = wire_tangency(CamProfile.circle(CIRCLE_RADIUS), 0.4, circle_geometry)
    spoke = tangency.idler_point - circle_geometry.d
    assert np.linalg.norm(spoke) == pytest.approx(circle_geometry.r)
    assert tangency.tangent @ spoke == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(
        tangency.contact + tangency.span * tangency.tangent, tangency.idler_point, atol=1e-12
    )


def test_forward_torque_at_the_reference_length(circle_geometry):
    from rrr_balance_study.wirecam import CamProfile, cam_torque_forward, wire_length

    profile = CamProfile.circle(CIRCLE_RADIUS)
    l_ref = wire_length(profile, 0.2, circle_geometry)
    torque = cam_torque_forward(profile, 0.2, circle_geometry, l_ref)
    assert torque == pytest.approx(circle_geometry.k * circle_geometry.u_t * CIRCLE_RADIUS, rel=1e-9)
    # one more radian of winding stretches the spring by g0
    torque = cam_torque_forward(profile, 1.2, circle_geometry, l_ref)
    assert torque == pytest.approx(
        circle_geometry.k * (circle_geometry.u_t + CIRCLE_RADIUS) * CIRCLE_RADIUS, rel=1e-6
    )


def test_slack_wire_is_reported(wire_geometry):
    from rrr_balance_study.utils import SlackWire
    from rrr_balance_study.wirecam import CamProfile, cam_torque_forward, wire_length

    profile = CamProfile.circle(CIRCLE_RADIUS)
    l_ref = wire_length(profile, 0.0, wire_geometry) + wire_geometry.u_t + 0.01
    with pytest.raises(SlackWire):
        cam_torque_forward(profile, 0.0, wire_geometry, l_ref)


def test_cam_too_large_for_the_idler_has_no_tangent(wire_geometry):
    from rrr_balance_study.utils import NoTangent
    from rrr_balance_study.wirecam import CamProfile, wire_tangency

    with pytest.raises(NoTangent):
        wire_tangency(CamProfile.circle(0.3), 0.0, wire_geometry)


def test_profile_validation():
    from rrr_balance_study.utils import RangeExceeded
    from rrr_balance_study.wirecam import CamProfile

    with pytest.raises(ValueError):
        CamProfile(phis=np.array([0.0, 0.2, 0.1, 0.3]), radii=np.full(4, 0.05))
    with pytest.raises(ValueError):
        CamProfile(phis=np.linspace(0.0, 3.0, 10), radii=np.full(10, 0.05), closed=True)
    with pytest.raises(ValueError):
        CamProfile(phis=np.linspace(0.0, 1.0, 10), radii=np.linspace(-0.01, 0.05, 10))

    profile = CamProfile(phis=np.linspace(0.0, 1.0, 10), radii=np.linspace(0.04, 0.05, 10))
    assert profile.g(0.5) == pytest.approx(0.045)
    assert profile.dg(0.5) == pytest.approx(0.01)
    with pytest.raises(RangeExceeded):
        profile.g(1.5)
    assert CamProfile.circle(0.05).g(7.0) == pytest.approx(0.05)


def test_synthesized_cam_reproduces_a_constant_torque(wire_geometry):
    from numpy.polynomial import Polynomial

    from rrr_balance_study.wirecam import cam_torque_forward
    from rrr_balance_study.wirecam.synthesis import synthesize

    result = synthesize(Polynomial([1.0]), (0.5, 1.5), wire_geometry)
    assert result.rms_error <= 0.005
    np.testing.assert_allclose(result.forward, 1.0, rtol=0.02)
    assert cam_torque_forward(result.profile, 1.0, wire_geometry, result.l_ref) == pytest.approx(1.0, rel=0.02)
    # the moment arm shrinks as the spring stretches, so the profile radius falls along the winding
    assert result.profile.radii[0] > result.profile.radii[-1]


def test_synthesis_rejects_impossible_torques(wire_geometry):
    from numpy.polynomial import Polynomial

    from rrr_balance_study.utils import GeometryInfeasible, InfeasibleTorque
    from rrr_balance_study.wirecam import synthesize_cam_profile

    with pytest.raises(InfeasibleTorque):
        synthesize_cam_profile(Polynomial([-10.0]), (0.5, 1.5), wire_geometry)
    with pytest.raises(GeometryInfeasible):
        synthesize_cam_profile(Polynomial([-0.1]), (0.5, 0.6), wire_geometry)
    with pytest.raises(GeometryInfeasible):
        synthesize_cam_profile(Polynomial([20.0]), (0.5, 1.5), wire_geometry)


def test_spring_rate_sizing_centers_the_moment_arms(wire_geometry):
    from numpy.polynomial import Polynomial

    from rrr_balance_study.wirecam import size_spring_constant

    desired = Polynomial([1.0])
    thetas = np.linspace(0.5, 1.5, 101)

    def arms(k):
        return 1.0 / (k * np.sqrt(wire_geometry.u_t**2 + 2.0 * (thetas - 0.5) / k))

    arm = arms(size_spring_constant(desired, (0.5, 1.5), wire_geometry, target_arm=0.045))
    assert 0.5 * (arm.max() + arm.min()) == pytest.approx(0.045, rel=1e-9)

    # the default centers them between zero and a + r, where every wire line of case 1 reaches the idler
    arm = arms(size_spring_constant(desired, (0.5, 1.5), wire_geometry))
    assert 0.5 * (arm.max() + arm.min()) == pytest.approx(0.145, rel=1e-9)
    assert np.all((arm > 0.0) & (arm < wire_geometry.a + wire_geometry.r))


@pytest.mark.parametrize("u_t", [0.0, 0.2])
def test_inverting_a_circular_cam_gives_a_constant_radius(u_t):
    """
    A circle of radius g0 turned from the reference rotation stretches the spring by g0 per radian, so its torque is
    k (u_t + g0 s) g0. Inverting that torque has to give the circle back, also for a spring that starts unstretched.
    """
    from numpy.polynomial import Polynomial

    from rrr_balance_study.wirecam import WireCamGeometry, synthesize_cam_profile

    geom = WireCamGeometry(a=0.25, r=0.04, k=100.0, u_t=u_t, q0=0.0)
    desired = Polynomial([geom.k * (u_t - CIRCLE_RADIUS * 0.5) * CIRCLE_RADIUS, geom.k * CIRCLE_RADIUS**2])
    profile = synthesize_cam_profile(desired, (0.5, 1.5), geom)
    np.testing.assert_allclose(profile.radii, CIRCLE_RADIUS, rtol=1e-6)
    # the padding past each end of the range survives
    assert profile.domain[1] - profile.domain[0] > 1.0


def test_tangency_root_matches_a_dense_scan(wire_geometry):
    from numpy.polynomial import Polynomial

    from rrr_balance_study.wirecam import synthesize_cam_profile, wire_tangency
    from rrr_balance_study.wirecam.profile import tangency_residual

    profile = synthesize_cam_profile(Polynomial([1.0]), (0.5, 1.5), wire_geometry)
    for theta in (0.5, 0.9, 1.5):
        root = wire_tangency(profile, theta, wire_geometry).phi_tilde
        lo, hi = max(root - 0.2, profile.domain[0]), min(root + 0.2, profile.domain[1])
        grid = np.linspace(lo, hi, 200001)
        values = tangency_residual(profile, grid, theta, wire_geometry, wire_geometry.case)
        (crossings,) = np.nonzero(values[:-1] * values[1:] < 0.0)
        assert len(crossings) == 1
        j = crossings[0]
        scanned = grid[j] - values[j] * (grid[j + 1] - grid[j]) / (values[j + 1] - values[j])
        assert root == pytest.approx(scanned, abs=1e-8)


def test_quadrature_warnings_are_logged_not_raised(wire_geometry, monkeypatch, caplog):
    import logging
    import warnings

    from scipy import integrate

    from rrr_balance_study.utils import QuadratureFailure
    from rrr_balance_study.wirecam import CamProfile, wire_length

    quad = integrate.quad
    profile = CamProfile.circle(CIRCLE_RADIUS)
    expected = wire_length(profile, 0.3, wire_geometry)

    def noisy_quad(*args, **kwargs):
        warnings.warn("roundoff error is detected", integrate.IntegrationWarning)
        return quad(*args, **kwargs)

    monkeypatch.setattr(integrate, "quad", noisy_quad)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        with caplog.at_level(logging.DEBUG, logger="rrr_balance_study.wirecam.profile"):
            assert wire_length(profile, 0.3, wire_geometry) == pytest.approx(expected, rel=1e-12)
    assert "roundoff error is detected" in caplog.text

    def failing_quad(*args, **kwargs):
        warnings.warn("maximum number of subdivisions reached", integrate.IntegrationWarning)
        return 0.0, 1e-3

    monkeypatch.setattr(integrate, "quad", failing_quad)
    with pytest.raises(QuadratureFailure) as exc_info:
        wire_length(profile, 0.3, wire_geometry)
    assert exc_info.value.details["warnings"] == ["maximum number of subdivisions reached"]


def test_modal_fit_recovers_a_polynomial():
    from rrr_balance_study.utils import RankDeficient
    from rrr_balance_study.wirecam import desired_cam_torque, fit_modal_torque

    alphas = np.linspace(0.2, 1.4, 50)
    coeffs = np.array([0.3, -1.2, 0.8, 0.05, -0.02])
    fit = fit_modal_torque(alphas, np.polynomial.polynomial.polyval(alphas, coeffs), order=4)
    np.testing.assert_allclose(fit.coeffs, coeffs, atol=1e-9)
    assert fit.order == 4
    np.testing.assert_allclose(desired_cam_torque(fit)(alphas), -fit(alphas))

    noisy = np.sin(3.0 * alphas) + 0.1 * np.cos(17.0 * alphas)
    vander = np.vander(alphas, 5, increasing=True)
    normal = np.linalg.solve(vander.T @ vander, vander.T @ noisy)
    np.testing.assert_allclose(fit_modal_torque(alphas, noisy, order=4).coeffs, normal, rtol=1e-6, atol=1e-8)

    with pytest.raises(RankDeficient):
        fit_modal_torque(np.array([0.1, 0.2, 0.3]), np.zeros(3), order=4)


def test_cam_angle_wraps_the_joint_offset():
    from rrr_balance_study.wirecam import cam_angle

    assert cam_angle(0.3, 0.0) == pytest.approx(np.pi / 2 - 0.3)
    assert cam_angle(2.0 * np.pi + 0.3, 0.0) == pytest.approx(np.pi / 2 - 0.3)
    np.testing.assert_allclose(cam_angle(np.array([1.0, 1.5]), 1.0), [np.pi / 2, np.pi / 2 - 0.5])


def test_designed_cam_cancels_a_constant_load(wire_geometry):
    """
    A constant -1 N m load needs a cam mounted against the cam angle that adds +1 N m at the joint.
    """
    from rrr_balance_study.utils import RangeExceeded
    from rrr_balance_study.wirecam import cam_joint_torque, design_cam

    alphas = np.linspace(0.5, 1.5, 60)
    design = design_cam(0, alphas, -np.ones_like(alphas), wire_geometry)

    assert design.mount_sign == -1
    assert design.theta_range == pytest.approx((-1.5, -0.5))
    np.testing.assert_allclose(cam_joint_torque(design, alphas), 1.0, rtol=0.02)
    np.testing.assert_allclose(cam_joint_torque(design, alphas, ideal=True), 1.0, rtol=1e-9)

    with pytest.raises(RangeExceeded) as exc_info:
        cam_joint_torque(design, np.array([1.0, 2.0]))
    assert exc_info.value.details["path_index"] == 1
    assert np.isnan(cam_joint_torque(design, np.array([1.0, 2.0]), strict=False)[1])


def test_legs_with_a_sign_changing_load_get_no_cam(wire_geometry):
    from rrr_balance_study.utils import GeometryInfeasible
    from rrr_balance_study.wirecam import design_cam, design_cams

    alphas = np.tile(np.linspace(0.5, 1.5, 40)[:, None], (1, 3))
    torques = -np.ones_like(alphas)
    torques[:, 0] = alphas[:, 0] - 1.0
    with pytest.raises(GeometryInfeasible):
        design_cam(0, alphas[:, 0], torques[:, 0], wire_geometry)

    designs = design_cams(alphas, torques, [wire_geometry] * 3, threads=3)
    assert designs[0] is None
    assert [design.leg for design in designs[1:]] == [1, 2]


def test_design_moves_to_a_wire_case_that_exists(wire_geometry):
    """
    With a soft spring the crossed wire of case 3 cannot reach the idler at the start of the range; the open wire of
    case 1 can, so the design falls back to it.
    """
    from numpy.polynomial import Polynomial

    from rrr_balance_study.utils import GeometryInfeasible
    from rrr_balance_study.wirecam import WireCase, cam_joint_torque, design_cam
    from rrr_balance_study.wirecam.synthesis import synthesize

    geom = wire_geometry.model_copy(update={"k": 4.0, "u_t": 1.0, "case": WireCase.CASE_3})
    with pytest.raises(GeometryInfeasible):
        synthesize(Polynomial([1.0]), (-1.5, -0.5), geom)

    alphas = np.linspace(0.5, 1.5, 60)
    design = design_cam(0, alphas, -np.ones_like(alphas), geom)
    assert design.geom.case == WireCase.CASE_1
    assert design.geom.k == 4.0
    assert design.mount_sign == -1
    np.testing.assert_allclose(cam_joint_torque(design, alphas), 1.0, rtol=0.02)


def test_auto_sized_cam_with_the_wl_constants():
    from rrr_balance_study.wirecam import WireCamGeometry, cam_joint_torque, design_cam

    geom = WireCamGeometry(a=0.25, r=0.04, k=1.0, u_t=0.05, q0=0.0)
    alphas = np.linspace(0.5, 1.5, 60)
    design = design_cam(0, alphas, -(0.8 + 0.2 * alphas), geom, auto_k=True)

    assert design.rms_error <= 0.005
    assert design.geom.k > geom.k
    np.testing.assert_allclose(cam_joint_torque(design, alphas), 0.8 + 0.2 * alphas, rtol=0.02)
