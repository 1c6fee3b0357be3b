# pylint: disable=import-outside-toplevel
"""
Gravity, spring and wrench torques against the energies they come from.
"""

import numpy as np
import pytest

FD_STEP = 1e-6


def _directional_rates(poses, geom, direction):
    """q' and phi' along a unit pose direction, from the Jacobians."""
    from rrr_balance_study.kinematics import inverse_kinematics_batch, jacobians_batch

    q, phi = inverse_kinematics_batch(poses, geom)
    jac = jacobians_batch(poses, q, phi, geom)
    return q, phi, jac, jac.j_qx @ direction, jac.j_phix @ direction


def test_gravity_torque_is_the_energy_gradient(geometry, mass_model, make_poses):
    """
    Along any pose direction, tau_g . q' equals the rate of change of V_g.
    """
    from rrr_balance_study.kinematics import inverse_kinematics_batch
    from rrr_balance_study.statics import gravity_potential_batch, gravity_torque_batch

    poses = make_poses(geometry, 200, seed=5)
    direction = np.array([0.6, -0.3, 0.74])
    q, phi, jac, q_rate, _ = _directional_rates(poses, geometry, direction)
    tau_g = gravity_torque_batch(q, phi, jac, geometry, mass_model)

    energies = []
    for sign in (1.0, -1.0):
        shifted = poses + sign * FD_STEP * direction
        q_s, phi_s = inverse_kinematics_batch(shifted, geometry)
        energies.append(gravity_potential_batch(shifted, q_s, phi_s, geometry, mass_model))
    rate = (energies[0] - energies[1]) / (2.0 * FD_STEP)

    np.testing.assert_allclose(np.sum(tau_g * q_rate, axis=1), rate, rtol=1e-5, atol=1e-9)


def test_elastic_torque_is_the_energy_gradient(geometry, make_poses):
    from rrr_balance_study.kinematics import inverse_kinematics_batch
    from rrr_balance_study.statics import SpringSet, elastic_energy_batch, elastic_torque_batch

    poses = make_poses(geometry, 200, seed=9)
    direction = np.array([-0.2, 0.5, 0.84])
    q, phi, jac, q_rate, _ = _directional_rates(poses, geometry, direction)

    rates, predicted = [], []
    for index, row in enumerate(poses):
        # free angles near the configuration keep the deflections away from the +-pi wrap
        springs = SpringSet(
            k_q=(1.5, 0.7, 2.2),
            k_phi=(0.9, 1.1, 0.4),
            q_f=tuple(q[index] + np.array([0.3, -0.2, 0.1])),
            phi_f=tuple(phi[index] - np.array([0.25, 0.15, -0.3])),
        )
        tau_e = elastic_torque_batch(q[index], phi[index], springs, jac.j_phiq[index][None])[0]
        predicted.append(tau_e @ q_rate[index])
        energy = []
        for sign in (1.0, -1.0):
            q_s, phi_s = inverse_kinematics_batch(row + sign * FD_STEP * direction, geometry)
            energy.append(elastic_energy_batch(q_s, phi_s, springs)[0])
        rates.append((energy[0] - energy[1]) / (2.0 * FD_STEP))

    np.testing.assert_allclose(predicted, rates, rtol=1e-5, atol=1e-9)


def test_wrench_torque_balances_platform_power(wl_geometry, make_poses):
    from rrr_balance_study.statics import MassModel, PathStatics, SpringSet, Wrench, path_statics

    poses = make_poses(wl_geometry, 100, seed=13)
    statics: PathStatics = path_statics(poses, wl_geometry, MassModel.massless())
    wrench = Wrench(f=np.array([1.5, -0.4]), m=0.07)
    tau = statics.actuator_torque(SpringSet(), wrench)

    velocities = np.random.default_rng(2).normal(size=(len(poses), 3))
    q_rate = np.einsum("nij,nj->ni", statics.jac.j_qx, velocities)
    np.testing.assert_allclose(np.sum(tau * q_rate, axis=1), velocities @ wrench.as_vector(), atol=1e-9)


def test_massless_robot_needs_no_torque(wl_path_statics, wl_geometry):
    from rrr_balance_study.statics import MassModel, path_statics

    statics = path_statics(wl_path_statics.poses, wl_geometry, MassModel.massless())
    assert np.abs(statics.tau_g).max() == 0.0
    assert np.abs(statics.gravity_potential(wl_geometry, MassModel.massless())).max() == 0.0


def test_path_statics_agrees_with_single_pose_functions(wl_path_statics, wl_geometry, mass_model):
    from rrr_balance_study.kinematics import Pose, inverse_kinematics, jacobians
    from rrr_balance_study.statics import (
        SpringSet,
        actuator_torque,
        elastic_energy,
        gravity_potential,
        total_potential,
    )

    springs = SpringSet(k_q=(1.0, 2.0, 0.5), k_phi=(0.3, 0.0, 0.8), q_f=(0.1, -0.2, 0.3), phi_f=(1.0, -1.0, 0.5))
    table = wl_path_statics.actuator_torque(springs)
    potentials = wl_path_statics.gravity_potential(wl_geometry, mass_model)

    for index in (0, len(wl_path_statics) // 2, len(wl_path_statics) - 1):
        pose = Pose.from_vector(wl_path_statics.poses[index])
        joints = inverse_kinematics(pose, wl_geometry)
        jac = jacobians(pose, joints, wl_geometry)
        np.testing.assert_allclose(
            actuator_torque(pose, joints, jac, wl_geometry, mass_model, springs), table[index], rtol=1e-12, atol=1e-12
        )
        assert gravity_potential(pose, joints, wl_geometry, mass_model) == pytest.approx(potentials[index], rel=1e-12)
        assert total_potential(pose, joints, wl_geometry, mass_model, springs) == pytest.approx(
            potentials[index] + elastic_energy(joints, springs), rel=1e-12
        )


def test_spring_set_mode_and_validation():
    from pydantic import ValidationError

    from rrr_balance_study.statics import SpringSet

    assert SpringSet().mode == 0
    assert SpringSet(k_q=(1.0, 0.0, 0.0)).mode == 1
    assert SpringSet(k_phi=(0.0, 2.0, 0.0)).mode == 2
    assert SpringSet(k_q=(1.0, 0.0, 0.0), k_phi=(0.0, 0.0, 3.0)).mode == 3
    with pytest.raises(ValidationError):
        SpringSet(k_q=(-1.0, 0.0, 0.0))


def test_deflections_are_wrapped():
    from rrr_balance_study.statics import SpringSet

    springs = SpringSet(q_f=(3.0, 0.0, 0.0))
    np.testing.assert_allclose(springs.q_deflection(np.array([-3.0, 0.5, 0.0])), [2.0 * np.pi - 6.0, 0.5, 0.0])


def test_wrench_must_be_finite():
    from rrr_balance_study.statics import Wrench
    from rrr_balance_study.utils import NumericError

    with pytest.raises(NumericError):
        Wrench(f=np.array([np.nan, 0.0]), m=0.0)


def test_mass_model_normalises_gravity_direction():
    from rrr_balance_study.statics import MassModel

    mass = MassModel(gravity_direction=(0.0, -2.0))
    np.testing.assert_allclose(mass.up, [0.0, 1.0])


def test_unit_point_mass_potential_is_weight_times_height(wl_geometry, make_poses):
    from rrr_balance_study.kinematics import inverse_kinematics_batch
    from rrr_balance_study.statics import MassModel, gravity_potential_batch

    point_mass = MassModel(link_masses=((0.0, 0.0),) * 3, platform_mass=1.0)
    poses = make_poses(wl_geometry, 20, seed=21)
    q, phi = inverse_kinematics_batch(poses, wl_geometry)
    np.testing.assert_allclose(gravity_potential_batch(poses, q, phi, wl_geometry, point_mass), 9.81 * poses[:, 1])


def test_elastic_energy_of_a_single_spring():
    from rrr_balance_study.statics import SpringSet, elastic_energy_batch

    springs = SpringSet(k_q=(2.0, 0.0, 0.0), q_f=(0.1, 0.0, 0.0))
    energy = elastic_energy_batch(np.array([[0.6, 1.0, -2.0]]), np.zeros((1, 3)), springs)
    assert energy[0] == pytest.approx(0.25)


def test_potential_change_is_the_work_of_the_actuator_torques(wl_geometry, mass_model):
    """
    Along a straight pose segment V_g + V_e changes by the integral of tau . dq/ds, and a robot whose actuators need
    no torque keeps a constant potential.
    """
    from scipy.integrate import cumulative_trapezoid

    from rrr_balance_study.statics import MassModel, SpringSet, elastic_energy_batch, path_statics
    from rrr_balance_study.utils import wrap_angle

    start, stop = np.array([-0.02, -0.01, -0.2]), np.array([0.03, 0.02, 0.25])
    s = np.linspace(0.0, 1.0, 4001)
    poses = start + s[:, None] * (stop - start)
    statics = path_statics(poses, wl_geometry, mass_model)
    springs = SpringSet(
        k_q=(1.5, 0.8, 2.0),
        k_phi=(0.4, 0.9, 0.2),
        q_f=tuple(wrap_angle(statics.q.mean(axis=0) + 0.3)),
        phi_f=tuple(wrap_angle(statics.phi.mean(axis=0) - 0.2)),
    )

    potential = statics.gravity_potential(wl_geometry, mass_model) + elastic_energy_batch(
        statics.q, statics.phi, springs
    )
    q_rate = statics.jac.j_qx @ (stop - start)
    power = np.sum(statics.actuator_torque(springs) * q_rate, axis=1)
    work = cumulative_trapezoid(power, s, initial=0.0)
    np.testing.assert_allclose(potential - potential[0], work, atol=1e-6 * np.abs(potential).max())

    # proximal centers of mass on the base joints: gravity does no work on the actuated joints
    balanced = MassModel(link_masses=((0.1, 0.0),) * 3, com_fractions=(0.0, 0.5), platform_mass=0.0)
    statics = path_statics(poses, wl_geometry, balanced)
    assert np.abs(statics.actuator_torque()).max() <= 1e-8
    assert np.ptp(statics.gravity_potential(wl_geometry, balanced)) <= 1e-6
