# pylint: disable=import-outside-toplevel
"""
Spring optimization per balancing mode and the e_tau measure.
"""

from dataclasses import replace

import numpy as np
import pytest


def _target_statics(statics, springs):
    """A path whose load is exactly cancelled by `springs`."""
    return replace(statics, tau_g=-statics.elastic_torque(springs))


def test_recovers_springs_that_balance_exactly(wl_path_statics, wl_geometry, mass_model):
    from rrr_balance_study.spring_opt import BalancingMode, SolverOptions, optimize_springs
    from rrr_balance_study.statics import SpringSet
    from rrr_balance_study.utils import wrap_angle

    free_angles = wrap_angle(wl_path_statics.q.mean(axis=0) + np.array([0.4, -0.3, 0.5]))
    target = SpringSet(k_q=(2.5, 4.0, 1.2), q_f=tuple(free_angles))
    statics = _target_statics(wl_path_statics, target)

    result = optimize_springs(
        statics,
        wl_geometry,
        mass_model,
        BalancingMode.MODE_1,
        init=SpringSet(k_q=(1.0, 1.0, 1.0), q_f=tuple(wrap_angle(free_angles - 0.2))),
        options=SolverOptions(starts=4, seed=1),
    )

    assert result.improved
    assert result.final_cost < 1e-12
    np.testing.assert_allclose(result.springs.k_q, target.k_q, rtol=1e-5)
    np.testing.assert_allclose(wrap_angle(np.subtract(result.springs.q_f, target.q_f)), 0.0, atol=1e-5)
    assert result.cost_history[-1] <= result.cost_history[0]


def test_analytic_and_numeric_jacobians_agree(wl_path_statics, wl_geometry, mass_model):
    from rrr_balance_study.spring_opt import BalancingMode, SolverOptions, optimize_springs

    analytic = optimize_springs(
        wl_path_statics, wl_geometry, mass_model, BalancingMode.MODE_1, options=SolverOptions(starts=2)
    )
    numeric = optimize_springs(
        wl_path_statics,
        wl_geometry,
        mass_model,
        BalancingMode.MODE_1,
        options=SolverOptions(starts=2, analytic_jacobian=False),
    )
    assert numeric.final_cost == pytest.approx(analytic.final_cost, rel=1e-3, abs=1e-10)


def test_springs_never_increase_the_cost(wl_path_statics, wl_geometry, mass_model):
    from rrr_balance_study.spring_opt import BalancingMode, SolverOptions, optimize_springs

    options = SolverOptions(starts=3)
    for mode in (BalancingMode.MODE_1, BalancingMode.MODE_2):
        result = optimize_springs(wl_path_statics, wl_geometry, mass_model, mode, options=options)
        assert result.final_cost <= result.initial_cost
        assert result.springs.mode in (0, int(mode))
        stiffness = np.asarray(result.springs.k_q + result.springs.k_phi)
        assert np.all((stiffness >= 0.0) & (stiffness <= options.stiffness_max))


def test_mode_3_warm_start_is_at_least_as_good_as_mode_1(wl_path_statics, wl_geometry, mass_model):
    from rrr_balance_study.spring_opt import BalancingMode, SolverOptions, optimize_springs

    options = SolverOptions(starts=2)
    mode_1 = optimize_springs(wl_path_statics, wl_geometry, mass_model, BalancingMode.MODE_1, options=options)
    mode_3 = optimize_springs(
        wl_path_statics, wl_geometry, mass_model, BalancingMode.MODE_3, options=options, warm_start=mode_1.springs
    )
    assert mode_3.final_cost <= mode_1.final_cost * (1.0 + 1e-9) + 1e-15


def test_optimization_is_deterministic(wl_path_statics, wl_geometry, mass_model):
    from rrr_balance_study.spring_opt import BalancingMode, SolverOptions, optimize_springs

    options = SolverOptions(starts=3, threads=3)
    first = optimize_springs(wl_path_statics, wl_geometry, mass_model, BalancingMode.MODE_2, options=options)
    second = optimize_springs(wl_path_statics, wl_geometry, mass_model, BalancingMode.MODE_2, options=options)
    assert first.springs == second.springs
    assert first.start_costs == second.start_costs


def test_mode_0_has_nothing_to_optimize(wl_path_statics, wl_geometry, mass_model):
    from rrr_balance_study.spring_opt import BalancingMode, optimize_springs

    with pytest.raises(ValueError):
        optimize_springs(wl_path_statics, wl_geometry, mass_model, BalancingMode.MODE_0)


def test_initial_design_outside_bounds_is_rejected(wl_path_statics, wl_geometry, mass_model):
    from rrr_balance_study.spring_opt import BalancingMode, SolverOptions, optimize_springs
    from rrr_balance_study.statics import SpringSet
    from rrr_balance_study.utils import BoundsViolation

    with pytest.raises(BoundsViolation):
        optimize_springs(
            wl_path_statics,
            wl_geometry,
            mass_model,
            BalancingMode.MODE_1,
            init=SpringSet(k_q=(150.0, 0.0, 0.0)),
            options=SolverOptions(stiffness_max=100.0),
        )


def test_parameter_layout_per_mode():
    from rrr_balance_study.spring_opt import (
        BalancingMode,
        mode_parameters,
        parameter_bounds,
        springs_from_parameters,
    )
    from rrr_balance_study.statics import SpringSet

    springs = SpringSet(k_q=(1.0, 2.0, 3.0), k_phi=(4.0, 5.0, 6.0), q_f=(0.1, 0.2, 0.3), phi_f=(0.4, 0.5, 0.6))
    np.testing.assert_allclose(mode_parameters(springs, BalancingMode.MODE_1), [1, 2, 3, 0.1, 0.2, 0.3])
    np.testing.assert_allclose(mode_parameters(springs, BalancingMode.MODE_2), [4, 5, 6, 0.4, 0.5, 0.6])
    assert springs_from_parameters(mode_parameters(springs, BalancingMode.MODE_3), BalancingMode.MODE_3) == springs

    lower, upper = parameter_bounds(BalancingMode.MODE_3, 50.0)
    np.testing.assert_allclose(lower, [0.0] * 6 + [-np.pi] * 6)
    np.testing.assert_allclose(upper, [50.0] * 6 + [np.pi] * 6)
    with pytest.raises(ValueError):
        springs_from_parameters(np.zeros(5), BalancingMode.MODE_1)


def test_e_tau_is_the_rms_torque_ratio():
    from rrr_balance_study.spring_opt import e_tau, torque_reduction

    baseline = np.array([[1.0, -2.0, 4.0], [2.0, -4.0, 1.0]])
    np.testing.assert_allclose(e_tau(baseline, baseline), [1.0, 1.0, 1.0])
    np.testing.assert_allclose(e_tau(0.5 * baseline, baseline), [0.5, 0.5, 0.5])
    np.testing.assert_allclose(e_tau(np.zeros_like(baseline), baseline), [0.0, 0.0, 0.0])
    assert torque_reduction(0.5 * baseline, baseline) == pytest.approx(50.0)


def test_e_tau_skips_guarded_samples_and_names_dead_legs():
    from rrr_balance_study.spring_opt import e_tau
    from rrr_balance_study.utils import AllGuarded

    baseline = np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 0.0]])
    table = np.array([[0.5, 1.0, 3.0], [7.0, 1.0, 3.0]])
    with pytest.raises(AllGuarded) as exc_info:
        e_tau(table, baseline)
    assert exc_info.value.details["leg"] == 2

    baseline[:, 2] = 1.0
    values = e_tau(table, baseline)
    assert values[0] == pytest.approx(0.5)


def test_torque_samples_keep_path_order(wl_path_statics, wl_geometry, mass_model):
    from rrr_balance_study.spring_opt import torque_samples
    from rrr_balance_study.statics import SpringSet

    springs = SpringSet(k_q=(1.0, 1.0, 1.0))
    from_poses = torque_samples(wl_path_statics.poses, wl_geometry, mass_model, springs)
    np.testing.assert_allclose(from_poses, torque_samples(wl_path_statics, wl_geometry, mass_model, springs))
    assert from_poses.shape == (len(wl_path_statics), 3)


def test_active_joint_springs_match_a_grid_search(wl_path_statics, wl_geometry, mass_model):
    """
    An active-joint spring only loads its own joint, so each leg is a two-parameter problem (k_q, q_f) that a
    200 x 200 grid over the bounds brackets from above.
    """
    from rrr_balance_study.spring_opt import BalancingMode, SolverOptions, optimize_springs
    from rrr_balance_study.utils import wrap_angle

    result = optimize_springs(
        wl_path_statics, wl_geometry, mass_model, BalancingMode.MODE_1, options=SolverOptions(starts=8)
    )
    stiffness = np.linspace(0.0, 100.0, 200)
    free_angles = np.linspace(-np.pi, np.pi, 200)
    for leg in range(3):
        deflection = wrap_angle(wl_path_statics.q[None, :, leg] - free_angles[:, None])
        torque = wl_path_statics.tau_g[None, None, :, leg] + stiffness[:, None, None] * deflection[None]
        grid_best = np.mean(torque**2, axis=-1).min()
        assert np.mean(result.table[:, leg] ** 2) <= grid_best * (1.0 + 1e-6) + 1e-15


def test_default_starts_come_from_the_environment_settings():
    from rrr_balance_study.rrr_balance_study_config import NUM_STARTS, RANDOM_SEED
    from rrr_balance_study.spring_opt import SolverOptions

    assert SolverOptions().seed == RANDOM_SEED
    assert SolverOptions().starts == NUM_STARTS
