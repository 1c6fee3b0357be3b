"""
Least-squares design of torsional balancing springs, and the per-leg e_tau performance measure.

The residual is the augmented torque vector of a path divided by sqrt(N), so the least-squares cost
1/2 ||r||^2 equals M = 1/(2N) sum_j ||tau_j||^2. Gravity and the kinematics of the path are computed once
(`PathStatics`); only the elastic torque depends on the design parameters, which keeps the residual and its
Jacobian cheap and exact.
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import optimize

from rrr_balance_study.kinematics import ElbowBranch, Pose, RobotGeometry
from rrr_balance_study.rrr_balance_study_config import NUM_STARTS, RANDOM_SEED, THREADS, TORQUE_GUARD
from rrr_balance_study.statics import MassModel, PathStatics, SpringSet, path_statics
from rrr_balance_study.utils import AllGuarded, BoundsViolation, NumericError, parallel_map

logger = logging.getLogger(__name__)


class BalancingMode(IntEnum):
    """
    Where the torsional springs sit: nowhere, at the active joints, at the passive elbows, or at both.
    """

    MODE_0 = 0
    MODE_1 = 1
    MODE_2 = 2
    MODE_3 = 3

    @property
    def parameter_count(self) -> int:
        return {0: 0, 1: 6, 2: 6, 3: 12}[int(self)]

    @property
    def label(self) -> str:
        return f"Mode{int(self)}"


class SolverOptions(BaseModel):
    """
    Settings of the bounded least-squares solve.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    stiffness_max: float = 100.0
    gtol: float = 1e-10
    xtol: float = 1e-12
    ftol: float = 1e-12
    max_nfev: int = 500
    starts: int = NUM_STARTS
    seed: int = RANDOM_SEED
    analytic_jacobian: bool = True
    threads: int = 1


@dataclass(frozen=True)
class OptimizationResult:
    """
    The optimized springs and everything needed to report them. `table` is the balanced torque along the path
    (N x 3), the augmented torque vector reshaped.
    """

    mode: BalancingMode
    springs: SpringSet
    initial_cost: float
    final_cost: float
    cost_history: list[float]
    e_tau: np.ndarray
    table: np.ndarray
    improved: bool = True
    start_index: int = 0
    start_costs: list[float] = field(default_factory=list)

    @property
    def augmented_torque(self) -> np.ndarray:
        return self.table.reshape(-1)


def mode_parameters(springs: SpringSet, mode: BalancingMode) -> np.ndarray:
    """
    Pack a spring set into the mode's parameter vector: [k_q, q_f] (Mode 1), [k_phi, phi_f] (Mode 2) or
    [k_q, k_phi, q_f, phi_f] (Mode 3).
    """
    if mode == BalancingMode.MODE_1:
        parts = (springs.k_q, springs.q_f)
    elif mode == BalancingMode.MODE_2:
        parts = (springs.k_phi, springs.phi_f)
    elif mode == BalancingMode.MODE_3:
        parts = (springs.k_q, springs.k_phi, springs.q_f, springs.phi_f)
    else:
        parts = ()
    return np.concatenate([np.asarray(part, dtype=float) for part in parts]) if parts else np.zeros(0)


def springs_from_parameters(params: np.ndarray, mode: BalancingMode) -> SpringSet:
    """
    Inverse of `mode_parameters`; joints the mode does not equip get zero stiffness.
    """
    params = np.asarray(params, dtype=float)
    if len(params) != mode.parameter_count:
        raise ValueError(f"{mode.label} takes {mode.parameter_count} parameters, got {len(params)}")

    def triple(chunk: np.ndarray) -> tuple[float, float, float]:
        return tuple(float(v) for v in chunk)

    if mode == BalancingMode.MODE_1:
        return SpringSet(k_q=triple(params[:3]), q_f=triple(params[3:]))
    if mode == BalancingMode.MODE_2:
        return SpringSet(k_phi=triple(params[:3]), phi_f=triple(params[3:]))
    if mode == BalancingMode.MODE_3:
        return SpringSet(
            k_q=triple(params[:3]), k_phi=triple(params[3:6]), q_f=triple(params[6:9]), phi_f=triple(params[9:])
        )
    return SpringSet()


def parameter_bounds(mode: BalancingMode, stiffness_max: float = 100.0) -> tuple[np.ndarray, np.ndarray]:
    stiffness_count = 6 if mode == BalancingMode.MODE_3 else 3
    angle_count = mode.parameter_count - stiffness_count
    lower = np.concatenate([np.zeros(stiffness_count), np.full(angle_count, -np.pi)])
    upper = np.concatenate([np.full(stiffness_count, stiffness_max), np.full(angle_count, np.pi)])
    return lower, upper


def torque_samples(
    path: Union[list[Pose], np.ndarray, PathStatics],
    geom: RobotGeometry,
    mass: MassModel,
    springs: SpringSet,
    branch: ElbowBranch = ElbowBranch.ELBOW_UP,
) -> np.ndarray:
    """
    Actuator torque at every path pose (N x 3, rows in path order) with zero external wrench.
    """
    statics = path if isinstance(path, PathStatics) else path_statics(path, geom, mass, branch)
    return statics.actuator_torque(springs)


def _residual_jacobian(statics: PathStatics, springs: SpringSet, mode: BalancingMode) -> np.ndarray:
    """
    d(tau)/d(params) for every path point, shape (N, 3, P).
    """
    n = len(statics)
    q_tilde = springs.q_deflection(statics.q)
    phi_tilde = springs.phi_deflection(statics.phi)
    eye = np.eye(3)
    blocks = []
    if mode in (BalancingMode.MODE_1, BalancingMode.MODE_3):
        # d(K_q q~)/dk_qi = e_i q~_i
        blocks.append(eye[None] * q_tilde[:, None, :])
    if mode in (BalancingMode.MODE_2, BalancingMode.MODE_3):
        # d(J_phiq^T K_phi phi~)/dk_phii = J_phiq[i, :]^T phi~_i
        blocks.append(np.swapaxes(statics.jac.j_phiq, 1, 2) * phi_tilde[:, None, :])
    if mode in (BalancingMode.MODE_1, BalancingMode.MODE_3):
        blocks.append(np.broadcast_to(-eye * np.asarray(springs.k_q), (n, 3, 3)))
    if mode in (BalancingMode.MODE_2, BalancingMode.MODE_3):
        blocks.append(-np.swapaxes(statics.jac.j_phiq, 1, 2) * np.asarray(springs.k_phi)[None, None, :])
    return np.concatenate(blocks, axis=2)


def cost(table: np.ndarray) -> float:
    """
    M = 1/(2N) sum of squared torque norms.
    """
    return float(0.5 * np.mean(np.sum(table**2, axis=1)))


def _start_points(
    mode: BalancingMode,
    init: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    options: SolverOptions,
    warm_start: Optional[np.ndarray],
) -> list[np.ndarray]:
    starts = [init]
    if warm_start is not None:
        starts.append(np.clip(warm_start, lower, upper))
    rng = np.random.default_rng(options.seed)
    stiffness_count = 6 if mode == BalancingMode.MODE_3 else 3
    while len(starts) < max(options.starts, 1):
        # moderate stiffness draws; the solver walks out to the bound when it has to
        stiff = rng.uniform(0.0, min(options.stiffness_max, 10.0), stiffness_count)
        angles = rng.uniform(-np.pi, np.pi, mode.parameter_count - stiffness_count)
        starts.append(np.concatenate([stiff, angles]))
    return starts[: max(options.starts, 1 if warm_start is None else 2)]


def _solve_from(
    statics: PathStatics,
    mode: BalancingMode,
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    options: SolverOptions,
) -> tuple[np.ndarray, float, list[float]]:
    scale = 1.0 / np.sqrt(len(statics))
    history: list[float] = []

    def residual(params: np.ndarray) -> np.ndarray:
        springs = springs_from_parameters(params, mode)
        res = scale * statics.actuator_torque(springs).reshape(-1)
        history.append(float(0.5 * res @ res))
        return res

    def jacobian(params: np.ndarray) -> np.ndarray:
        springs = springs_from_parameters(params, mode)
        return scale * _residual_jacobian(statics, springs, mode).reshape(-1, mode.parameter_count)

    solution = optimize.least_squares(
        residual,
        x0,
        jac=jacobian if options.analytic_jacobian else "2-point",
        bounds=(lower, upper),
        method="trf",
        gtol=options.gtol,
        xtol=options.xtol,
        ftol=options.ftol,
        max_nfev=options.max_nfev,
    )
    logger.debug(
        "least squares: status %d, %d evaluations, cost %.6g", solution.status, solution.nfev, solution.cost
    )
    return solution.x, float(solution.cost), history


def optimize_springs(
    path: Union[list[Pose], np.ndarray, PathStatics],
    geom: RobotGeometry,
    mass: MassModel,
    mode: BalancingMode,
    init: Optional[SpringSet] = None,
    options: Optional[SolverOptions] = None,
    warm_start: Optional[SpringSet] = None,
    branch: ElbowBranch = ElbowBranch.ELBOW_UP,
) -> OptimizationResult:
    """
    Minimize M over the mode's spring parameters within stiffness in [0, stiffness_max] and free angles in
    [-pi, pi]. Runs `options.starts` starts (the initial design, the warm start if given, then seeded random
    draws) and keeps the lowest cost; ties go to the earlier start. If no start beats the initial design the
    initial springs come back with `improved` False.
    """
    if mode == BalancingMode.MODE_0:
        raise ValueError("Mode 0 has no springs to optimize")
    options = options or SolverOptions()
    statics = path if isinstance(path, PathStatics) else path_statics(path, geom, mass, branch)
    lower, upper = parameter_bounds(mode, options.stiffness_max)

    init = init or SpringSet()
    x_init = mode_parameters(init, mode)
    outside = np.flatnonzero((x_init < lower) | (x_init > upper))
    if outside.size:
        raise BoundsViolation(
            "initial spring parameters outside the bounds",
            mode=mode.label,
            parameters=tuple(int(i) for i in outside),
        )
    initial_table = statics.actuator_torque(init)
    initial_cost = cost(initial_table)

    # a spring set from any mode can seed this one, e.g. the Mode 1 optimum seeding Mode 3
    warm = mode_parameters(warm_start, mode) if warm_start is not None else None
    starts = _start_points(mode, x_init, lower, upper, options, warm)

    def run(start: np.ndarray) -> Optional[tuple[np.ndarray, float, list[float]]]:
        try:
            return _solve_from(statics, mode, start, lower, upper, options)
        except (ValueError, NumericError, np.linalg.LinAlgError) as exc:
            logger.warning("%s start failed: %s", mode.label, exc)
            return None

    outcomes = parallel_map(run, starts, options.threads)
    finished = [(i, outcome) for i, outcome in enumerate(outcomes) if outcome is not None]
    start_costs = [outcome[1] if outcome is not None else float("nan") for outcome in outcomes]

    best_index, best = None, None
    for i, outcome in finished:
        if best is None or outcome[1] < best[1]:
            best_index, best = i, outcome

    baseline = statics.tau_g
    if best is None or best[1] > initial_cost:
        logger.warning("%s: no start improved on the initial design (cost %.6g)", mode.label, initial_cost)
        return OptimizationResult(
            mode=mode,
            springs=init,
            initial_cost=initial_cost,
            final_cost=initial_cost,
            cost_history=[initial_cost],
            e_tau=_safe_e_tau(initial_table, baseline),
            table=initial_table,
            improved=False,
            start_costs=start_costs,
        )

    springs = springs_from_parameters(best[0], mode)
    table = statics.actuator_torque(springs)
    final_cost = cost(table)
    logger.info(
        "%s: cost %.6g -> %.6g (start %d of %d)", mode.label, initial_cost, final_cost, best_index, len(starts)
    )
    return OptimizationResult(
        mode=mode,
        springs=springs,
        initial_cost=initial_cost,
        final_cost=final_cost,
        cost_history=best[2],
        e_tau=_safe_e_tau(table, baseline),
        table=table,
        improved=True,
        start_index=best_index,
        start_costs=start_costs,
    )


def _safe_e_tau(table: np.ndarray, baseline: np.ndarray) -> np.ndarray:
    try:
        return e_tau(table, baseline)
    except AllGuarded:
        return np.full(3, np.nan)


def e_tau(mode_table: np.ndarray, baseline_table: np.ndarray, guard: float = TORQUE_GUARD) -> np.ndarray:
    """
    Per-leg RMS of the torque ratio tau_mode / tau_mode0 over the path. Baseline entries below `guard` are left
    out of the mean.
    """
    mode_table = np.asarray(mode_table, dtype=float)
    baseline_table = np.asarray(baseline_table, dtype=float)
    if mode_table.shape != baseline_table.shape:
        raise ValueError(f"table shapes differ: {mode_table.shape} vs {baseline_table.shape}")
    kept = np.abs(baseline_table) >= guard
    counts = kept.sum(axis=0)
    if (counts == 0).any():
        raise AllGuarded(
            "every baseline torque of the leg is below the guard",
            leg=int(np.flatnonzero(counts == 0)[0]),
            guard=guard,
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(kept, mode_table / baseline_table, 0.0)
    return np.sqrt(np.sum(ratios**2, axis=0) / counts)


def torque_reduction(mode_table: np.ndarray, baseline_table: np.ndarray, guard: float = TORQUE_GUARD) -> float:
    """
    Mean percentage reduction of the torque norm against the baseline, over path points with a non-negligible
    baseline norm.
    """
    base = np.linalg.norm(baseline_table, axis=1)
    balanced = np.linalg.norm(mode_table, axis=1)
    kept = base >= guard
    if not kept.any():
        raise AllGuarded("every baseline torque norm is below the guard", guard=guard)
    return float(100.0 * np.mean((base[kept] - balanced[kept]) / base[kept]))
