"""
Dexterous-workspace scanning, the task-based sub-workspace, the spiral task path and the search for the task
placement that torsional springs balance best.

The scan is polar around the world origin. Along every azimuth ray the radius grows by step doubling until the pose
stops being feasible, and the boundary is then bisected to the radial tolerance. All rays (and all sampled platform
orientations) advance together so each step is one vectorised feasibility call.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from rrr_balance_study.kinematics import ElbowBranch, Pose, RobotGeometry, feasible_mask
from rrr_balance_study.rrr_balance_study_config import SINGULARITY_THRESHOLD, THREADS, TORQUE_GUARD
from rrr_balance_study.spring_opt import BalancingMode, SolverOptions, optimize_springs, torque_reduction
from rrr_balance_study.statics import MassModel, PathStatics, SpringSet, path_statics
from rrr_balance_study.utils import EmptyWorkspace, NumericError, parallel_map, unit, wrap_angle

logger = logging.getLogger(__name__)

NL_AZIMUTH_LIMIT = np.radians(120.0)
MIN_PROBES = 32


class TaskSpec(BaseModel):
    """
    The design task: a spiral over a disk of `task_radius` followed at a constant platform orientation `gamma`,
    with the platform able to rotate anywhere within +-`orientation_range`.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    task_radius: float = 0.05
    orientation_range: float = float(np.radians(30.0))
    orientation_step: float = float(np.radians(5.0))
    spiral_points: int = 1500
    spiral_turns: int = 12
    gamma: float = 0.0

    @field_validator("task_radius")
    @classmethod
    def _non_negative_radius(cls, value: float) -> float:
        # zero is allowed: it turns the sub-workspace into the dexterous workspace itself
        if value < 0:
            raise ValueError("task_radius must be non-negative")
        return value

    @field_validator("orientation_range", "orientation_step")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be positive")
        return value

    @field_validator("spiral_points")
    @classmethod
    def _enough_points(cls, value: int) -> int:
        if value < 2:
            raise ValueError("a spiral needs at least 2 points")
        return value

    @field_validator("spiral_turns")
    @classmethod
    def _turns(cls, value: int) -> int:
        if value < 0:
            raise ValueError("spiral_turns must be non-negative")
        return value

    def orientations(self) -> np.ndarray:
        """Sampled platform orientations, both ends of the range included."""
        count = int(round(2.0 * self.orientation_range / self.orientation_step))
        return np.linspace(-self.orientation_range, self.orientation_range, count + 1)


@dataclass(frozen=True)
class TorqueGrid:
    """
    Torque ratios of balanced vs unbalanced actuator torque on a grid of platform positions at one orientation.
    Infeasible points and points with a guarded baseline hold NaN.
    """

    points: np.ndarray
    gamma: float
    norm_ratio: np.ndarray
    leg_ratio: np.ndarray

    @property
    def reduction_percent(self) -> np.ndarray:
        """Percentage torque-norm reduction; negative where balancing made things worse."""
        return 100.0 * (1.0 - self.norm_ratio)


@dataclass(frozen=True)
class WorkspaceMap:
    """
    Polar description of the dexterous workspace (and, once eroded, of the task-based sub-workspace).

    `orientation_radii[k, m]` is the boundary radius along `azimuths[m]` at `orientations[k]`; `radii` is their
    intersection. A sector scan (`full_circle` False) only covers the azimuths it lists; membership outside the
    sector is decided by a direct feasibility check against `geom`.
    """

    azimuths: np.ndarray
    orientations: np.ndarray
    orientation_radii: np.ndarray
    radii: np.ndarray
    angular_resolution: float
    radial_tolerance: float
    full_circle: bool = True
    sub_radii: Optional[np.ndarray] = None
    task_radius: Optional[float] = None
    grid: Optional[TorqueGrid] = None
    geom: Optional[RobotGeometry] = field(default=None, repr=False)
    branch: ElbowBranch = ElbowBranch.ELBOW_UP
    threshold: float = SINGULARITY_THRESHOLD

    def boundary_points(self) -> np.ndarray:
        return self.radii[:, None] * unit(self.azimuths)

    def sub_boundary_points(self) -> np.ndarray:
        if self.sub_radii is None:
            raise EmptyWorkspace("the workspace has not been eroded by a task yet")
        return self.sub_radii[:, None] * unit(self.azimuths)

    def radius_at(self, azimuths: np.ndarray, radii: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Linearly interpolated boundary radius at arbitrary azimuths; NaN outside a sector scan.
        """
        radii = self.radii if radii is None else radii
        azimuths = np.asarray(azimuths, dtype=float)
        if self.full_circle:
            return np.interp(np.mod(azimuths, 2.0 * np.pi), self.azimuths, radii, period=2.0 * np.pi)
        wrapped = wrap_angle(azimuths)
        inside = (wrapped >= self.azimuths[0] - 1e-12) & (wrapped <= self.azimuths[-1] + 1e-12)
        return np.where(inside, np.interp(wrapped, self.azimuths, radii), np.nan)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """
        Dexterous-workspace membership of (M, 2) points.
        """
        return self._polar_membership(points, self.radii, fallback=True)

    def in_sub_workspace(self, points: np.ndarray) -> np.ndarray:
        """
        Whether a task centered at each point fits (polar test against the eroded radii).
        """
        if self.sub_radii is None:
            raise EmptyWorkspace("the workspace has not been eroded by a task yet")
        return self._polar_membership(points, self.sub_radii, fallback=False)

    def _polar_membership(self, points: np.ndarray, radii: np.ndarray, fallback: bool) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        norms = np.linalg.norm(points, axis=-1)
        bound = self.radius_at(np.arctan2(points[:, 1], points[:, 0]), radii)
        inside = np.where(np.isnan(bound), False, norms <= np.nan_to_num(bound) + 1e-12)
        outside_sector = np.isnan(bound) & (norms > 0.0)
        if outside_sector.any():
            if fallback and self.geom is not None:
                inside[outside_sector] = dexterous_mask(
                    points[outside_sector], self.geom, self.orientations, self.branch, self.threshold
                )
            else:
                inside[outside_sector] = False
        inside[norms == 0.0] = True
        return inside


def dexterous_mask(
    points: np.ndarray,
    geom: RobotGeometry,
    orientations: np.ndarray,
    branch: ElbowBranch = ElbowBranch.ELBOW_UP,
    threshold: float = SINGULARITY_THRESHOLD,
) -> np.ndarray:
    """
    Whether each (M, 2) platform position is feasible at every one of the given orientations.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    poses = np.concatenate(
        [np.repeat(points, len(orientations), axis=0), np.tile(orientations, len(points))[:, None]], axis=1
    )
    return feasible_mask(poses, geom, branch, threshold).reshape(len(points), len(orientations)).all(axis=1)


def _ray_search(
    fits: Callable[[np.ndarray, np.ndarray], np.ndarray],
    count: int,
    tolerance: float,
    max_step: float,
    limit: float,
) -> np.ndarray:
    """
    Largest radius per ray before `fits(ray_indices, radii)` first fails: grow by doubling steps (capped at
    `max_step`), then bisect the failing bracket down to `tolerance`. Radius 0 is assumed to fit.
    """
    lo = np.zeros(count)
    hi = np.full(count, limit)
    step = np.full(count, tolerance)
    growing = np.ones(count, dtype=bool)
    while growing.any():
        idx = np.flatnonzero(growing)
        trial = np.minimum(lo[idx] + step[idx], limit)
        ok = fits(idx, trial) & (trial < limit)
        lo[idx[ok]] = trial[ok]
        step[idx[ok]] = np.minimum(2.0 * step[idx[ok]], max_step)
        hi[idx[~ok]] = trial[~ok]
        growing[idx[~ok]] = False

    bisecting = hi - lo > tolerance
    while bisecting.any():
        idx = np.flatnonzero(bisecting)
        mid = 0.5 * (lo[idx] + hi[idx])
        ok = fits(idx, mid)
        lo[idx[ok]] = mid[ok]
        hi[idx[~ok]] = mid[~ok]
        bisecting[idx] = hi[idx] - lo[idx] > tolerance
    return lo


def scan_azimuths(layout: str, angular_resolution: float) -> tuple[np.ndarray, bool]:
    """
    Azimuth samples of the scan: the full circle for WL, +-120 degrees around +x for NL (the base column sits on
    the -x side).
    """
    if layout == "NL":
        count = int(round(2.0 * NL_AZIMUTH_LIMIT / angular_resolution))
        return np.linspace(-NL_AZIMUTH_LIMIT, NL_AZIMUTH_LIMIT, count + 1), False
    count = int(round(2.0 * np.pi / angular_resolution))
    return np.arange(count) * (2.0 * np.pi / count), True


def scan_dexterous_workspace(
    geom: RobotGeometry,
    task: TaskSpec,
    angular_resolution: float = float(np.radians(1.0)),
    radial_tolerance: float = 1e-4,
    max_radial_step: float = 0.005,
    branch: ElbowBranch = ElbowBranch.ELBOW_UP,
    threshold: float = SINGULARITY_THRESHOLD,
) -> WorkspaceMap:
    """
    Constant-orientation polar scans at every sampled orientation, intersected into the dexterous workspace.
    """
    if not (angular_resolution > 0 and radial_tolerance > 0 and max_radial_step > 0):
        raise ValueError("scan resolutions must be positive")
    azimuths, full_circle = scan_azimuths(geom.layout, angular_resolution)
    orientations = task.orientations()

    origin_ok = feasible_mask(
        np.column_stack([np.zeros((len(orientations), 2)), orientations]), geom, branch, threshold
    )
    if not origin_ok.all():
        raise EmptyWorkspace(
            "the scan center is not feasible at every orientation",
            infeasible_orientations_deg=tuple(np.round(np.degrees(orientations[~origin_ok]), 6)),
        )

    ray_dirs = np.tile(unit(azimuths), (len(orientations), 1))
    ray_gammas = np.repeat(orientations, len(azimuths))
    limit = float(np.linalg.norm(geom.b, axis=1).max() + geom.l1 + geom.l2 + np.linalg.norm(geom.p_t, axis=1).max())

    def fits(idx: np.ndarray, radii: np.ndarray) -> np.ndarray:
        poses = np.column_stack([radii[:, None] * ray_dirs[idx], ray_gammas[idx]])
        return feasible_mask(poses, geom, branch, threshold)

    radii = _ray_search(fits, len(ray_dirs), radial_tolerance, max_radial_step, limit)
    orientation_radii = radii.reshape(len(orientations), len(azimuths))
    logger.info(
        "scanned %s workspace: %d azimuths x %d orientations, radius %.4f..%.4f m",
        geom.layout,
        len(azimuths),
        len(orientations),
        orientation_radii.min(initial=0.0),
        orientation_radii.max(initial=0.0),
    )
    return WorkspaceMap(
        azimuths=azimuths,
        orientations=orientations,
        orientation_radii=orientation_radii,
        radii=orientation_radii.min(axis=0),
        angular_resolution=angular_resolution,
        radial_tolerance=radial_tolerance,
        full_circle=full_circle,
        geom=geom,
        branch=branch,
        threshold=threshold,
    )


def _probe_offsets(task_radius: float, angular_resolution: float) -> np.ndarray:
    count = max(MIN_PROBES, int(np.ceil(2.0 * np.pi / angular_resolution)))
    return task_radius * unit(np.arange(count) * (2.0 * np.pi / count))


def compute_sub_workspace(
    workspace: WorkspaceMap, task: TaskSpec, max_radial_step: float = 0.005
) -> WorkspaceMap:
    """
    Erode the dexterous workspace by the task disk: along each azimuth keep the centers whose whole task disk (probed
    on its boundary circle) lies inside the workspace.
    """
    if task.task_radius == 0.0:
        return replace(workspace, sub_radii=workspace.radii.copy(), task_radius=0.0)

    offsets = _probe_offsets(task.task_radius, workspace.angular_resolution)

    def disks_fit(centers: np.ndarray) -> np.ndarray:
        probes = (centers[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
        return workspace.contains(probes).reshape(len(centers), len(offsets)).all(axis=1)

    if not disks_fit(np.zeros((1, 2)))[0]:
        raise EmptyWorkspace("the task disk does not fit around the scan center", task_radius=task.task_radius)

    directions = unit(workspace.azimuths)

    def fits(idx: np.ndarray, radii: np.ndarray) -> np.ndarray:
        return disks_fit(radii[:, None] * directions[idx])

    limit = float(workspace.radii.max()) + workspace.radial_tolerance
    sub_radii = _ray_search(fits, len(directions), workspace.radial_tolerance, max_radial_step, limit)
    sub_radii = np.minimum(sub_radii, workspace.radii)
    logger.info(
        "task disk %.3f m leaves a sub-workspace of radius %.4f..%.4f m",
        task.task_radius,
        sub_radii.min(),
        sub_radii.max(),
    )
    return replace(workspace, sub_radii=sub_radii, task_radius=task.task_radius)


def spiral_array(center: np.ndarray, task: TaskSpec, gamma: Optional[float] = None, points: Optional[int] = None):
    """
    The spiral as an (N, 3) pose array. The radius grows linearly with the point index and the winding angle is
    taken on an integer grid, so the last point sits exactly at center + (task_radius, 0).
    """
    count = task.spiral_points if points is None else points
    if count < 2:
        raise ValueError("a spiral needs at least 2 points")
    gamma = task.gamma if gamma is None else gamma
    index = np.arange(count)
    last = count - 1
    radius = task.task_radius * index / last
    angle = 2.0 * np.pi * np.mod(task.spiral_turns * index, last) / last
    center = np.asarray(center, dtype=float).reshape(2)
    xy = center + radius[:, None] * unit(angle)
    return np.column_stack([xy, np.full(count, wrap_angle(gamma))])


def spiral_path(center: np.ndarray, task: TaskSpec, gamma: Optional[float] = None) -> list[Pose]:
    """
    Archimedean spiral from `center` out to `task_radius` at constant platform orientation.
    """
    return [Pose.from_vector(row) for row in spiral_array(center, task, gamma)]


def sub_workspace_grid(workspace: WorkspaceMap, spacing: float) -> np.ndarray:
    """
    Points of a square grid (row-major, y then x) that lie inside the sub-workspace.
    """
    if workspace.sub_radii is None:
        raise EmptyWorkspace("the workspace has not been eroded by a task yet")
    if not spacing > 0:
        raise ValueError("grid spacing must be positive")
    reach = int(np.ceil(workspace.sub_radii.max() / spacing))
    axis = spacing * np.arange(-reach, reach + 1)
    grid_y, grid_x = np.meshgrid(axis, axis, indexing="ij")
    points = np.column_stack([grid_x.ravel(), grid_y.ravel()])
    return points[workspace.in_sub_workspace(points)]


def torque_ratio_grid(
    points: np.ndarray,
    gamma: float,
    geom: RobotGeometry,
    mass: MassModel,
    balanced_torque: Callable[[PathStatics], np.ndarray],
    branch: ElbowBranch = ElbowBranch.ELBOW_UP,
    threshold: float = SINGULARITY_THRESHOLD,
) -> TorqueGrid:
    """
    ||tau_balanced|| / ||tau_0|| and the per-leg |tau_i,balanced| / |tau_i,0| at every grid point.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    poses = np.column_stack([points, np.full(len(points), gamma)])
    norm_ratio = np.full(len(points), np.nan)
    leg_ratio = np.full((len(points), 3), np.nan)
    ok = feasible_mask(poses, geom, branch, threshold)
    if ok.any():
        statics = path_statics(poses[ok], geom, mass, branch, threshold)
        tau_0 = statics.tau_g
        tau_b = balanced_torque(statics)
        base_norm = np.linalg.norm(tau_0, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            norm_ratio[ok] = np.where(
                base_norm >= TORQUE_GUARD, np.linalg.norm(tau_b, axis=1) / base_norm, np.nan
            )
            leg_ratio[ok] = np.where(np.abs(tau_0) >= TORQUE_GUARD, np.abs(tau_b) / np.abs(tau_0), np.nan)
    return TorqueGrid(points=points, gamma=float(gamma), norm_ratio=norm_ratio, leg_ratio=leg_ratio)


def torque_reduction_map(
    workspace: WorkspaceMap,
    geom: RobotGeometry,
    mass: MassModel,
    springs: SpringSet,
    gamma: float,
    spacing: float = 0.005,
) -> WorkspaceMap:
    """
    Percentage torque reduction of one fixed spring set at every point of the sub-workspace. Shows that springs
    tuned for one task placement can increase the torque elsewhere.
    """
    points = sub_workspace_grid(workspace, spacing)
    grid = torque_ratio_grid(
        points,
        gamma,
        geom,
        mass,
        lambda statics: statics.actuator_torque(springs),
        workspace.branch,
        workspace.threshold,
    )
    return replace(workspace, grid=grid)


@dataclass(frozen=True)
class PlacementCandidate:
    center: np.ndarray
    gamma: float
    reduction: float = float("nan")
    center_torque: float = float("nan")
    error: Optional[str] = None

    @property
    def evaluated(self) -> bool:
        return self.error is None and not np.isnan(self.reduction)


@dataclass(frozen=True)
class PlacementDiagnostics:
    """
    Every scanned placement, the winner, and the scanned centers needing the most and least unbalanced torque.
    """

    candidates: list[PlacementCandidate]
    best_index: int
    max_torque_index: int
    min_torque_index: int

    @property
    def best(self) -> PlacementCandidate:
        return self.candidates[self.best_index]

    @property
    def max_torque(self) -> PlacementCandidate:
        return self.candidates[self.max_torque_index]

    @property
    def min_torque(self) -> PlacementCandidate:
        return self.candidates[self.min_torque_index]


def default_candidate_orientations() -> np.ndarray:
    return np.radians(np.arange(-30.0, 31.0, 10.0))


def _evaluate_candidate(
    center: np.ndarray,
    gamma: float,
    geom: RobotGeometry,
    mass: MassModel,
    task: TaskSpec,
    points: int,
    options: SolverOptions,
    branch: ElbowBranch,
    threshold: float,
) -> PlacementCandidate:
    try:
        statics = path_statics(spiral_array(center, task, gamma, points), geom, mass, branch, threshold)
        result = optimize_springs(statics, geom, mass, BalancingMode.MODE_1, options=options)
        reduction = torque_reduction(result.table, statics.tau_g)
    except NumericError as exc:
        logger.warning(
            "skipping placement (%.4f, %.4f) gamma=%.1f deg: %s", center[0], center[1], np.degrees(gamma), exc
        )
        return PlacementCandidate(center=center, gamma=gamma, error=f"{type(exc).__name__}: {exc}")
    return PlacementCandidate(
        center=center, gamma=gamma, reduction=reduction, center_torque=float(np.linalg.norm(statics.tau_g[0]))
    )


def optimal_task_location(
    workspace: WorkspaceMap,
    geom: RobotGeometry,
    mass: MassModel,
    task: TaskSpec,
    candidate_orientations: Optional[np.ndarray] = None,
    grid_spacing: float = 0.01,
    placement_points: int = 300,
    options: Optional[SolverOptions] = None,
    threads: int = THREADS,
    candidates: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, float, PlacementDiagnostics]:
    """
    Try every (grid center, orientation) pair: fit Mode 1 springs on a reduced spiral there and keep the placement
    with the highest mean torque-norm reduction against Mode 0. Candidates whose spiral hits an unreachable or
    singular pose are skipped with a warning. `candidates` overrides the grid with explicit centers.
    """
    orientations = default_candidate_orientations() if candidate_orientations is None else candidate_orientations
    centers = sub_workspace_grid(workspace, grid_spacing) if candidates is None else np.atleast_2d(candidates)
    if len(centers) == 0:
        raise EmptyWorkspace("no grid point lies inside the sub-workspace", grid_spacing=grid_spacing)
    options = options or SolverOptions(starts=1)
    pairs = [(center, float(gamma)) for gamma in orientations for center in centers]
    logger.info("evaluating %d placement candidates", len(pairs))

    scored = parallel_map(
        lambda pair: _evaluate_candidate(
            pair[0], pair[1], geom, mass, task, placement_points, options, workspace.branch, workspace.threshold
        ),
        pairs,
        threads,
    )
    evaluated = [i for i, candidate in enumerate(scored) if candidate.evaluated]
    if not evaluated:
        raise EmptyWorkspace("every placement candidate failed", candidates=len(scored))

    # ties go to the earliest candidate
    best = max(evaluated, key=lambda i: (scored[i].reduction, -i))
    torques = [scored[i].center_torque for i in evaluated]
    diagnostics = PlacementDiagnostics(
        candidates=scored,
        best_index=best,
        max_torque_index=evaluated[int(np.argmax(torques))],
        min_torque_index=evaluated[int(np.argmin(torques))],
    )
    logger.info(
        "best placement (%.4f, %.4f) gamma=%.1f deg: %.1f%% mean torque reduction",
        scored[best].center[0],
        scored[best].center[1],
        np.degrees(scored[best].gamma),
        scored[best].reduction,
    )
    return scored[best].center, scored[best].gamma, diagnostics
