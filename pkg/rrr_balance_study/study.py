"""
The study pipeline: workspace scan -> sub-workspace -> task placement -> spring optimization per mode -> cam design
-> report. Stages run in order; work inside a stage that does not depend on each other (the modes without a warm
start, contour grids) is awaited concurrently on worker threads.
"""

import asyncio
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, TypeVar

import numpy as np

from rrr_balance_study import report
from rrr_balance_study.rrr_balance_study_config import THREADS
from rrr_balance_study.spring_opt import BalancingMode, OptimizationResult, e_tau, optimize_springs
from rrr_balance_study.statics import PathStatics, path_statics
from rrr_balance_study.study_config import StudyConfig
from rrr_balance_study.utils import NumericError, StageError
from rrr_balance_study.wirecam.synthesis import CamDesign, cam_angle, cam_balanced_torque, design_cams
from rrr_balance_study.workspace import (
    PlacementDiagnostics,
    TorqueGrid,
    WorkspaceMap,
    compute_sub_workspace,
    optimal_task_location,
    scan_dexterous_workspace,
    spiral_array,
    torque_ratio_grid,
    torque_reduction_map,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")

STAGES = ("workspace", "place", "optimize", "cam")
VERB_STAGES = {
    "workspace": ("workspace",),
    "place": ("workspace", "place"),
    "optimize": ("workspace", "place", "optimize"),
    "cam": ("workspace", "place", "cam"),
    "run": STAGES,
}


@dataclass
class ReportBundle:
    """
    Everything a study run produced, in memory, plus the artifact paths written to `out_dir`.
    """

    out_dir: Path
    workspace: Optional[WorkspaceMap] = None
    center: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    placement: Optional[PlacementDiagnostics] = None
    statics: Optional[PathStatics] = None
    results: dict[BalancingMode, OptimizationResult] = field(default_factory=dict)
    tables: dict[str, np.ndarray] = field(default_factory=dict)
    e_tau: dict[str, np.ndarray] = field(default_factory=dict)
    grids: dict[str, TorqueGrid] = field(default_factory=dict)
    designs: list[Optional[CamDesign]] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    artifacts: list[Path] = field(default_factory=list)


class _Runner:
    def __init__(self, threads: int) -> None:
        self._semaphore = asyncio.Semaphore(max(threads, 1))

    async def athread(self, func: Callable[..., T], *args: Any) -> T:
        async with self._semaphore:
            return await asyncio.to_thread(func, *args)


def _task_disk_grid(center: np.ndarray, radius: float, spacing: float) -> np.ndarray:
    reach = int(np.floor(radius / spacing))
    axis = spacing * np.arange(-reach, reach + 1)
    grid_y, grid_x = np.meshgrid(axis, axis, indexing="ij")
    offsets = np.column_stack([grid_x.ravel(), grid_y.ravel()])
    offsets = offsets[np.linalg.norm(offsets, axis=1) <= radius + 1e-12]
    return center + offsets


def _study_facts(config: StudyConfig, bundle: ReportBundle) -> dict[str, Any]:
    facts: dict[str, Any] = {
        "name": config.study.name,
        "layout": config.study.layout,
        "modes": [mode.label for mode in config.study.balancing_modes],
        "spiral_points": config.task.spiral_points,
    }
    if bundle.center is not None:
        facts["placement"] = {
            "x": float(bundle.center[0]),
            "y": float(bundle.center[1]),
            "gamma_deg": float(np.degrees(bundle.gamma)),
        }
    if config.cams.enabled:
        constants = config.cams.constants(config.study.layout)
        facts["cams"] = {name: list(value) if isinstance(value, tuple) else value for name, value in constants.items()}
        facts["cams"]["case"] = config.cams.case
        if bundle.designs:
            # the designs may have moved to another wire case or spring rate
            built = [design.geom if design is not None else None for design in bundle.designs]
            facts["cams"]["k"] = [geom.k if geom is not None else None for geom in built]
            facts["cams"]["case"] = [int(geom.case) if geom is not None else None for geom in built]
    return facts


async def _aworkspace(config: StudyConfig, bundle: ReportBundle, runner: _Runner, out: Path) -> None:
    geom = config.robot
    task = config.task.to_task()
    workspace = await runner.athread(
        lambda: scan_dexterous_workspace(
            geom,
            task,
            config.workspace.angular_resolution,
            config.workspace.radial_tolerance,
            config.workspace.max_radial_step,
            config.study.elbow_branch,
        )
    )
    bundle.workspace = await runner.athread(compute_sub_workspace, workspace, task, config.workspace.max_radial_step)
    bundle.artifacts += report.emit_boundaries(bundle.workspace, out, config.output.svg)


async def _aplace(config: StudyConfig, bundle: ReportBundle, runner: _Runner, out: Path, threads: int) -> None:
    if config.study.placement == "fixed":
        bundle.center = np.asarray(config.study.center, dtype=float)
        bundle.gamma = float(np.radians(config.study.gamma_deg))
        logger.info("using the configured task placement (%.4f, %.4f)", *bundle.center)
        return
    center, gamma, diagnostics = await runner.athread(
        lambda: optimal_task_location(
            bundle.workspace,
            config.robot,
            config.mass,
            config.task.to_task(),
            config.workspace.candidate_orientations,
            config.workspace.grid_spacing,
            config.workspace.placement_points,
            config.optimization.model_copy(update={"starts": 1}),
            threads,
        )
    )
    bundle.center, bundle.gamma, bundle.placement = center, gamma, diagnostics
    bundle.artifacts.append(report.emit_placement(diagnostics, out / "placement_candidates.csv"))


def _path_statics(config: StudyConfig, bundle: ReportBundle) -> PathStatics:
    if bundle.statics is None:
        path = spiral_array(bundle.center, config.task.to_task(bundle.gamma))
        bundle.statics = path_statics(path, config.robot, config.mass, config.study.elbow_branch)
        bundle.tables["Mode0"] = bundle.statics.tau_g
    return bundle.statics


async def _aoptimize(config: StudyConfig, bundle: ReportBundle, runner: _Runner, out: Path) -> None:
    geom, mass = config.robot, config.mass
    statics = await runner.athread(_path_statics, config, bundle)
    modes = config.study.balancing_modes

    def solve(mode: BalancingMode, warm: Optional[OptimizationResult] = None) -> OptimizationResult:
        warm_start = warm.springs if warm is not None else None
        return optimize_springs(statics, geom, mass, mode, options=config.optimization, warm_start=warm_start)

    # Mode 3 starts from the Mode 1 optimum, so it waits for it
    first = [mode for mode in modes if mode != BalancingMode.MODE_3]
    for mode, result in zip(first, await asyncio.gather(*(runner.athread(solve, mode) for mode in first))):
        bundle.results[mode] = result
    if BalancingMode.MODE_3 in modes:
        bundle.results[BalancingMode.MODE_3] = await runner.athread(
            solve, BalancingMode.MODE_3, bundle.results.get(BalancingMode.MODE_1)
        )

    results = [bundle.results[mode] for mode in modes]
    for result in results:
        bundle.tables[result.mode.label] = result.table
        bundle.e_tau[result.mode.label] = e_tau(result.table, statics.tau_g)

    points = _task_disk_grid(bundle.center, config.task.task_radius, config.workspace.contour_spacing)
    grids = await asyncio.gather(
        *(
            runner.athread(
                torque_ratio_grid,
                points,
                bundle.gamma,
                geom,
                mass,
                lambda s, springs=result.springs: s.actuator_torque(springs),
                config.study.elbow_branch,
            )
            for result in results
        )
    )
    for result, grid in zip(results, grids):
        bundle.grids[result.mode.label] = grid
        path = out / f"contour_mode{int(result.mode)}.csv"
        bundle.artifacts.append(report.emit_contour(grid, path, config.output.svg, f"{result.mode.label} / Mode0"))

    if BalancingMode.MODE_1 in bundle.results:
        reduction = await runner.athread(
            torque_reduction_map,
            bundle.workspace,
            geom,
            mass,
            bundle.results[BalancingMode.MODE_1].springs,
            bundle.gamma,
            config.workspace.contour_spacing,
        )
        bundle.artifacts.append(
            report.emit_contour(reduction.grid, out / "reduction_map_mode1.csv", config.output.svg, "Mode1 springs")
        )
    bundle.artifacts += report.emit_springs(results, out)


async def _acam(config: StudyConfig, bundle: ReportBundle, runner: _Runner, out: Path, threads: int) -> None:
    statics = await runner.athread(_path_statics, config, bundle)
    geoms = config.cams.leg_geometries(config.study.layout)
    alphas = np.column_stack([cam_angle(statics.q[:, leg], geoms[leg].q0) for leg in range(3)])
    bundle.designs = await runner.athread(
        design_cams,
        alphas,
        statics.tau_g,
        geoms,
        config.cams.order,
        config.cams.auto_k,
        config.cams.target_arm,
        threads,
    )
    table = cam_balanced_torque(statics, bundle.designs, config.cams.ideal_cams)
    bundle.tables["Cam"] = table
    bundle.e_tau["Cam"] = e_tau(table, statics.tau_g)

    points = _task_disk_grid(bundle.center, config.task.task_radius, config.workspace.contour_spacing)
    bundle.grids["Cam"] = await runner.athread(
        torque_ratio_grid,
        points,
        bundle.gamma,
        config.robot,
        config.mass,
        lambda s: cam_balanced_torque(s, bundle.designs, config.cams.ideal_cams, strict=False),
        config.study.elbow_branch,
    )
    bundle.artifacts.append(report.emit_contour(bundle.grids["Cam"], out / "contour_cam.csv", config.output.svg))
    bundle.artifacts += report.emit_cams(bundle.designs, out, config.output.svg)


async def arun_study(
    config: StudyConfig,
    out_dir: Optional[Path] = None,
    verb: str = "run",
    threads: int = THREADS,
) -> ReportBundle:
    """
    Run the stages of `verb` and write their artifacts. Files are written to a scratch directory and moved into
    `out_dir` only when every stage succeeded. A module error is re-raised as StageError naming the stage.
    """
    out_dir = Path(out_dir or config.output.directory)
    stages = VERB_STAGES[verb]
    runner = _Runner(threads)
    bundle = ReportBundle(out_dir=out_dir)

    with report.staged_output(out_dir) as scratch:
        for stage in stages:
            if stage == "cam" and not config.cams.enabled:
                logger.info("cams disabled, skipping the cam stage")
                continue
            started = time.perf_counter()
            print(f"\n\033[90m⚙️  STAGE: {stage.upper()}\033[0m", flush=True)
            logger.info("stage %s started", stage)
            try:
                if stage == "workspace":
                    await _aworkspace(config, bundle, runner, scratch)
                elif stage == "place":
                    await _aplace(config, bundle, runner, scratch, threads)
                elif stage == "optimize":
                    await _aoptimize(config, bundle, runner, scratch)
                else:
                    await _acam(config, bundle, runner, scratch, threads)
            except NumericError as exc:
                if isinstance(exc, StageError):
                    raise
                raise StageError(f"{stage} stage failed: {exc}", stage=stage, cause=type(exc).__name__) from exc
            bundle.timings[stage] = time.perf_counter() - started
            logger.info("stage %s finished in %.2f s", stage, bundle.timings[stage])

        if bundle.statics is not None:
            bundle.artifacts.append(
                report.emit_profiles(
                    bundle.statics.poses, bundle.tables, scratch / "torque_profiles.csv", config.output.svg
                )
            )
        if bundle.e_tau:
            bundle.artifacts.append(report.emit_e_tau(config.study.layout, bundle.e_tau, scratch / "e_tau.csv"))
        bundle.artifacts.append(
            report.emit_manifest(
                scratch / "manifest.json", config.sha256, _study_facts(config, bundle), bundle.timings
            )
        )
        if verb == "run":
            bundle.artifacts.append(report.emit_summary(scratch))

    bundle.artifacts = [out_dir / path.name for path in bundle.artifacts]
    return bundle
