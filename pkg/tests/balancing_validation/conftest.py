"""
Shared fixtures: the shipped geometries, a mass model, random well-conditioned poses and small task paths.
"""

from pathlib import Path

import numpy as np
import pytest

from rrr_balance_study.kinematics import RobotGeometry, default_geometry, feasible_mask
from rrr_balance_study.statics import MassModel, PathStatics, path_statics
from rrr_balance_study.wirecam import WireCamGeometry
from rrr_balance_study.workspace import TaskSpec, WorkspaceMap, scan_dexterous_workspace, spiral_array

CONFIGS_DIR = Path(__file__).resolve().parents[2] / "configs"

# conditioning cap for finite-difference checks; far stricter than the singularity threshold
WELL_CONDITIONED = 1e3


def random_poses(geom: RobotGeometry, count: int, seed: int, radius: float = 0.05) -> np.ndarray:
    """
    `count` well-conditioned poses within `radius` of the world origin and +-30 degrees of orientation.
    """
    rng = np.random.default_rng(seed)
    candidates = np.column_stack(
        [
            rng.uniform(-radius, radius, 20 * count),
            rng.uniform(-radius, radius, 20 * count),
            rng.uniform(-np.radians(30.0), np.radians(30.0), 20 * count),
        ]
    )
    candidates = candidates[np.hypot(candidates[:, 0], candidates[:, 1]) <= radius]
    good = candidates[feasible_mask(candidates, geom, threshold=WELL_CONDITIONED)]
    assert len(good) >= count, f"only {len(good)} well-conditioned poses found"
    return good[:count]


@pytest.fixture(params=["WL", "NL"])
def geometry(request) -> RobotGeometry:
    return default_geometry(request.param)


@pytest.fixture
def wl_geometry() -> RobotGeometry:
    return default_geometry("WL")


@pytest.fixture
def nl_geometry() -> RobotGeometry:
    return default_geometry("NL")


@pytest.fixture
def mass_model() -> MassModel:
    return MassModel()


@pytest.fixture
def small_task() -> TaskSpec:
    return TaskSpec(task_radius=0.03, spiral_points=80, spiral_turns=5)


@pytest.fixture
def wl_path_statics(wl_geometry, mass_model, small_task) -> PathStatics:
    return path_statics(spiral_array(np.zeros(2), small_task), wl_geometry, mass_model)


@pytest.fixture(scope="session")
def coarse_wl_workspace() -> WorkspaceMap:
    """
    The WL dexterous workspace at a coarse resolution (10 degree azimuth step, 1 mm radial tolerance).
    """
    return scan_dexterous_workspace(
        default_geometry("WL"),
        TaskSpec(),
        angular_resolution=float(np.radians(10.0)),
        radial_tolerance=1e-3,
        max_radial_step=0.01,
    )


@pytest.fixture
def make_poses():
    return random_poses


@pytest.fixture
def wire_geometry() -> WireCamGeometry:
    """
    A cam/idler pair with 0.25 m center distance, a 40 mm idler and a 100 N/m spring pre-extended by 0.2 m.
    """
    return WireCamGeometry(a=0.25, r=0.04, k=100.0, u_t=0.2, q0=0.0)
