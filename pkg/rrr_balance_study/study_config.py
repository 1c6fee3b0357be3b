"""
Study configuration: a TOML document with one table per pipeline concern, validated section by section with
pydantic. Angles are given in degrees in the file and handed to the pipeline in radians.
"""

import hashlib
import logging
import re
import tomllib
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from rrr_balance_study.kinematics import ElbowBranch, RobotGeometry, default_geometry
from rrr_balance_study.spring_opt import BalancingMode, SolverOptions
from rrr_balance_study.statics import MassModel
from rrr_balance_study.utils import ConfigError
from rrr_balance_study.wirecam.profile import WireCamGeometry, WireCase
from rrr_balance_study.workspace import TaskSpec

logger = logging.getLogger(__name__)

Triple = tuple[float, float, float]
Point = tuple[float, float]

SECTIONS = ("study", "geometry", "mass", "task", "workspace", "optimization", "cams", "output")

# published cam design constants per layout
CAM_DEFAULTS = {
    "WL": {"q0": (2.1567, -1.5669, -0.1566), "a": 0.25, "u_t": (0.05, 0.065, 0.05), "r": 0.04},
    "NL": {"q0": (-0.2287, 0.2582, 0.0019), "a": 0.0414, "u_t": (0.06, 0.05, 0.06), "r": 0.04},
}


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class StudySection(_Section):
    name: str = "study"
    layout: Literal["WL", "NL"] = "WL"
    branch: Literal["up", "down"] = "up"
    modes: tuple[int, ...] = (1, 2, 3)
    placement: Literal["optimize", "fixed"] = "optimize"
    center: Point = (0.0, 0.0)
    gamma_deg: float = 0.0

    @field_validator("modes")
    @classmethod
    def _known_modes(cls, value):
        if not value or any(mode not in (1, 2, 3) for mode in value) or len(set(value)) != len(value):
            raise ValueError("modes must be distinct values among 1, 2, 3")
        return value

    @property
    def elbow_branch(self) -> ElbowBranch:
        return ElbowBranch.ELBOW_UP if self.branch == "up" else ElbowBranch.ELBOW_DOWN

    @property
    def balancing_modes(self) -> list[BalancingMode]:
        return [BalancingMode(mode) for mode in sorted(self.modes)]


class GeometrySection(_Section):
    base_joints: Optional[tuple[Point, Point, Point]] = None
    platform_anchors: Optional[tuple[Point, Point, Point]] = None
    l1: Optional[float] = None
    l2: Optional[float] = None

    def to_geometry(self, layout: str) -> RobotGeometry:
        defaults = default_geometry(layout)
        overrides = {name: value for name, value in self.model_dump().items() if value is not None}
        return RobotGeometry.model_validate({**defaults.model_dump(), **overrides, "layout": layout})


class TaskSection(_Section):
    task_radius: float = 0.05
    orientation_range_deg: float = 30.0
    orientation_step_deg: float = 5.0
    spiral_points: int = 1500
    spiral_turns: int = 12

    def to_task(self, gamma: float = 0.0, spiral_points: Optional[int] = None) -> TaskSpec:
        return TaskSpec(
            task_radius=self.task_radius,
            orientation_range=float(np.radians(self.orientation_range_deg)),
            orientation_step=float(np.radians(self.orientation_step_deg)),
            spiral_points=self.spiral_points if spiral_points is None else spiral_points,
            spiral_turns=self.spiral_turns,
            gamma=gamma,
        )


class WorkspaceSection(_Section):
    angular_resolution_deg: float = 1.0
    radial_tolerance: float = 1e-4
    max_radial_step: float = 0.005
    grid_spacing: float = 0.01
    placement_points: int = 300
    candidate_orientations_deg: tuple[float, ...] = (-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0)
    contour_spacing: float = 0.005

    @field_validator(
        "angular_resolution_deg", "radial_tolerance", "max_radial_step", "grid_spacing", "contour_spacing"
    )
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be positive")
        return value

    @field_validator("placement_points")
    @classmethod
    def _enough_points(cls, value: int) -> int:
        if value < 2:
            raise ValueError("a spiral needs at least 2 points")
        return value

    @property
    def angular_resolution(self) -> float:
        return float(np.radians(self.angular_resolution_deg))

    @property
    def candidate_orientations(self) -> np.ndarray:
        return np.radians(np.asarray(self.candidate_orientations_deg, dtype=float))


class CamsSection(_Section):
    enabled: bool = True
    case: int = 1
    order: int = 4
    ideal_cams: bool = False
    k: Union[float, Literal["auto"]] = "auto"
    target_arm: Optional[float] = None
    exit_angle_deg: float = 90.0
    a: Optional[float] = None
    r: Optional[float] = None
    u_t: Optional[Triple] = None
    q0: Optional[Triple] = None

    @field_validator("case")
    @classmethod
    def _case(cls, value: int) -> int:
        if value not in (1, 2, 3, 4):
            raise ValueError("wire case must be 1, 2, 3 or 4")
        return value

    @field_validator("order")
    @classmethod
    def _order(cls, value: int) -> int:
        if value < 0:
            raise ValueError("modal order must be non-negative")
        return value

    def constants(self, layout: str) -> dict[str, Any]:
        """The cam design constants actually used: configured values over the published ones."""
        values = dict(CAM_DEFAULTS[layout])
        for name in ("a", "r", "u_t", "q0"):
            if getattr(self, name) is not None:
                values[name] = getattr(self, name)
        return values

    @property
    def auto_k(self) -> bool:
        return self.k == "auto"

    def leg_geometries(self, layout: str) -> list[WireCamGeometry]:
        constants = self.constants(layout)
        # a placeholder rate is replaced by the sizing step when k is "auto"
        k = 1.0 if self.auto_k else float(self.k)
        return [
            WireCamGeometry(
                a=constants["a"],
                r=constants["r"],
                k=k,
                u_t=constants["u_t"][leg],
                q0=constants["q0"][leg],
                exit_angle=float(np.radians(self.exit_angle_deg)),
                case=WireCase(self.case),
            )
            for leg in range(3)
        ]


class OutputSection(_Section):
    directory: str = "out"
    svg: bool = False


SECTION_MODELS: dict[str, type[BaseModel]] = {
    "study": StudySection,
    "geometry": GeometrySection,
    "mass": MassModel,
    "task": TaskSection,
    "workspace": WorkspaceSection,
    "optimization": SolverOptions,
    "cams": CamsSection,
    "output": OutputSection,
}


class StudyConfig(BaseModel):
    """
    A validated study. `text` is the document it came from; its SHA-256 identifies the run in the manifest.
    """

    model_config = ConfigDict(frozen=True)

    study: StudySection = StudySection()
    geometry: GeometrySection = GeometrySection()
    mass: MassModel = MassModel()
    task: TaskSection = TaskSection()
    workspace: WorkspaceSection = WorkspaceSection()
    optimization: SolverOptions = SolverOptions()
    cams: CamsSection = CamsSection()
    output: OutputSection = OutputSection()
    text: str = ""
    source: str = "<defaults>"

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    @property
    def robot(self) -> RobotGeometry:
        return self.geometry.to_geometry(self.study.layout)


def _line_of(text: str, section: str, key: Optional[str] = None) -> Optional[int]:
    """
    1-based line of `[section]` (or of `key = ...` inside it) in the TOML text.
    """
    current = None
    header = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]")
    assignment = re.compile(r"^\s*([A-Za-z0-9_-]+)\s*=")
    for number, line in enumerate(text.splitlines(), start=1):
        match = header.match(line)
        if match:
            current = match.group(1)
            if key is None and current == section:
                return number
            continue
        match = assignment.match(line)
        if match and current == section and match.group(1) == key:
            return number
    return None


def _validate_section(name: str, raw: Any, text: str, strict: bool) -> BaseModel:
    model = SECTION_MODELS[name]
    if not isinstance(raw, dict):
        raise ConfigError("section must be a table", section=name, line=_line_of(text, name))
    unknown = [key for key in raw if key not in model.model_fields]
    for key in unknown:
        if strict:
            raise ConfigError("unknown key", section=name, key=key, line=_line_of(text, name, key))
        logger.warning("ignoring unknown key %s.%s", name, key)
    known = {key: value for key, value in raw.items() if key not in unknown}
    try:
        return model.model_validate(known)
    except ValidationError as exc:
        error = exc.errors()[0]
        key = str(error["loc"][0]) if error["loc"] else None
        raise ConfigError(
            error["msg"],
            section=name,
            key=key,
            line=_line_of(text, name, key) if key else _line_of(text, name),
        ) from exc


def parse_study_config(text: str, strict: bool = False, source: str = "<string>") -> StudyConfig:
    """
    Parse and validate a study document. In strict mode every section must be present and unknown sections or
    keys are errors; otherwise missing sections take their defaults and unknown entries are ignored, both with a
    warning.
    """
    try:
        document = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}", source=source) from exc

    for name in document:
        if name not in SECTIONS:
            if strict:
                raise ConfigError("unknown section", section=name, line=_line_of(text, name), source=source)
            logger.warning("ignoring unknown section [%s] in %s", name, source)

    sections = {}
    for name in SECTIONS:
        if name not in document:
            if strict:
                raise ConfigError("missing section", section=name, source=source)
            logger.warning("section [%s] missing from %s, using defaults", name, source)
            continue
        sections[name] = _validate_section(name, document[name], text, strict)

    config = StudyConfig(**sections, text=text, source=source)
    try:
        config.robot  # pylint: disable=pointless-statement
        if config.cams.enabled:
            config.cams.leg_geometries(config.study.layout)
    except ValidationError as exc:
        section = "cams" if "WireCamGeometry" in str(exc.title) else "geometry"
        raise ConfigError(
            exc.errors()[0]["msg"], section=section, line=_line_of(text, section), source=source
        ) from exc
    return config


def load_study_config(path: Union[str, Path], strict: bool = False) -> StudyConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from exc
    return parse_study_config(text, strict=strict, source=str(path))
