"""
Closed-form inverse kinematics and the instantaneous-kinematics Jacobians of the planar 3RRR chain.

Every leg i closes the loop  t + R(gamma) p_i - L2 n_i - L1 s_i - b_i = 0,  with s_i = [cos q_i, sin q_i] along the
proximal (actuated) link and n_i = [cos phi_i, sin phi_i] along the distal link. phi_i is the absolute angle of the
distal link, so that d(n_i)/dt = phi_i' z0 x n_i. The batch functions work on stacks of poses shaped (N, 3) so a
whole spiral path is solved in one numpy call; the single-pose functions are thin views over them.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from rrr_balance_study.rrr_balance_study_config import SINGULARITY_THRESHOLD
from rrr_balance_study.utils import Singular, Unreachable, cross2, unit, wrap_angle

Point = tuple[float, float]

REACH_TOLERANCE = 1e-12


class ElbowBranch(IntEnum):
    """
    Elbow assembly mode of every leg. ELBOW_UP means s_i x n_i > 0.
    """

    ELBOW_UP = 1
    ELBOW_DOWN = -1


class RobotGeometry(BaseModel):
    """
    Base joints b_i (world frame), platform anchors p_i (platform frame) and the two link lengths.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    base_joints: tuple[Point, Point, Point]
    platform_anchors: tuple[Point, Point, Point]
    l1: float
    l2: float
    layout: Literal["WL", "NL"] = "WL"

    @field_validator("l1", "l2")
    @classmethod
    def _positive_length(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("link lengths must be positive")
        return value

    @model_validator(mode="after")
    def _distinct_points(self) -> "RobotGeometry":
        for name in ("base_joints", "platform_anchors"):
            points = np.asarray(getattr(self, name), dtype=float)
            for i in range(3):
                for j in range(i + 1, 3):
                    if np.allclose(points[i], points[j], rtol=0.0, atol=1e-12):
                        raise ValueError(f"{name}[{i}] and {name}[{j}] coincide")
        return self

    @property
    def b(self) -> np.ndarray:
        """Base joints as a (3, 2) array."""
        return np.asarray(self.base_joints, dtype=float)

    @property
    def p_t(self) -> np.ndarray:
        """Platform anchors (platform frame) as a (3, 2) array."""
        return np.asarray(self.platform_anchors, dtype=float)


def _circle_points(radius: float, degrees: tuple[float, float, float]) -> tuple[Point, Point, Point]:
    return tuple((radius * np.cos(np.radians(deg)), radius * np.sin(np.radians(deg))) for deg in degrees)


def default_geometry(layout: Literal["WL", "NL"] = "WL") -> RobotGeometry:
    """
    The shipped geometries: WL has its base joints on a 0.25 m circle, NL has them in a column to the left of the
    world origin. Both use 0.15 m links and anchors on a 0.05 m platform circle.
    """
    anchors = _circle_points(0.05, (90.0, 210.0, 330.0))
    if layout == "WL":
        base = _circle_points(0.25, (90.0, 210.0, 330.0))
    else:
        base = ((-0.12, 0.12), (-0.12, -0.12), (-0.12, 0.0))
    return RobotGeometry(base_joints=base, platform_anchors=anchors, l1=0.15, l2=0.15, layout=layout)


@dataclass(frozen=True)
class Pose:
    """
    Platform pose x = [t_x, t_y, gamma]; gamma is kept in (-pi, pi].
    """

    t: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(2))
        object.__setattr__(self, "gamma", wrap_angle(self.gamma))

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "Pose":
        return cls(t=np.asarray(x[:2], dtype=float), gamma=float(x[2]))

    def as_vector(self) -> np.ndarray:
        return np.array([self.t[0], self.t[1], self.gamma])

    @property
    def rotation(self) -> np.ndarray:
        """Rotation of the platform frame in the world frame."""
        c, s = np.cos(self.gamma), np.sin(self.gamma)
        return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class JointConfig:
    """
    Active joint angles q and absolute distal-link angles phi of the three legs.
    """

    q: np.ndarray
    phi: np.ndarray
    branch: ElbowBranch = ElbowBranch.ELBOW_UP
    s_hat: np.ndarray = field(init=False, repr=False)
    n_hat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(3))
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float).reshape(3))
        object.__setattr__(self, "s_hat", unit(self.q))
        object.__setattr__(self, "n_hat", unit(self.phi))

    def elbows(self, geom: RobotGeometry) -> np.ndarray:
        """Elbow points e_i = b_i + L1 s_i, shape (3, 2)."""
        return geom.b + geom.l1 * self.s_hat


@dataclass(frozen=True)
class JacobianBundle:
    """
    A x' = B q' and C x' = D phi' for the three legs, and the Jacobians derived from them. Arrays are (3, 3) for a
    single pose or (N, 3, 3) for a path.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    j_qx: np.ndarray
    j_phix: np.ndarray
    j_phiq: np.ndarray
    j_xq: np.ndarray

    def at(self, index: int) -> "JacobianBundle":
        """The bundle of a single path point."""
        return JacobianBundle(**{name: getattr(self, name)[index] for name in self.__dataclass_fields__})


def poses_array(poses: "list[Pose] | np.ndarray") -> np.ndarray:
    """
    Stack poses into an (N, 3) array of [t_x, t_y, gamma].
    """
    if isinstance(poses, np.ndarray):
        return np.atleast_2d(np.asarray(poses, dtype=float))
    return np.array([pose.as_vector() for pose in poses], dtype=float).reshape(-1, 3)


def rotated_anchors(poses: np.ndarray, geom: RobotGeometry) -> np.ndarray:
    """
    R(gamma) p_i for every pose, shape (N, 3, 2).
    """
    gamma = poses[:, 2][:, None]
    p_t = geom.p_t[None, :, :]
    cos_g, sin_g = np.cos(gamma), np.sin(gamma)
    return np.stack(
        [cos_g * p_t[..., 0] - sin_g * p_t[..., 1], sin_g * p_t[..., 0] + cos_g * p_t[..., 1]],
        axis=-1,
    )


def attach_points(poses: np.ndarray, geom: RobotGeometry) -> np.ndarray:
    """
    World-frame platform joints t + R(gamma) p_i, shape (N, 3, 2).
    """
    return poses[:, None, :2] + rotated_anchors(poses, geom)


def _leg_solutions(
    poses: np.ndarray, geom: RobotGeometry, branch: ElbowBranch
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    attach = attach_points(poses, geom)
    v = attach - geom.b[None, :, :]
    dist = np.linalg.norm(v, axis=-1)
    slack = REACH_TOLERANCE * (geom.l1 + geom.l2)
    reachable = (dist <= geom.l1 + geom.l2 + slack) & (dist >= abs(geom.l1 - geom.l2) - slack) & (dist > 0.0)

    safe_dist = np.where(dist > 0.0, dist, 1.0)
    cos_beta = np.clip((geom.l1**2 + safe_dist**2 - geom.l2**2) / (2.0 * geom.l1 * safe_dist), -1.0, 1.0)
    beta = np.arccos(cos_beta)
    q = wrap_angle(np.arctan2(v[..., 1], v[..., 0]) - int(branch) * beta)
    forearm = v - geom.l1 * unit(q)
    phi = np.arctan2(forearm[..., 1], forearm[..., 0])
    return np.atleast_2d(q), np.atleast_2d(phi), reachable


def reachable_mask(poses: np.ndarray, geom: RobotGeometry, branch: ElbowBranch = ElbowBranch.ELBOW_UP) -> np.ndarray:
    """
    Boolean (N,) mask of poses whose three legs are all inside their reach annulus.
    """
    _, _, reachable = _leg_solutions(poses_array(poses), geom, branch)
    return reachable.all(axis=1)


def inverse_kinematics_batch(
    poses: np.ndarray, geom: RobotGeometry, branch: ElbowBranch = ElbowBranch.ELBOW_UP
) -> tuple[np.ndarray, np.ndarray]:
    """
    Solve every leg of every pose. Returns q and phi, both (N, 3). Raises Unreachable for the first pose that has a
    leg outside its annulus.
    """
    poses = poses_array(poses)
    q, phi, reachable = _leg_solutions(poses, geom, branch)
    if not reachable.all():
        index, leg = np.argwhere(~reachable)[0]
        raise Unreachable(
            "platform anchor is outside the reach of its leg",
            leg=int(leg),
            path_index=int(index),
        )
    return q, phi


def inverse_kinematics(pose: Pose, geom: RobotGeometry, branch: ElbowBranch = ElbowBranch.ELBOW_UP) -> JointConfig:
    """
    Per-leg two-link inverse kinematics for one pose.
    """
    try:
        q, phi = inverse_kinematics_batch(poses_array([pose]), geom, branch)
    except Unreachable as exc:
        raise Unreachable(exc.message, leg=exc.details["leg"], pose=tuple(pose.as_vector())) from exc
    return JointConfig(q=q[0], phi=phi[0], branch=branch)


def _condition(matrices: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.linalg.cond(matrices)
    return np.where(np.isfinite(cond), cond, np.inf)


def _check_condition(name: str, matrices: np.ndarray, threshold: float) -> None:
    cond = _condition(matrices)
    bad = np.flatnonzero(cond > threshold)
    if bad.size:
        raise Singular(
            f"{name} is too close to a singularity",
            matrix=name,
            condition=float(cond[bad[0]]),
            path_index=int(bad[0]),
        )


def jacobians_batch(
    poses: np.ndarray,
    q: np.ndarray,
    phi: np.ndarray,
    geom: RobotGeometry,
    threshold: float = SINGULARITY_THRESHOLD,
) -> JacobianBundle:
    """
    A, B, C, D and J_qx = B^-1 A, J_phix = D^-1 C, J_phiq = J_phix J_qx^-1 (plus J_xq = J_qx^-1) for every pose.
    """
    poses = poses_array(poses)
    s_hat, n_hat = unit(q), unit(phi)
    rp = rotated_anchors(poses, geom)

    a = np.concatenate([n_hat, cross2(rp, n_hat)[..., None]], axis=-1)
    c = np.concatenate([s_hat, cross2(rp, s_hat)[..., None]], axis=-1)
    b_diag = geom.l1 * cross2(s_hat, n_hat)
    d_diag = geom.l2 * cross2(n_hat, s_hat)
    b = np.einsum("ni,ij->nij", b_diag, np.eye(3))
    d = np.einsum("ni,ij->nij", d_diag, np.eye(3))

    _check_condition("B", b, threshold)
    _check_condition("D", d, threshold)
    j_qx = a / b_diag[..., None]
    _check_condition("J_qx", j_qx, threshold)
    j_phix = c / d_diag[..., None]

    j_xq = np.linalg.inv(j_qx)
    j_phiq = np.swapaxes(np.linalg.solve(np.swapaxes(j_qx, -1, -2), np.swapaxes(j_phix, -1, -2)), -1, -2)
    return JacobianBundle(a=a, b=b, c=c, d=d, j_qx=j_qx, j_phix=j_phix, j_phiq=j_phiq, j_xq=j_xq)


def jacobians(
    pose: Pose, joints: JointConfig, geom: RobotGeometry, threshold: float = SINGULARITY_THRESHOLD
) -> JacobianBundle:
    """
    The Jacobian bundle of one configuration.
    """
    bundle = jacobians_batch(poses_array([pose]), joints.q[None], joints.phi[None], geom, threshold)
    return bundle.at(0)


def feasible_mask(
    poses: np.ndarray,
    geom: RobotGeometry,
    branch: ElbowBranch = ElbowBranch.ELBOW_UP,
    threshold: float = SINGULARITY_THRESHOLD,
) -> np.ndarray:
    """
    Boolean (N,) mask of poses that are reachable and whose B, D and J_qx stay below the condition threshold.
    """
    poses = poses_array(poses)
    q, phi, reachable = _leg_solutions(poses, geom, branch)
    ok = reachable.all(axis=1)
    if not ok.any():
        return ok
    s_hat, n_hat = unit(q[ok]), unit(phi[ok])
    rp = rotated_anchors(poses[ok], geom)
    b_diag = geom.l1 * cross2(s_hat, n_hat)
    d_diag = geom.l2 * cross2(n_hat, s_hat)
    a = np.concatenate([n_hat, cross2(rp, n_hat)[..., None]], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond_b = np.abs(b_diag).max(axis=1) / np.abs(b_diag).min(axis=1)
        cond_d = np.abs(d_diag).max(axis=1) / np.abs(d_diag).min(axis=1)
        j_qx = a / b_diag[..., None]
    cond_b = np.where(np.isfinite(cond_b), cond_b, np.inf)
    cond_d = np.where(np.isfinite(cond_d), cond_d, np.inf)
    finite = np.isfinite(j_qx).all(axis=(1, 2))
    cond_j = np.full(len(j_qx), np.inf)
    if finite.any():
        cond_j[finite] = _condition(j_qx[finite])
    good = (cond_b <= threshold) & (cond_d <= threshold) & (cond_j <= threshold)
    ok[np.flatnonzero(ok)] = good
    return ok


def forward_reconstruction(joints: JointConfig, geom: RobotGeometry) -> np.ndarray:
    """
    b_i + L1 s_i + L2 n_i for the three legs, shape (3, 2). Equals the platform joints of the pose that produced
    `joints`.
    """
    return geom.b + geom.l1 * joints.s_hat + geom.l2 * joints.n_hat
