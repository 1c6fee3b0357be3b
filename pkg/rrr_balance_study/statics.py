"""
Gravitational and elastic potential energy, and the actuator torques that follow from virtual work.

Sign convention: the returned actuator torque is the torque the motors must apply to hold the robot still,
tau = tau_g + tau_e + J_qx^-T w_e, where w_e is the wrench the environment applies to the platform (the corrected
reading of the work term). A perfectly balanced robot has tau = 0 everywhere, which is the same as V_g + V_e being
constant.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from rrr_balance_study.kinematics import (
    ElbowBranch,
    JacobianBundle,
    JointConfig,
    Pose,
    RobotGeometry,
    inverse_kinematics_batch,
    jacobians_batch,
    poses_array,
)
from rrr_balance_study.rrr_balance_study_config import SINGULARITY_THRESHOLD
from rrr_balance_study.utils import NumericError, perp, unit, wrap_angle

Triple = tuple[float, float, float]


class MassModel(BaseModel):
    """
    Slender-rod mass model: proximal/distal link masses per leg, the center-of-mass position of each link as a
    fraction of its length, the platform mass (at the platform center) and in-plane gravity.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    link_masses: tuple[tuple[float, float], tuple[float, float], tuple[float, float]] = (
        (0.10, 0.08),
        (0.10, 0.08),
        (0.10, 0.08),
    )
    com_fractions: tuple[float, float] = (0.5, 0.5)
    platform_mass: float = 0.20
    gravity: float = 9.81
    gravity_direction: tuple[float, float] = (0.0, -1.0)

    @field_validator("link_masses")
    @classmethod
    def _non_negative_links(cls, value):
        if any(m < 0 for pair in value for m in pair):
            raise ValueError("link masses must be non-negative")
        return value

    @field_validator("platform_mass", "gravity")
    @classmethod
    def _non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("must be non-negative")
        return value

    @field_validator("com_fractions")
    @classmethod
    def _fractions(cls, value):
        if any(not 0.0 <= f <= 1.0 for f in value):
            raise ValueError("center-of-mass fractions must lie in [0, 1]")
        return value

    @field_validator("gravity_direction")
    @classmethod
    def _unit_direction(cls, value):
        norm = float(np.hypot(*value))
        if norm == 0.0:
            raise ValueError("gravity direction must be non-zero")
        return (value[0] / norm, value[1] / norm)

    @property
    def up(self) -> np.ndarray:
        """Unit vector against gravity; heights are measured along it."""
        return -np.asarray(self.gravity_direction, dtype=float)

    @property
    def proximal(self) -> np.ndarray:
        return np.array([pair[0] for pair in self.link_masses], dtype=float)

    @property
    def distal(self) -> np.ndarray:
        return np.array([pair[1] for pair in self.link_masses], dtype=float)

    @classmethod
    def massless(cls) -> "MassModel":
        return cls(link_masses=((0.0, 0.0),) * 3, platform_mass=0.0)


class SpringSet(BaseModel):
    """
    Torsional springs at the active joints (k_q, q_f) and at the elbows (k_phi, phi_f). Zero stiffness means no
    spring at that joint.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    k_q: Triple = (0.0, 0.0, 0.0)
    k_phi: Triple = (0.0, 0.0, 0.0)
    q_f: Triple = (0.0, 0.0, 0.0)
    phi_f: Triple = (0.0, 0.0, 0.0)

    @field_validator("k_q", "k_phi")
    @classmethod
    def _non_negative(cls, value):
        if any(k < 0 for k in value):
            raise ValueError("spring stiffness must be non-negative")
        return value

    @property
    def mode(self) -> int:
        """
        Balancing mode implied by which stiffnesses are non-zero: 0 none, 1 active only, 2 elbows only, 3 both.
        """
        active = any(k != 0.0 for k in self.k_q)
        passive = any(k != 0.0 for k in self.k_phi)
        return int(active) + 2 * int(passive)

    def q_deflection(self, q: np.ndarray) -> np.ndarray:
        return wrap_angle(np.asarray(q) - np.asarray(self.q_f))

    def phi_deflection(self, phi: np.ndarray) -> np.ndarray:
        return wrap_angle(np.asarray(phi) - np.asarray(self.phi_f))


@dataclass(frozen=True)
class Wrench:
    """
    Planar force and moment about z applied by the environment to the platform.
    """

    f: np.ndarray
    m: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float).reshape(2))
        object.__setattr__(self, "m", float(self.m))
        if not (np.isfinite(self.f).all() and np.isfinite(self.m)):
            raise NumericError("wrench must be finite", f=tuple(self.f), m=self.m)

    @classmethod
    def zero(cls) -> "Wrench":
        return cls(f=np.zeros(2), m=0.0)

    def as_vector(self) -> np.ndarray:
        return np.array([self.f[0], self.f[1], self.m])


def gravity_potential_batch(
    poses: np.ndarray, q: np.ndarray, phi: np.ndarray, geom: RobotGeometry, mass: MassModel
) -> np.ndarray:
    """
    V_g for every pose, shape (N,).
    """
    poses = poses_array(poses)
    up = mass.up
    frac_prox, frac_dist = mass.com_fractions
    s_hat, n_hat = unit(q), unit(phi)
    prox_com = geom.b[None] + frac_prox * geom.l1 * s_hat
    dist_com = geom.b[None] + geom.l1 * s_hat + frac_dist * geom.l2 * n_hat
    links = (prox_com @ up) @ mass.proximal + (dist_com @ up) @ mass.distal
    return mass.gravity * (links + mass.platform_mass * (poses[:, :2] @ up))


def gravity_potential(pose: Pose, joints: JointConfig, geom: RobotGeometry, mass: MassModel) -> float:
    """
    Potential energy of gravity, heights measured against the gravity direction.
    """
    return float(gravity_potential_batch(poses_array([pose]), joints.q[None], joints.phi[None], geom, mass)[0])


def gravity_partials(
    q: np.ndarray, phi: np.ndarray, geom: RobotGeometry, mass: MassModel
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    dV_g/dq, dV_g/dphi (both (N, 3)) and dV_g/dx ((N, 3)) with q, phi and x treated as independent.
    """
    q, phi = np.atleast_2d(q), np.atleast_2d(phi)
    up = mass.up
    frac_prox, frac_dist = mass.com_fractions
    lever_q = mass.gravity * geom.l1 * (frac_prox * mass.proximal + mass.distal)
    lever_phi = mass.gravity * geom.l2 * frac_dist * mass.distal
    d_q = lever_q * (perp(unit(q)) @ up)
    d_phi = lever_phi * (perp(unit(phi)) @ up)
    d_x = np.zeros((len(q), 3))
    d_x[:, :2] = mass.platform_mass * mass.gravity * up
    return d_q, d_phi, d_x


def _transpose_times(jacobian: np.ndarray, vector: np.ndarray) -> np.ndarray:
    return np.einsum("...ji,...j->...i", jacobian, vector)


def gravity_torque_batch(
    q: np.ndarray, phi: np.ndarray, jac: JacobianBundle, geom: RobotGeometry, mass: MassModel
) -> np.ndarray:
    """
    tau_g = dV/dq + J_phiq^T dV/dphi + J_xq^T dV/dx for every pose, shape (N, 3).
    """
    d_q, d_phi, d_x = gravity_partials(q, phi, geom, mass)
    return d_q + _transpose_times(jac.j_phiq, d_phi) + _transpose_times(jac.j_xq, d_x)


def gravity_torque(
    pose: Pose, joints: JointConfig, jac: JacobianBundle, geom: RobotGeometry, mass: MassModel
) -> np.ndarray:
    """
    Actuator torque needed to hold the robot against gravity alone.
    """
    del pose  # the platform term only needs J_xq
    return gravity_torque_batch(joints.q[None], joints.phi[None], _stacked(jac), geom, mass)[0]


def _stacked(jac: JacobianBundle) -> JacobianBundle:
    if jac.j_qx.ndim == 3:
        return jac
    return JacobianBundle(**{name: getattr(jac, name)[None] for name in jac.__dataclass_fields__})


def elastic_energy_batch(q: np.ndarray, phi: np.ndarray, springs: SpringSet) -> np.ndarray:
    q_tilde = springs.q_deflection(q)
    phi_tilde = springs.phi_deflection(phi)
    return 0.5 * (q_tilde**2 @ np.asarray(springs.k_q) + phi_tilde**2 @ np.asarray(springs.k_phi))


def elastic_energy(joints: JointConfig, springs: SpringSet) -> float:
    """
    V_e = 1/2 (q~^T K_q q~ + phi~^T K_phi phi~).
    """
    return float(elastic_energy_batch(joints.q[None], joints.phi[None], springs)[0])


def elastic_torque_batch(q: np.ndarray, phi: np.ndarray, springs: SpringSet, j_phiq: np.ndarray) -> np.ndarray:
    """
    tau_e = K_q q~ + J_phiq^T K_phi phi~ for every pose, shape (N, 3).
    """
    q_tilde = springs.q_deflection(np.atleast_2d(q))
    phi_tilde = springs.phi_deflection(np.atleast_2d(phi))
    tau = np.asarray(springs.k_q) * q_tilde
    if any(springs.k_phi):
        tau = tau + _transpose_times(j_phiq, np.asarray(springs.k_phi) * phi_tilde)
    return tau


def elastic_torque(joints: JointConfig, springs: SpringSet, jac: JacobianBundle) -> np.ndarray:
    """
    Actuator torque needed to hold the springs' deflection.
    """
    return elastic_torque_batch(joints.q[None], joints.phi[None], springs, _stacked(jac).j_phiq)[0]


def wrench_torque_batch(j_xq: np.ndarray, wrench: Wrench) -> np.ndarray:
    return _transpose_times(j_xq, np.broadcast_to(wrench.as_vector(), j_xq.shape[:-1]))


def actuator_torque(
    pose: Pose,
    joints: JointConfig,
    jac: JacobianBundle,
    geom: RobotGeometry,
    mass: MassModel,
    springs: SpringSet,
    wrench: Optional[Wrench] = None,
) -> np.ndarray:
    """
    tau = tau_g + J_phiq^T K_phi phi~ + K_q q~ + J_qx^-T w_e.
    """
    tau = gravity_torque(pose, joints, jac, geom, mass) + elastic_torque(joints, springs, jac)
    if wrench is not None:
        tau = tau + wrench_torque_batch(_stacked(jac).j_xq, wrench)[0]
    return tau


def total_potential(
    pose: Pose, joints: JointConfig, geom: RobotGeometry, mass: MassModel, springs: SpringSet
) -> float:
    """
    V_g + V_e.
    """
    return gravity_potential(pose, joints, geom, mass) + elastic_energy(joints, springs)


@dataclass(frozen=True)
class PathStatics:
    """
    Kinematics and gravity torque of a whole path, computed once. Spring designs only change the elastic term, so
    evaluating a SpringSet on a path costs a few vectorised numpy operations.
    """

    poses: np.ndarray
    q: np.ndarray
    phi: np.ndarray
    jac: JacobianBundle
    tau_g: np.ndarray

    def __len__(self) -> int:
        return len(self.poses)

    def elastic_torque(self, springs: SpringSet) -> np.ndarray:
        return elastic_torque_batch(self.q, self.phi, springs, self.jac.j_phiq)

    def actuator_torque(self, springs: Optional[SpringSet] = None, wrench: Optional[Wrench] = None) -> np.ndarray:
        tau = self.tau_g.copy()
        if springs is not None:
            tau += self.elastic_torque(springs)
        if wrench is not None:
            tau += wrench_torque_batch(self.jac.j_xq, wrench)
        return tau

    def gravity_potential(self, geom: RobotGeometry, mass: MassModel) -> np.ndarray:
        return gravity_potential_batch(self.poses, self.q, self.phi, geom, mass)


def path_statics(
    path: "list[Pose] | np.ndarray",
    geom: RobotGeometry,
    mass: MassModel,
    branch: ElbowBranch = ElbowBranch.ELBOW_UP,
    threshold: float = SINGULARITY_THRESHOLD,
) -> PathStatics:
    """
    Solve IK and Jacobians along a path and record the gravity torque at every point. Unreachable and Singular
    errors carry the offending path index.
    """
    poses = poses_array(path)
    q, phi = inverse_kinematics_batch(poses, geom, branch)
    jac = jacobians_batch(poses, q, phi, geom, threshold)
    tau_g = gravity_torque_batch(q, phi, jac, geom, mass)
    return PathStatics(poses=poses, q=q, phi=phi, jac=jac, tau_g=tau_g)
