"""
Forward model of a wire-wrapped cam: where the wire leaves the cam, how long it is, and the torque the spring puts
on the cam.

Frames: the cam turns about the origin of the cam-base frame and the idler (radius r) sits at d = (a, 0). A cam
profile is a polar curve g(phi~) in the cam frame. The cam rotation theta is measured in the winding sense of the
wire case, so the world angle of cam angle phi~ is phi = phi~ - kappa * theta and the wire winds onto the cam as
theta grows (dL/dtheta equals the moment arm, which is positive).
"""

import logging
import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import integrate, interpolate, optimize

from rrr_balance_study.utils import (
    MultipleTangents,
    NoTangent,
    QuadratureFailure,
    RangeExceeded,
    SlackWire,
    cross2,
    perp,
    unit,
)

logger = logging.getLogger(__name__)

TANGENCY_SCAN_POINTS = 181
QUADRATURE_TOLERANCE = 1e-10


class WireCase(IntEnum):
    """
    The four ways a straight wire can touch both the cam and the idler. Cases 1 and 3 touch the cam on the lower
    half (phi in [gamma_d - pi, gamma_d]), cases 2 and 4 on the upper half. Cases 1 and 2 are the open (external)
    tangents, 3 and 4 the crossed ones.
    """

    CASE_1 = 1
    CASE_2 = 2
    CASE_3 = 3
    CASE_4 = 4

    @property
    def sigma(self) -> int:
        """Sign of the idler radius in the tangency residual."""
        return -1 if self in (WireCase.CASE_1, WireCase.CASE_2) else 1

    @property
    def kappa(self) -> int:
        """+1 when the wire winds counter-clockwise around the cam profile (lower half), -1 otherwise."""
        return 1 if self in (WireCase.CASE_1, WireCase.CASE_3) else -1

    def world_domain(self, gamma_d: float = 0.0) -> tuple[float, float]:
        if self.kappa > 0:
            return gamma_d - np.pi, gamma_d
        return gamma_d, gamma_d + np.pi


class WireCamGeometry(BaseModel):
    """
    Cam/idler/spring constants of one leg: center distance a, idler radius r, spring rate k (N/m), spring
    pre-extension u_t, cam mounting angle q0, the angle at which the wire leaves the idler towards the spring and
    the wire case.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    a: float
    r: float
    k: float
    u_t: float
    q0: float
    exit_angle: float = float(np.pi / 2)
    case: WireCase = WireCase.CASE_1

    @model_validator(mode="after")
    def _check(self) -> "WireCamGeometry":
        if not self.a > self.r > 0:
            raise ValueError(f"need a > r > 0 (a={self.a}, r={self.r})")
        if not self.k > 0:
            raise ValueError(f"spring constant must be positive (k={self.k})")
        if self.u_t < 0:
            raise ValueError(f"pre-extension must be non-negative (u_t={self.u_t})")
        return self

    @property
    def d(self) -> np.ndarray:
        return np.array([self.a, 0.0])

    @property
    def gamma_d(self) -> float:
        return float(np.arctan2(self.d[1], self.d[0]))


@dataclass(frozen=True)
class CamProfile:
    """
    Cam radius g over cam-frame angle phi~, interpolated by a cubic spline whose derivative gives dg/dphi~.
    A closed profile spans exactly one turn and is periodic.
    """

    phis: np.ndarray
    radii: np.ndarray
    closed: bool = False
    _spline: interpolate.CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        phis = np.asarray(self.phis, dtype=float)
        radii = np.asarray(self.radii, dtype=float)
        if phis.shape != radii.shape or phis.ndim != 1 or len(phis) < 4:
            raise ValueError("a cam profile needs at least 4 (phi, g) samples")
        if not np.all(np.diff(phis) > 0):
            raise ValueError("profile angles must be strictly increasing")
        if not np.all(radii > 0):
            raise ValueError("profile radius must be positive")
        if self.closed and not np.isclose(phis[-1] - phis[0], 2.0 * np.pi, rtol=0.0, atol=1e-9):
            raise ValueError("a closed profile must span exactly one turn")
        object.__setattr__(self, "phis", phis)
        object.__setattr__(self, "radii", radii)
        if self.closed:
            radii = radii.copy()
            radii[-1] = radii[0]
        spline = interpolate.CubicSpline(phis, radii, bc_type="periodic" if self.closed else "not-a-knot")
        object.__setattr__(self, "_spline", spline)

    @classmethod
    def circle(cls, g0: float, samples: int = 721) -> "CamProfile":
        return cls(phis=np.linspace(-np.pi, np.pi, samples), radii=np.full(samples, float(g0)), closed=True)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.phis[0]), float(self.phis[-1])

    def _inside(self, phi):
        phi = np.asarray(phi, dtype=float)
        if self.closed:
            return self.phis[0] + np.mod(phi - self.phis[0], 2.0 * np.pi)
        lo, hi = self.domain
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(phi < lo - slack) or np.any(phi > hi + slack):
            raise RangeExceeded("angle outside the cam profile", domain=(lo, hi))
        return np.clip(phi, lo, hi)

    def g(self, phi):
        return self._spline(self._inside(phi))

    def dg(self, phi):
        return self._spline(self._inside(phi), 1)

    def arc_density(self, phi):
        """|dc/dphi~| = sqrt(g^2 + g'^2)."""
        return np.hypot(self.g(phi), self.dg(phi))

    def points(self, phi) -> np.ndarray:
        """Cam-frame profile points."""
        return self.g(phi)[..., None] * unit(phi)

    def polyline(self, samples: Optional[int] = None) -> np.ndarray:
        """
        Closed (x, y) outline for plotting. An open profile is closed through the cam axis.
        """
        phis = self.phis if samples is None else np.linspace(*self.domain, samples)
        outline = self.points(phis)
        if self.closed:
            return np.vstack([outline, outline[:1]])
        origin = np.zeros((1, 2))
        return np.vstack([origin, outline, origin])


@dataclass(frozen=True)
class Tangency:
    """
    The free wire span at one cam rotation: contact angles (cam frame and world), span length, unit direction of the
    wire from the cam towards the idler, the profile normal, the contact and idler points and the moment arm of
    the wire about the cam axis, positive in the winding sense.
    """

    phi_tilde: float
    phi: float
    span: float
    tangent: np.ndarray
    normal: np.ndarray
    contact: np.ndarray
    idler_point: np.ndarray
    moment_arm: float


def _frames(profile: CamProfile, phi_tilde, theta: float, case: WireCase):
    phi = np.asarray(phi_tilde, dtype=float) - case.kappa * theta
    radius = profile.g(phi_tilde)
    slope = profile.dg(phi_tilde)
    radial, across = unit(phi), perp(unit(phi))
    contact = radius[..., None] * radial
    tangent = (slope[..., None] * radial + radius[..., None] * across) / np.hypot(radius, slope)[..., None]
    return phi, contact, tangent, perp(tangent)


def tangency_residual(profile: CamProfile, phi_tilde, theta: float, geom: WireCamGeometry, case: WireCase):
    """
    h(phi~) = n^T (d - c) + sigma r; zero where the profile tangent line also touches the idler.
    """
    _, contact, _, normal = _frames(profile, phi_tilde, theta, case)
    return np.sum(normal * (geom.d - contact), axis=-1) + case.sigma * geom.r


def _search_interval(profile: CamProfile, theta: float, geom: WireCamGeometry, case: WireCase) -> tuple[float, float]:
    lo, hi = (bound + case.kappa * theta for bound in case.world_domain(geom.gamma_d))
    if profile.closed:
        return lo, hi
    p_lo, p_hi = profile.domain
    shift = 2.0 * np.pi * np.round((0.5 * (p_lo + p_hi) - 0.5 * (lo + hi)) / (2.0 * np.pi))
    lo, hi = max(lo + shift, p_lo), min(hi + shift, p_hi)
    if not lo < hi:
        raise NoTangent("the profile does not reach into the wire case domain", theta=theta, case=int(case))
    return lo, hi


def wire_tangency(
    profile: CamProfile,
    theta: float,
    geom: WireCamGeometry,
    case: Optional[WireCase] = None,
    scan_points: int = TANGENCY_SCAN_POINTS,
) -> Tangency:
    """
    Find the single profile angle whose tangent line also touches the idler. The residual is scanned over the case
    domain and each sign change is refined with Brent's method.
    """
    case = geom.case if case is None else WireCase(case)
    lo, hi = _search_interval(profile, theta, geom, case)
    grid = np.linspace(lo, hi, scan_points)
    values = tangency_residual(profile, grid, theta, geom, case)

    def residual(phi_tilde: float) -> float:
        return float(tangency_residual(profile, phi_tilde, theta, geom, case))

    roots = [float(grid[j]) for j in np.flatnonzero(values == 0.0)]
    for j in np.flatnonzero(values[:-1] * values[1:] < 0.0):
        roots.append(optimize.brentq(residual, grid[j], grid[j + 1], xtol=1e-15, maxiter=200))
    if not roots:
        raise NoTangent("no wire tangent to both cam and idler", theta=theta, case=int(case))
    if len(roots) > 1:
        raise MultipleTangents("profile is locally non-convex", theta=theta, roots=tuple(sorted(roots)))

    phi_tilde = roots[0]
    phi, contact, tangent, normal = _frames(profile, phi_tilde, theta, case)
    offset = geom.d - contact
    along = float(tangent @ offset)
    return Tangency(
        phi_tilde=phi_tilde,
        phi=float(phi),
        span=abs(along),
        tangent=np.sign(along) * tangent,
        normal=normal,
        contact=contact,
        idler_point=geom.d + case.sigma * geom.r * normal,
        moment_arm=float(case.kappa * cross2(contact, tangent)),
    )


def idler_wrap(tangency: Tangency, geom: WireCamGeometry) -> float:
    """
    Arc the wire wraps on the idler, from the tangency point to the exit angle, in the wire's travel sense.
    """
    spoke = tangency.idler_point - geom.d
    beta = np.arctan2(spoke[1], spoke[0])
    travel = np.sign(cross2(spoke, tangency.tangent)) or 1.0
    return float(geom.r * np.mod(travel * (geom.exit_angle - beta), 2.0 * np.pi))


def default_attach_angle(profile: CamProfile, case: WireCase) -> float:
    """The wire end is fixed at the profile end it winds away from."""
    lo, hi = profile.domain
    return lo if case.kappa > 0 else hi


def wire_state(
    profile: CamProfile,
    theta: float,
    geom: WireCamGeometry,
    case: Optional[WireCase] = None,
    attach_angle: Optional[float] = None,
) -> tuple[Tangency, float]:
    """
    The tangency and the total wire length L = span + idler wrap + wrapped cam arc.
    """
    case = geom.case if case is None else WireCase(case)
    tangency = wire_tangency(profile, theta, geom, case)
    attach = default_attach_angle(profile, case) if attach_angle is None else float(attach_angle)
    profile.g(attach)  # range check
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        arc, error = integrate.quad(
            profile.arc_density, attach, tangency.phi_tilde, epsabs=1e-12, epsrel=1e-12, limit=500
        )
    notes = [str(item.message) for item in caught if issubclass(item.category, integrate.IntegrationWarning)]
    if error > QUADRATURE_TOLERANCE:
        raise QuadratureFailure("wrapped arc integral did not converge", theta=theta, error=error, warnings=notes)
    for note in notes:
        logger.debug("wrapped arc integral at theta=%.6g within tolerance (error %.3g): %s", theta, error, note)
    for item in caught:
        if not issubclass(item.category, integrate.IntegrationWarning):
            warnings.warn(item.message, stacklevel=2)
    length = tangency.span + idler_wrap(tangency, geom) + case.kappa * arc
    return tangency, float(length)


def wire_length(
    profile: CamProfile,
    theta: float,
    geom: WireCamGeometry,
    case: Optional[WireCase] = None,
    attach_angle: Optional[float] = None,
) -> float:
    return wire_state(profile, theta, geom, case, attach_angle)[1]


def cam_torque_forward(
    profile: CamProfile,
    theta: float,
    geom: WireCamGeometry,
    l_ref: float,
    case: Optional[WireCase] = None,
    attach_angle: Optional[float] = None,
) -> float:
    """
    Spring torque on the cam, tau = k (u_t + L - L_ref) dL/dtheta, with dL/dtheta the wire's moment arm.
    `l_ref` is the wire length at which the spring has its pre-extension u_t.
    """
    tangency, length = wire_state(profile, theta, geom, case, attach_angle)
    extension = geom.u_t + length - l_ref
    if extension < 0.0:
        raise SlackWire("spring would be shorter than its natural length", theta=theta, extension=extension)
    return float(geom.k * extension * tangency.moment_arm)
