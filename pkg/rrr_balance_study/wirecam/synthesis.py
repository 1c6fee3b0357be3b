"""
Cam design for one leg: fit the joint torque along the task as a polynomial in the cam angle, turn it into the
torque the cam has to produce, synthesize a profile that produces it and verify the profile with the forward wire
model.

Synthesis inverts the forward model. The spring energy has to follow E(theta) = 1/2 k u_t^2 + int desired, so the
spring extension is u = sqrt(2E/k) and the moment arm is m = desired / (k u). At every rotation the free wire is
the line at distance m from the cam axis that touches the idler on the side the wire case asks for; in the cam
frame these lines form a one-parameter family and the profile is their envelope.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from numpy.polynomial import Polynomial
from scipy import interpolate, optimize

from rrr_balance_study.kinematics import ElbowBranch, Pose, RobotGeometry
from rrr_balance_study.rrr_balance_study_config import THREADS
from rrr_balance_study.spring_opt import e_tau
from rrr_balance_study.statics import MassModel, PathStatics, path_statics
from rrr_balance_study.utils import (
    GeometryInfeasible,
    InfeasibleTorque,
    NumericError,
    RangeExceeded,
    RankDeficient,
    SynthesisDiverged,
    parallel_map,
    perp,
    unit,
    wrap_angle,
)
from rrr_balance_study.wirecam.profile import CamProfile, WireCamGeometry, WireCase, cam_torque_forward, wire_length

logger = logging.getLogger(__name__)

PROFILE_SAMPLES = 721
VERIFY_SAMPLES = 101
RANGE_PADDING = 0.05
MIN_PADDING = 2
ROUND_TRIP_TOLERANCE = 0.005
# relative torque below which an unstretched spring counts as starting unloaded
ZERO_TORQUE = 1e-9
# auto-sized rates tried per wire case: k, 2k, ..., 2^RATE_STEPS k
RATE_STEPS = 8


def cam_angle(q, q0):
    """
    alpha = pi/2 - (q - q0), with q - q0 wrapped to (-pi, pi].
    """
    return np.pi / 2 - wrap_angle(np.asarray(q, dtype=float) - q0)


@dataclass(frozen=True)
class ModalTorque:
    """
    tau_est(alpha) = sum_i b_i alpha^i.
    """

    coeffs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).reshape(-1))

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def polynomial(self) -> Polynomial:
        return Polynomial(self.coeffs)

    def __call__(self, alpha):
        return self.polynomial(alpha)


def fit_modal_torque(alphas: np.ndarray, torques: np.ndarray, order: int = 4) -> ModalTorque:
    """
    Least-squares polynomial fit through the pseudo-inverse of the Vandermonde matrix.
    """
    alphas = np.asarray(alphas, dtype=float).reshape(-1)
    torques = np.asarray(torques, dtype=float).reshape(-1)
    if order < 0:
        raise ValueError("order must be non-negative")
    if alphas.shape != torques.shape:
        raise ValueError(f"{len(alphas)} angles but {len(torques)} torques")
    vander = np.vander(alphas, order + 1, increasing=True)
    rank = int(np.linalg.matrix_rank(vander)) if len(alphas) else 0
    if rank < order + 1:
        raise RankDeficient("too few distinct cam angles for the modal order", rank=rank, order=order)
    return ModalTorque(coeffs=np.linalg.pinv(vander) @ torques)


def desired_cam_torque(fit: ModalTorque) -> Polynomial:
    """
    g(alpha) = -tau_est(alpha): the torque the cam must add at the joint to cancel the fitted load.
    """
    return -fit.polynomial


@dataclass(frozen=True)
class _Synthesis:
    profile: CamProfile
    l_ref: float
    thetas: np.ndarray
    forward: np.ndarray
    desired: np.ndarray
    rms_error: float


def _moment_arms(desired: Polynomial, thetas: np.ndarray, theta_ref: float, k: float, u_t: float):
    """
    Spring energy, moment arm m = du/dtheta and its rate along the rotation, from 1/2 k u^2 = 1/2 k u_t^2 + W with
    W the work of the desired torque since `theta_ref`. A spring that starts unstretched under zero torque has
    W = s^2 Q(theta) and u = s sqrt(2 Q / k) (s = theta - theta_ref), which keeps m finite at the reference.
    NaN marks rotations without a real spring extension.
    """
    work = desired.integ(lbnd=theta_ref)
    energy = 0.5 * k * u_t**2 + work(thetas)
    scale = max(float(np.max(np.abs(desired(thetas)))), np.finfo(float).tiny)
    with np.errstate(divide="ignore", invalid="ignore"):
        if u_t == 0.0 and abs(float(desired(theta_ref))) <= ZERO_TORQUE * scale:
            quotient = work // Polynomial([-theta_ref, 1.0]) ** 2
            s = thetas - theta_ref
            q, dq, ddq = quotient(thetas), quotient.deriv()(thetas), quotient.deriv(2)(thetas)
            root = np.sqrt(np.where(q > 0.0, 2.0 * k * q, np.nan))
            numerator = 2.0 * q + s * dq
            arm = numerator / root
            arm_rate = (3.0 * dq + s * ddq) / root - numerator * k * dq / root**3
        else:
            extension = np.sqrt(np.where(energy >= 0.0, 2.0 * energy / k, np.nan))
            arm = desired(thetas) / (k * extension)
            arm_rate = (desired.deriv()(thetas) - k * arm**2) / (k * extension)
    return energy, arm, arm_rate


def _check_design_range(thetas: np.ndarray, energy: np.ndarray, arm: np.ndarray, reach: np.ndarray) -> None:
    def first(mask: np.ndarray) -> float:
        return float(thetas[np.flatnonzero(mask)[0]])

    if np.any(energy < 0.0):
        raise InfeasibleTorque("desired torque would need a negative spring energy", theta=first(energy < 0.0))
    unbounded = ~np.isfinite(arm)
    if np.any(unbounded):
        raise GeometryInfeasible("moment arm is unbounded where the spring is unstretched", theta=first(unbounded))
    if np.any(arm <= 0.0):
        raise GeometryInfeasible("a wire in tension cannot give this torque sign", theta=first(arm <= 0.0))
    if np.any(np.abs(reach) >= 1.0):
        bad = np.abs(reach) >= 1.0
        raise GeometryInfeasible(
            "no wire line at this moment arm touches the idler", theta=first(bad), arm=float(arm[bad][0])
        )


def _grow(ok: np.ndarray, start: int, stop: int) -> tuple[int, int]:
    """Widen [start, stop) over the neighbouring samples that are still ok."""
    while start > 0 and ok[start - 1]:
        start -= 1
    while stop < len(ok) and ok[stop]:
        stop += 1
    return start, stop


def synthesize(
    desired: Polynomial,
    theta_range: tuple[float, float],
    geom: WireCamGeometry,
    samples: int = PROFILE_SAMPLES,
    verify_samples: int = VERIFY_SAMPLES,
    padding: float = RANGE_PADDING,
    tolerance: float = ROUND_TRIP_TOLERANCE,
    threads: int = 1,
) -> _Synthesis:
    lo, hi = map(float, theta_range)
    if not hi > lo:
        raise ValueError(f"empty design range ({lo}, {hi})")
    case = geom.case
    step = (hi - lo) / (samples - 1)
    extra = int(np.ceil(padding * (samples - 1)))
    thetas = np.concatenate(
        [lo - step * np.arange(extra, 0, -1), np.linspace(lo, hi, samples), hi + step * np.arange(1, extra + 1)]
    )
    design = slice(extra, extra + samples)
    energy, arm, arm_rate = _moment_arms(desired, thetas, lo, geom.k, geom.u_t)
    reach = (arm + case.sigma * geom.r) / geom.a
    _check_design_range(thetas[design], energy[design], arm[design], reach[design])
    if np.any((arm[design] <= geom.r) | (arm[design] >= geom.a)):
        logger.warning(
            "moment arm %.4f..%.4f m leaves the r < m < a guideline (r=%.4f, a=%.4f)",
            arm[design].min(),
            arm[design].max(),
            geom.r,
            geom.a,
        )

    # the padding only keeps the rotations past the range where a wire line still exists
    with np.errstate(invalid="ignore"):
        exists = (energy >= 0.0) & np.isfinite(arm) & np.isfinite(arm_rate) & (arm > 0.0) & (np.abs(reach) < 1.0)
        half = -1.0 if case.kappa > 0 else 1.0
        line_angle = half * np.arccos(np.clip(reach, -1.0, 1.0)) + case.kappa * thetas
        line_rate = -half * (arm_rate / geom.a) / np.sqrt(1.0 - reach**2) + case.kappa
        sweep = np.sign(line_rate)
    if not (np.all(sweep[design] > 0) or np.all(sweep[design] < 0)):
        raise GeometryInfeasible("wire lines do not sweep the cam monotonically", case=int(case))
    start, stop = _grow(exists & (sweep == sweep[extra]), design.start, design.stop)

    normal = unit(line_angle[start:stop])
    envelope = arm[start:stop, None] * normal + (arm_rate / line_rate)[start:stop, None] * perp(normal)
    phis = np.unwrap(np.arctan2(envelope[:, 1], envelope[:, 0]))
    radii = np.linalg.norm(envelope, axis=1)
    turning = np.sign(np.diff(phis))
    first, last = design.start - start, design.stop - 1 - start
    direction = turning[first]
    if not np.all(turning[first:last] == direction) or direction == 0:
        raise GeometryInfeasible("synthesized profile folds back on itself", case=int(case))
    # turning[j] joins samples j and j + 1
    lower, upper = _grow(np.append(turning == direction, False), first, last)
    if first - lower < MIN_PADDING or upper - last < MIN_PADDING:
        raise GeometryInfeasible("the wire line family ends at the edge of the design range", case=int(case))
    phis, radii = phis[lower : upper + 1], radii[lower : upper + 1]
    if direction < 0:
        phis, radii = phis[::-1], radii[::-1]
    profile = CamProfile(phis=phis, radii=radii)

    verify = np.linspace(lo, hi, verify_samples)
    l_ref = wire_length(profile, lo, geom)
    forward = np.array(
        parallel_map(lambda theta: cam_torque_forward(profile, theta, geom, l_ref), verify, threads)
    )
    target = desired(verify)
    rms_error = float(np.sqrt(np.mean((forward - target) ** 2)) / np.sqrt(np.mean(target**2)))
    if not rms_error <= tolerance:
        raise SynthesisDiverged("forward torque of the synthesized cam misses the target", rms_error=rms_error)
    logger.debug("synthesized cam over theta %.4f..%.4f: round-trip RMS error %.2e", lo, hi, rms_error)
    return _Synthesis(profile, l_ref, verify, forward, target, rms_error)


def synthesize_cam_profile(
    desired: Polynomial,
    theta_range: tuple[float, float],
    geom: WireCamGeometry,
    samples: int = PROFILE_SAMPLES,
) -> CamProfile:
    """
    Cam profile whose spring torque follows `desired(theta)` over `theta_range` (energy reference at the start of
    the range). The profile extends up to 5% past each end of the range, as far as the wire line family exists,
    and is verified on the range itself.
    """
    return synthesize(desired, theta_range, geom, samples).profile


def default_target_arm(geom: WireCamGeometry) -> float:
    """
    Middle of the moment arms at which a wire line of the geometry's case can touch the idler, (a - sigma r) / 2.
    """
    return 0.5 * (geom.a - geom.case.sigma * geom.r)


def size_spring_constant(
    desired: Polynomial,
    theta_range: tuple[float, float],
    geom: WireCamGeometry,
    target_arm: Optional[float] = None,
) -> float:
    """
    Spring rate that centers the moment arms over the range on `target_arm`: (max m + min m) / 2 = target. With the
    default target every arm then lies where a wire line exists. Each arm falls as k grows, so the root is
    bracketed on a log scale.
    """
    target = default_target_arm(geom) if target_arm is None else float(target_arm)
    lo, hi = map(float, theta_range)
    thetas = np.linspace(lo, hi, VERIFY_SAMPLES)

    def excess(log_k: float) -> float:
        _, arm, _ = _moment_arms(desired, thetas, lo, float(np.exp(log_k)), geom.u_t)
        if not np.all(np.isfinite(arm) & (arm > 0.0)):
            raise GeometryInfeasible("a wire in tension cannot give this torque sign", theta_range=(lo, hi))
        return 0.5 * float(arm.max() + arm.min()) - target

    log_lo, log_hi = np.log(1e-6), np.log(1e9)
    if not (excess(log_lo) > 0.0 > excess(log_hi)):
        raise GeometryInfeasible("no spring rate reaches the target moment arm", target_arm=target)
    return float(np.exp(optimize.brentq(excess, log_lo, log_hi, xtol=1e-12)))


def _spring_rates(
    desired: Polynomial,
    theta_range: tuple[float, float],
    geom: WireCamGeometry,
    auto_k: bool,
    target_arm: Optional[float],
) -> list[float]:
    """
    Rates to try in order. A stiffer spring shrinks the arms and how fast they change, which straightens the wire
    sweep and the profile.
    """
    if not auto_k:
        return [geom.k]
    base = size_spring_constant(desired, theta_range, geom, target_arm)
    return [base * 2.0**step for step in range(RATE_STEPS + 1)]


def _synthesize_any_case(
    leg: int,
    desired: Polynomial,
    theta_range: tuple[float, float],
    geom: WireCamGeometry,
    auto_k: bool,
    target_arm: Optional[float],
    samples: int,
    threads: int,
) -> tuple[WireCamGeometry, _Synthesis]:
    """
    Synthesis with the configured wire case first and then the other three, each over its spring rates. The
    first cam that passes the round trip wins; the last failure is raised when none does.
    """
    failure: Optional[NumericError] = None
    for case in (geom.case, *(case for case in WireCase if case != geom.case)):
        trial = geom.model_copy(update={"case": case})
        try:
            rates = _spring_rates(desired, theta_range, trial, auto_k, target_arm)
        except NumericError as exc:
            failure = exc
            continue
        for k in rates:
            trial = trial.model_copy(update={"k": k})
            try:
                result = synthesize(desired, theta_range, trial, samples, threads=threads)
            except NumericError as exc:
                logger.debug("leg %d: case %d, k=%.4g N/m: %s: %s", leg, case, k, type(exc).__name__, exc)
                failure = exc
                continue
            if case != geom.case:
                logger.info("leg %d: wire case %d is infeasible, using case %d", leg, geom.case, case)
            return trial, result
    assert failure is not None
    raise failure


@dataclass(frozen=True)
class CamDesign:
    """
    A verified cam for one leg. `mount_sign` s relates cam rotation and cam angle (theta = s alpha); the cam adds
    -s tau_cam(theta) to the torque the actuator has to supply. `realised` holds that joint torque sampled over the
    design range.
    """

    leg: int
    geom: WireCamGeometry
    fit: ModalTorque
    mount_sign: int
    alpha_range: tuple[float, float]
    theta_range: tuple[float, float]
    profile: CamProfile
    l_ref: float
    alphas: np.ndarray
    realised: np.ndarray
    rms_error: float
    _spline: interpolate.CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_spline", interpolate.CubicSpline(self.alphas, self.realised))

    def desired(self, alphas):
        return desired_cam_torque(self.fit)(alphas)

    def realised_at(self, alphas):
        return self._spline(alphas)


def _composed(poly: Polynomial, sign: int) -> Polynomial:
    """p(sign * x)."""
    return Polynomial(poly.coef * float(sign) ** np.arange(len(poly.coef)))


def design_cam(
    leg: int,
    alphas: np.ndarray,
    torques: np.ndarray,
    geom: WireCamGeometry,
    order: int = 4,
    auto_k: bool = False,
    target_arm: Optional[float] = None,
    samples: int = PROFILE_SAMPLES,
    threads: int = 1,
) -> CamDesign:
    """
    Modal fit of the leg's required torque, desired cam torque, mounting direction, (optional) spring sizing,
    synthesis and round-trip verification. When the configured wire case gives no valid cam the other cases are
    tried; the design records the case and spring rate that worked.
    """
    alphas = np.asarray(alphas, dtype=float)
    fit = fit_modal_torque(alphas, torques, order)
    alpha_range = (float(alphas.min()), float(alphas.max()))
    load = fit(np.linspace(*alpha_range, VERIFY_SAMPLES))
    if np.all(load > 0.0):
        sign = 1
    elif np.all(load < 0.0):
        sign = -1
    else:
        raise GeometryInfeasible("fitted torque changes sign over the design range", leg=leg)

    # the spring energy gradient in theta = s alpha is s * tau_est(s theta)
    desired = float(sign) * _composed(fit.polynomial, sign)
    theta_range = tuple(sorted((sign * alpha_range[0], sign * alpha_range[1])))
    geom, result = _synthesize_any_case(leg, desired, theta_range, geom, auto_k, target_arm, samples, threads)
    if auto_k:
        logger.info("leg %d: spring rate sized to %.4g N/m", leg, geom.k)
    cam_alphas = sign * result.thetas
    joint = -sign * result.forward
    order_by = np.argsort(cam_alphas)
    logger.info("leg %d: cam verified, round-trip RMS error %.2e", leg, result.rms_error)
    return CamDesign(
        leg=leg,
        geom=geom,
        fit=fit,
        mount_sign=sign,
        alpha_range=alpha_range,
        theta_range=theta_range,
        profile=result.profile,
        l_ref=result.l_ref,
        alphas=cam_alphas[order_by],
        realised=joint[order_by],
        rms_error=result.rms_error,
    )


def cam_joint_torque(design: CamDesign, alphas, ideal: bool = False, strict: bool = True):
    """
    Torque the cam adds at the joint for each cam angle: the synthesized profile's (interpolated over the verified
    samples) or, with `ideal`, the desired g(alpha). Angles outside the design range raise RangeExceeded, or give
    NaN when `strict` is off.
    """
    alphas = np.asarray(alphas, dtype=float)
    lo, hi = design.alpha_range
    slack = 1e-9 * max(1.0, abs(lo), abs(hi))
    outside = (alphas < lo - slack) | (alphas > hi + slack)
    if strict and np.any(outside):
        raise RangeExceeded(
            "cam angle outside the design range",
            leg=design.leg,
            path_index=int(np.flatnonzero(np.atleast_1d(outside))[0]),
            alpha_range=design.alpha_range,
        )
    torque = design.desired(alphas) if ideal else design.realised_at(np.clip(alphas, lo, hi))
    return np.where(outside, np.nan, torque)


def balance_with_cams(
    path: Union[list[Pose], np.ndarray, PathStatics],
    geom: RobotGeometry,
    mass: MassModel,
    designs: Sequence[Optional[CamDesign]],
    ideal: bool = False,
    branch: ElbowBranch = ElbowBranch.ELBOW_UP,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Required actuator torque along a path with one cam per leg (None for a leg without a cam), and its e_tau
    against the unbalanced robot.
    """
    statics = path if isinstance(path, PathStatics) else path_statics(path, geom, mass, branch)
    table = cam_balanced_torque(statics, designs, ideal)
    return table, e_tau(table, statics.tau_g)


def cam_balanced_torque(
    statics: PathStatics, designs: Sequence[Optional[CamDesign]], ideal: bool = False, strict: bool = True
) -> np.ndarray:
    table = statics.tau_g.copy()
    for leg, design in enumerate(designs):
        if design is None:
            continue
        alphas = cam_angle(statics.q[:, leg], design.geom.q0)
        table[:, leg] += cam_joint_torque(design, alphas, ideal, strict)
    return table


def design_cams(
    alphas: np.ndarray,
    torques: np.ndarray,
    geoms: Sequence[WireCamGeometry],
    order: int = 4,
    auto_k: bool = False,
    target_arm: Optional[float] = None,
    threads: int = THREADS,
) -> list[Optional[CamDesign]]:
    """
    One cam per leg, designed concurrently. `alphas` and `torques` are (N, 3) tables along the task path. A leg
    whose cam cannot be built is left without one (None) and the reason is logged.
    """

    def design(leg: int) -> Optional[CamDesign]:
        try:
            return design_cam(leg, alphas[:, leg], torques[:, leg], geoms[leg], order, auto_k, target_arm)
        except NumericError as exc:
            logger.warning("leg %d gets no cam: %s: %s", leg, type(exc).__name__, exc)
            return None

    return parallel_map(design, range(3), threads)
