"""
Utilities for the RrrBalanceStudy project.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, TypeVar

import numpy as np

from rrr_balance_study.rrr_balance_study_config import THREADS

T = TypeVar("T")
R = TypeVar("R")


class RrrBalanceStudyError(Exception):
    """
    Base class for all exceptions in the RrrBalanceStudy project. Keyword arguments are kept as `details` and rendered
    after the message, so every error says which leg, matrix, key or path point it is about.
    """

    def __init__(self, message: str = "", **details: Any) -> None:
        self.message = message
        self.details = details
        super().__init__(message)

    def __str__(self) -> str:
        if not self.details:
            return self.message
        rendered = ", ".join(f"{key}={value!r}" for key, value in self.details.items())
        return f"{self.message} ({rendered})" if self.message else rendered


class ConfigError(RrrBalanceStudyError):
    """
    Raised when a study configuration cannot be parsed or validated. Details carry the section/key and the line
    number in the config text when it can be located.
    """


class NumericError(RrrBalanceStudyError):
    """
    Base class for numeric failures (kinematic, optimization and cam synthesis errors).
    """


class Unreachable(NumericError):
    """
    Raised when a leg cannot reach its platform anchor (outside the |L1-L2|..L1+L2 annulus).
    """


class Singular(NumericError):
    """
    Raised when B, D or J_qx has a condition number above the configured threshold.
    """


class EmptyWorkspace(NumericError):
    """
    Raised when the dexterous workspace or its task-based erosion is empty.
    """


class BoundsViolation(NumericError):
    """
    Raised when a spring optimization is started outside the parameter bounds.
    """


class AllGuarded(NumericError):
    """
    Raised when every baseline torque of a leg is below the guard and a torque ratio cannot be formed.
    """


class RankDeficient(NumericError):
    """
    Raised when the Vandermonde matrix of a modal torque fit is numerically rank deficient.
    """


class NoTangent(NumericError):
    """
    Raised when no wire tangent to both the cam and the idler exists in the wire case domain.
    """


class MultipleTangents(NumericError):
    """
    Raised when the tangency residual has more than one root in the case domain (locally non-convex profile).
    """


class QuadratureFailure(NumericError):
    """
    Raised when the wrapped-arc integral does not reach the requested accuracy.
    """


class SlackWire(NumericError):
    """
    Raised when the cam rotation would make the spring shorter than its natural length.
    """


class InfeasibleTorque(NumericError):
    """
    Raised when a desired cam torque would require negative spring energy.
    """


class GeometryInfeasible(NumericError):
    """
    Raised when the moment arm required by a desired torque cannot be produced by the cam/idler geometry.
    """


class SynthesisDiverged(NumericError):
    """
    Raised when a synthesized cam fails the forward round-trip check.
    """


class RangeExceeded(NumericError):
    """
    Raised when a path point drives a cam outside the angle range it was designed for.
    """


class StageError(NumericError):
    """
    Wraps a module error with the name of the pipeline stage that raised it.
    """


def wrap_angle(angle: Any) -> Any:
    """
    Wrap an angle (or an array of angles) to (-pi, pi].
    """
    wrapped = np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def cross2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    The z component of the cross product of (stacks of) planar vectors.
    """
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def perp(a: np.ndarray) -> np.ndarray:
    """
    z0 x a for (stacks of) planar vectors, i.e. a rotated by +90 degrees.
    """
    return np.stack([-a[..., 1], a[..., 0]], axis=-1)


def unit(angle: Any) -> np.ndarray:
    """
    Unit vectors [cos, sin] for an angle or an array of angles.
    """
    angle = np.asarray(angle, dtype=float)
    return np.stack([np.cos(angle), np.sin(angle)], axis=-1)


def parallel_map(func: Callable[[T], R], items: Iterable[T], threads: int = THREADS) -> list[R]:
    """
    Map `func` over `items` using a thread pool. Results come back in input order regardless of which thread
    finished first, so reductions over them are deterministic.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as executor:
        return list(executor.map(func, items))


def format_significant(value: float, digits: int) -> str:
    """
    Format a number with a fixed count of significant digits (the way the summary tables print numbers).
    """
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    return f"{value:.{digits}g}"
