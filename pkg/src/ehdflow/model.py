"""Ion-drag flow model for a circular conduit.

The dimensionless velocity profile v(tau) of electrohydrodynamic flow in a
circular conduit satisfies the two-point boundary value problem

    v'' + v'/tau + Ha^2 * (1 - v / (1 - alpha*v)) = 0,   0 < tau < 1,
    v'(0) = 0,   v(1) = 0,

where tau is the radial coordinate, Ha^2 the squared Hartmann number
(electric-field strength) and alpha the nonlinearity parameter.  For
alpha > 0 and Ha^2 > 0 the solution is unique, strictly decreasing and
bounded by 0 < v(tau) < 1/(alpha + 1).

This module holds the algebraic pieces of the equation, the embedded
benchmark solution at alpha=0.5, Ha^2=1, and the discrete l2 error metric
shared by the network and finite-element engines.  The algebra is written
against plain operators so it accepts floats, numpy arrays and autodiff
tape values alike.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# |1 - alpha*v| below this means the iterate left the physical solution
# branch; failing loudly beats silently crossing the pole.
POLE_EPSILON = 1e-12


class PoleError(ArithmeticError):
    """An iterate approached the 1 - alpha*v = 0 pole of the reaction term."""


def _raw(x):
    """Underlying float/ndarray of ``x`` (unwraps autodiff tape values)."""
    return getattr(x, "data", x)


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the conduit-flow equation."""

    alpha: float = 0.5
    ha_sq: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.ha_sq > 0.0:
            # Ha^2 = 0 admits only the trivial solution v == 0.
            raise ValueError(f"ha_sq must be positive, got {self.ha_sq}")

    @property
    def v_max(self) -> float:
        """Upper bound 1/(alpha+1) of physical solutions."""
        return 1.0 / (self.alpha + 1.0)


def _check_pole(denominator) -> None:
    if np.min(np.abs(_raw(denominator))) < POLE_EPSILON:
        raise PoleError(
            "1 - alpha*v is numerically zero: the solution iterate left the "
            "physical range 0 <= v < 1/(alpha+1)"
        )


def reaction_term(v, params: ModelParams):
    """Reaction Ha^2 * (1 - v / (1 - alpha*v)).

    Vanishes exactly at v = 1/(alpha+1), the upper bound of physical
    solutions.  Raises :class:`PoleError` near 1 - alpha*v = 0.
    """
    denom = 1.0 - params.alpha * v
    _check_pole(denom)
    return params.ha_sq * (1.0 - v / denom)


def reaction_derivative(v, params: ModelParams):
    """d/dv of :func:`reaction_term`: -Ha^2 / (1 - alpha*v)^2.

    Strictly negative on the physical range, so the linearized reaction is
    stabilizing there.
    """
    denom = 1.0 - params.alpha * v
    _check_pole(denom)
    return -params.ha_sq / (denom * denom)


def ode_residual(tau, v, dv, d2v, params: ModelParams):
    """Strong-form residual v'' + v'/tau + reaction(v) at radius tau > 0."""
    if np.min(_raw(tau)) <= 0.0:
        raise ValueError("tau must be positive: the v'/tau term is singular at the axis")
    return d2v + dv / tau + reaction_term(v, params)


class Source(enum.Enum):
    """Which engine produced a solution table."""

    PINN = "pinn"
    FEM = "fem"
    REFERENCE = "reference"


@dataclass(frozen=True)
class SolutionTable:
    """Sampled (tau, v) pairs from one engine, tau strictly increasing."""

    taus: np.ndarray
    values: np.ndarray
    source: Source

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if taus.ndim != 1 or taus.shape != values.shape:
            raise ValueError("taus and values must be 1-d arrays of equal length")
        if np.any(taus < 0.0) or np.any(taus > 1.0):
            raise ValueError("all tau samples must lie in [0, 1]")
        if np.any(np.diff(taus) <= 0.0):
            raise ValueError("tau samples must be strictly increasing")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "values", values)

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.taus.tolist(), self.values.tolist()))


# Benchmark grid: tau = 0.0, 0.1, ..., 1.0.
REFERENCE_TAUS = np.arange(11) / 10.0


@dataclass(frozen=True)
class ReferenceSolution:
    """Benchmark velocity values on the canonical 11-point grid."""

    taus: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if taus.shape != (11,) or not np.array_equal(taus, REFERENCE_TAUS):
            raise ValueError("reference tau grid must be exactly 0.0, 0.1, ..., 1.0")
        if values.shape != (11,):
            raise ValueError("reference needs one value per grid point")
        if np.any(np.diff(values) >= 0.0):
            raise ValueError("reference values must be strictly decreasing in tau")
        if values[-1] != 0.0:
            raise ValueError("reference must satisfy v(1) = 0")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "values", values)

    def as_table(self) -> SolutionTable:
        return SolutionTable(self.taus, self.values, Source.REFERENCE)


# Semi-analytical benchmark for alpha = 0.5, Ha^2 = 1, used as the accuracy
# yardstick for both engines.  Independently cross-checked by the shooting
# integrator in ehdflow.shooting (see validate_reference).
REFERENCE = ReferenceSolution(
    taus=REFERENCE_TAUS,
    values=np.array(
        [
            0.206916,
            0.204991,
            0.199513,
            0.189791,
            0.175889,
            0.158055,
            0.135427,
            0.108932,
            0.077707,
            0.041212,
            0.000000,
        ]
    ),
)


def l2_error(table: SolutionTable, reference=REFERENCE) -> float:
    """Discrete l2 deviation sqrt(sum_i (v(tau_i) - v_ref(tau_i))^2).

    Evaluated over the reference grid points; the table is linearly
    interpolated if it was sampled elsewhere, and must cover the full
    reference tau range.  Unweighted and unaveraged by convention.
    """
    taus = table.taus
    if taus[0] > reference.taus[0] or taus[-1] < reference.taus[-1]:
        raise ValueError(
            "solution table does not cover the reference grid "
            f"[{reference.taus[0]}, {reference.taus[-1]}]"
        )
    sampled = np.interp(reference.taus, taus, table.values)
    return float(np.sqrt(np.sum((sampled - np.asarray(reference.values)) ** 2)))
