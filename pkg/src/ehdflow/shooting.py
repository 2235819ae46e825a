"""Independent benchmark integrator for the conduit-flow problem.

A shooting method cross-checks the embedded reference values without
sharing any machinery with the network or finite-element engines: the
axis value v(0) is bracketed and bisected until the wall condition
v(1) = 0 holds, integrating each candidate with a high-order adaptive
Runge-Kutta scheme.  The axis singularity of the v'/tau term is handled
by starting a small distance off the axis with the symmetry expansion

    v(tau) ~ v0 - reaction(v0)*tau^2/4,   v'(tau) ~ -reaction(v0)*tau/2,

which follows from v'(0) = 0 and the equation's limit 2*v''(0) =
-reaction(v0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .model import ModelParams, REFERENCE, reaction_term

_TAU_START = 1e-6


def _integrate(v0: float, params: ModelParams, rtol: float, atol: float):
    r0 = reaction_term(v0, params)
    tau0 = _TAU_START
    y0 = [v0 - 0.25 * r0 * tau0 * tau0, -0.5 * r0 * tau0]

    def rhs(tau, y):
        return [y[1], -y[1] / tau - reaction_term(y[0], params)]

    solution = solve_ivp(
        rhs,
        (tau0, 1.0),
        y0,
        method="DOP853",
        rtol=rtol,
        atol=atol,
        dense_output=True,
    )
    if not solution.success:
        raise RuntimeError(f"integration failed: {solution.message}")
    return solution


@dataclass(frozen=True)
class ShootingSolution:
    """Dense solution of the boundary value problem from the shooting method."""

    params: ModelParams
    axis_value: float  # v(0)
    _ivp: object

    def velocity(self, tau) -> np.ndarray:
        """v(tau); uses the series expansion below the integration start."""
        arr = np.atleast_1d(np.asarray(tau, dtype=float))
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValueError("tau must lie in [0, 1]")
        r0 = reaction_term(self.axis_value, self.params)
        series = self.axis_value - 0.25 * r0 * arr * arr
        dense = self._ivp.sol(np.clip(arr, _TAU_START, 1.0))[0]
        out = np.where(arr < _TAU_START, series, dense)
        return float(out[0]) if np.ndim(tau) == 0 else out

    def velocity_derivative(self, tau) -> np.ndarray:
        """v'(tau) from the dense integrator state."""
        arr = np.atleast_1d(np.asarray(tau, dtype=float))
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValueError("tau must lie in [0, 1]")
        r0 = reaction_term(self.axis_value, self.params)
        series = -0.5 * r0 * arr
        dense = self._ivp.sol(np.clip(arr, _TAU_START, 1.0))[1]
        out = np.where(arr < _TAU_START, series, dense)
        return float(out[0]) if np.ndim(tau) == 0 else out


def solve_bvp_shooting(
    params: ModelParams = ModelParams(),
    rtol: float = 1e-12,
    atol: float = 1e-13,
) -> ShootingSolution:
    """Solve the boundary value problem by bisecting on the axis value.

    The miss distance v(1; v0) is negative at v0 = 0 (the reaction pushes
    the profile below zero) and positive just under the bound 1/(alpha+1)
    (the reaction vanishes there), so a sign change is guaranteed.
    """

    def miss(v0: float) -> float:
        return _integrate(v0, params, rtol, atol).y[0, -1]

    upper = params.v_max * (1.0 - 1e-10)
    axis_value = brentq(miss, 0.0, upper, xtol=1e-14, rtol=8.9e-16)
    return ShootingSolution(params, axis_value, _integrate(axis_value, params, rtol, atol))


@dataclass(frozen=True)
class ValidationRow:
    tau: float
    reference_value: float
    oracle_value: float

    @property
    def deviation(self) -> float:
        return abs(self.oracle_value - self.reference_value)


@dataclass(frozen=True)
class ValidationReport:
    rows: list[ValidationRow]
    tolerance: float

    @property
    def max_deviation(self) -> float:
        return max(row.deviation for row in self.rows)

    @property
    def ok(self) -> bool:
        return self.max_deviation <= self.tolerance


def validate_reference(
    params: ModelParams = ModelParams(),
    reference=REFERENCE,
    tolerance: float = 5e-4,
) -> ValidationReport:
    """Check the embedded benchmark against the shooting integrator."""
    solution = solve_bvp_shooting(params)
    oracle = solution.velocity(reference.taus)
    rows = [
        ValidationRow(float(t), float(r), float(o))
        for t, r, o in zip(reference.taus, reference.values, oracle)
    ]
    return ValidationReport(rows=rows, tolerance=tolerance)
