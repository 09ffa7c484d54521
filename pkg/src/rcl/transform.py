"""Change of variables from payoff units to agent utility units.

Replacing a transfer x by the utility level c = u(e_a + x) turns the agent's
expected utility into the bilinear form sum_i q_i d_i c_i, which makes the
participation and truth-telling constraints linear. This module holds the
forward and inverse transform, the asymptotic-elasticity tail check and the
convex conjugate of the agent utility.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InconclusiveError, RangeError
from .model import (
    CARA,
    CRRA,
    HALF_LINE,
    LINEAR,
    LOG,
    AgentType,
    Instance,
    StateSpace,
    UtilitySpec,
    expectation,
)

DEFAULT_WEALTH_FLOOR = 1e-8
RANGE_TOL = 1e-9


@dataclass
class UtilityUnitsInstance:
    """An Instance with its contract bounds mapped into utility units.

    c_lo/c_hi are the images of the payoff bounds under u(e_a + .). For
    half-line utilities the wealth at the lower bound is floored at
    wealth_floor so the bounds stay finite; the floored atoms are recorded.
    """

    base: Instance
    c_lo: np.ndarray
    c_hi: np.ndarray
    wealth_floor: float
    clamped_atoms: list[int] = field(default_factory=list)

    @property
    def states(self) -> StateSpace:
        return self.base.states

    @property
    def n_atoms(self) -> int:
        return self.base.n_atoms

    @property
    def n_types(self) -> int:
        return self.base.n_types

    @property
    def reservation(self) -> np.ndarray:
        return self.base.reservation


def to_utility_units(
    instance: Instance, wealth_floor: float | None = DEFAULT_WEALTH_FLOOR
) -> UtilityUnitsInstance:
    """Map the payoff-unit contract bounds into utility units, pointwise."""
    u = instance.u
    wealth_lo = instance.e_a + instance.contract_lo
    wealth_hi = instance.e_a + instance.contract_hi
    clamped: list[int] = []
    if u.domain == HALF_LINE:
        floor_at = 0.0 if u.family != LOG else np.nextafter(0.0, 1.0)
        needs_floor = wealth_lo < (wealth_floor if wealth_floor is not None else floor_at)
        if wealth_floor is None:
            # No floor provided: let the utility's own domain rule speak.
            c_lo = u.value(wealth_lo)
        else:
            if wealth_floor <= 0.0:
                raise RangeError("wealth_floor must be strictly positive")
            clamped = [int(i) for i in np.flatnonzero(needs_floor)]
            wealth_lo = np.maximum(wealth_lo, wealth_floor)
            wealth_hi = np.maximum(wealth_hi, wealth_floor)
            c_lo = u.value(wealth_lo)
    else:
        c_lo = u.value(wealth_lo)
    c_hi = u.value(wealth_hi)
    return UtilityUnitsInstance(
        base=instance,
        c_lo=np.asarray(c_lo, dtype=float),
        c_hi=np.asarray(c_hi, dtype=float),
        wealth_floor=float(wealth_floor) if wealth_floor is not None else 0.0,
        clamped_atoms=clamped,
    )


def from_utility_units(uu: UtilityUnitsInstance, c) -> np.ndarray:
    """Invert a utility-level contract back to a payoff vector x = u^-1(c) - e_a."""
    cc = np.asarray(c, dtype=float)
    if cc.shape != uu.c_lo.shape:
        raise RangeError(f"contract length {cc.size} does not match {uu.n_atoms} atoms")
    span = max(float((uu.c_hi - uu.c_lo).max()), 1.0)
    if np.any(cc < uu.c_lo - RANGE_TOL * span) or np.any(cc > uu.c_hi + RANGE_TOL * span):
        raise RangeError("utility-level contract outside the transformed bounds")
    cc = np.clip(cc, uu.c_lo, uu.c_hi)
    return uu.base.u.inverse(cc) - uu.base.e_a


def agent_utility(states: StateSpace, agent_type: AgentType, c) -> float:
    """The agent's utility of a contract in utility units: E_P[c]."""
    return expectation(states, agent_type, c)


@dataclass
class AeReport:
    passed: bool
    estimate: float
    z_lo: float
    z_hi: float
    margin: float

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "estimate": self.estimate,
            "z_lo": self.z_lo,
            "z_hi": self.z_hi,
            "margin": self.margin,
        }


def ae_check(
    u: UtilitySpec,
    z_max: float = 1e6,
    margin: float = 0.01,
    shift: float = 0.0,
    grid_points: int = 200,
) -> AeReport:
    """Numerical tail estimate of the asymptotic elasticity of u.

    Evaluates z * u'(z) / u(z) on a logarithmic grid over [z_max/1e4, z_max]
    and passes iff the maximum stays below 1 - margin. A heuristic, not a
    proof: the grid only samples the tail. For utilities that are not
    positive on the tail, pass a constant `shift` added to u; grid points
    where the (shifted) utility is still <= 0 are skipped, and if none are
    positive the check is inconclusive.
    """
    if z_max < 1e2:
        raise RangeError("z_max too small for a tail estimate")
    z = np.geomspace(z_max / 1e4, z_max, grid_points)
    vals = np.asarray(u.value(z), dtype=float) + shift
    derivs = np.asarray(u.deriv(z), dtype=float)
    positive = vals > 0.0
    if not np.any(positive):
        raise InconclusiveError(
            "utility not positive anywhere on the tail grid; provide a shift"
        )
    ratios = z[positive] * derivs[positive] / vals[positive]
    estimate = float(ratios.max())
    return AeReport(
        passed=bool(estimate < 1.0 - margin),
        estimate=estimate,
        z_lo=float(z[0]),
        z_hi=float(z[-1]),
        margin=margin,
    )


def _golden_max(f, lo: float, hi: float, tol: float = 1e-12) -> float:
    """Golden-section search for the maximizer of a unimodal f on [lo, hi]."""
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    span = max(hi - lo, 1.0)
    while b - a > tol * span:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def convex_conjugate(u: UtilitySpec, y: float) -> float:
    """sup_z { u(z) - z*y }, in closed form where available.

    Closed forms cover crra, log, cara and linear; tabulated utilities are
    maximized by golden-section search over their grid range, with a warning
    when the supremum sits on the boundary of the table.
    """
    if y <= 0.0:
        raise DomainError("conjugate is infinite for y <= 0")
    if u.family == LOG:
        return -np.log(y) - 1.0
    if u.family == CRRA:
        g = u.gamma
        return (1.0 - g) / g * y ** (-g / (1.0 - g))
    if u.family == CARA:
        z_star = -np.log(y / u.alpha) / u.alpha
        if u.domain == HALF_LINE and z_star < 0.0:
            z_star = 0.0
        return float(u.value(z_star) - z_star * y)
    if u.family == LINEAR:
        if u.domain == HALF_LINE:
            return 0.0 if y >= 1.0 else float("inf")
        return 0.0 if y == 1.0 else float("inf")
    lo, hi = float(u.grid[0]), float(u.grid[-1])
    z_star = _golden_max(lambda z: float(u.value(z)) - z * y, lo, hi)
    if z_star > hi - 1e-6 * (hi - lo) or z_star < lo + 1e-6 * (hi - lo):
        warnings.warn(
            "conjugate supremum lies on the boundary of the tabulated range",
            stacklevel=2,
        )
    return float(u.value(z_star)) - z_star * y
