"""Financial-market applications: tilted beliefs, closed forms, delegation.

The terminal Brownian value is discretized by Gauss-Hermite quadrature
scaled to variance T. Agent types are exponential tilts exp(f(W_T)) of the
reference law, always re-normalized numerically (the raw normalizer Z is
reported so the unnormalized identities can be audited). The CARA and log
budget-constrained optima, their utilities in terms of relative entropies,
and the principal's delegation income are implemented in closed form, with
an independent Lagrange-multiplier oracle for verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .errors import (
    DimensionError,
    DomainError,
    NonConvergenceError,
    RangeError,
    ValidationError,
)
from .model import CARA, LOG, UtilitySpec

MAX_NODES = 200
BETA_MIN = 1e-3
ENTROPY_AGENT_GIVEN_REF = "P||Q"
ENTROPY_REF_GIVEN_AGENT = "Q||P"


@dataclass
class DriftType:
    """A market belief: drift primitive f evaluated on the terminal nodes.

    Only f(W_T) enters any implemented formula, so the function is carried
    by its node values. The normalization f(0) = 0 is declared through
    f_at_zero (exact for the parametric constructors; raw node values rely
    on the caller's declaration since a constant shift cancels after the
    density is normalized anyway).
    """

    label: str
    values: np.ndarray
    f_at_zero: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        violations = []
        if not np.all(np.isfinite(self.values)):
            violations.append(f"drift type {self.label}: values must be finite")
        if self.f_at_zero != 0.0:
            violations.append(
                f"drift type {self.label}: f(0) = {self.f_at_zero!r}, "
                "normalization requires f(0) = 0"
            )
        if violations:
            raise ValidationError(violations)


def clamped_linear_drift(label: str, nodes: np.ndarray, slope: float,
                         support: float) -> DriftType:
    """f(w) = slope * clip(w, -support, support): bounded, compactly sloped,
    and f(0) = 0 by construction."""
    if support <= 0.0:
        raise RangeError("support must be positive")
    values = slope * np.clip(nodes, -support, support)
    return DriftType(label=label, values=values)


@dataclass
class MarketModel:
    """Quadrature model of the terminal market state with candidate beliefs."""

    horizon: float
    nodes: np.ndarray
    weights: np.ndarray
    drift_types: list[DriftType] = field(default_factory=list)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        violations = []
        if self.horizon <= 0.0:
            violations.append("horizon must be positive")
        if self.nodes.shape != self.weights.shape or self.nodes.ndim != 1:
            violations.append("nodes and weights must be 1-d arrays of equal length")
        else:
            if abs(self.weights.sum() - 1.0) > 1e-12:
                violations.append("weights must sum to 1")
            scale = max(float(np.max(np.abs(self.nodes), initial=0.0)), 1.0)
            if np.max(np.abs(self.nodes + self.nodes[::-1])) > 1e-12 * scale:
                violations.append("nodes must be symmetric about 0")
        for d in self.drift_types:
            if d.values.shape != self.nodes.shape:
                violations.append(
                    f"drift type {d.label}: {d.values.size} values for "
                    f"{self.nodes.size} nodes"
                )
        if violations:
            raise ValidationError(violations)

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    def drift(self, f_index: int) -> DriftType:
        try:
            return self.drift_types[f_index]
        except IndexError:
            raise DimensionError(f"no drift type with index {f_index}") from None


def discretize_terminal(horizon: float, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite nodes and weights for a N(0, horizon) terminal value.

    Nodes are exactly antisymmetric (mirrored from the positive half, middle
    node pinned to 0 for odd m) so odd weighted moments cancel pairwise.
    """
    if m < 2:
        raise RangeError("need at least two quadrature nodes")
    if m > MAX_NODES:
        raise RangeError(f"{m} nodes exceed the cap {MAX_NODES}")
    if horizon <= 0.0:
        raise RangeError("horizon must be positive")
    x, w = hermgauss(m)
    nodes = np.sqrt(2.0 * horizon) * x
    weights = w / np.sqrt(np.pi)
    half = m // 2
    nodes[:half] = -nodes[m - half:][::-1]
    if m % 2:
        nodes[half] = 0.0
    weights[:half] = weights[m - half:][::-1]
    weights = weights / weights.sum()
    return nodes, weights


def weighted_moment(nodes: np.ndarray, weights: np.ndarray, k: int) -> float:
    """k-th weighted moment, summed mirror-pairwise so odd moments of a
    symmetric rule cancel exactly in floating point."""
    terms = weights * nodes**k
    m = terms.size
    half = m // 2
    total = float(terms[half]) if m % 2 else 0.0
    for i in range(half):
        total += terms[i] + terms[m - 1 - i]
    return total


@dataclass
class TiltedDensity:
    """Numerically normalized exponential tilt of the reference weights."""

    values: np.ndarray      # density per node, strictly positive
    normalizer: float       # raw Z = E_Q[exp(f)]; Z = 1 means already a density
    weights: np.ndarray     # reference weights the density is taken against
    normalized: bool = True

    def expect(self, payoff: np.ndarray) -> float:
        """Expectation of a node payoff under the tilted measure."""
        payoff = np.asarray(payoff, dtype=float)
        if payoff.shape != self.values.shape:
            raise DimensionError("payoff length does not match the node grid")
        return float(np.sum(self.weights * self.values * payoff))


def tilted_density(model: MarketModel, f_index: int) -> TiltedDensity:
    """Density proportional to exp(f(W_T)), normalized against the quadrature."""
    f = model.drift(f_index).values
    if np.max(np.abs(f)) > 700.0:
        raise RangeError("drift values beyond +-700 would overflow exp")
    ef = np.exp(f)
    z = float(model.weights @ ef)
    return TiltedDensity(values=ef / z, normalizer=z, weights=model.weights.copy())


def relative_entropy(density: TiltedDensity, direction: str) -> float:
    """Relative entropy between the tilted measure P and the reference Q.

    "P||Q" gives E_P[ln dP/dQ] = sum w d ln d; "Q||P" gives -sum w ln d.
    Both are nonnegative and vanish iff the density is identically one.
    """
    w, d = density.weights, density.values
    if direction == ENTROPY_AGENT_GIVEN_REF:
        return float(np.sum(w * d * np.log(d)))
    if direction == ENTROPY_REF_GIVEN_AGENT:
        return float(-np.sum(w * np.log(d)))
    raise RangeError(f"unknown entropy direction {direction!r}")


def cara_optimal(
    model: MarketModel, f_index: int, e_a: np.ndarray, alpha: float
) -> tuple[np.ndarray, float]:
    """Budget-optimal payoff and utility of a CARA agent with belief f.

    x* = -(1/alpha) ln d + E_f[e_a] + (1/alpha) H(P||Q) and the attained
    utility is 1 - exp(-alpha E_f[e_a] - H(P||Q)). The budget binds exactly:
    E_f[x* - e_a] = 0.
    """
    if alpha <= 0.0:
        raise RangeError("alpha must be positive")
    density = tilted_density(model, f_index)
    e_a = np.asarray(e_a, dtype=float)
    mean_endowment = density.expect(e_a)
    entropy = relative_entropy(density, ENTROPY_AGENT_GIVEN_REF)
    x_star = -np.log(density.values) / alpha + mean_endowment + entropy / alpha
    utility = 1.0 - np.exp(-alpha * mean_endowment - entropy)
    return x_star, float(utility)


def log_optimal(
    model: MarketModel, f_index: int, e_a: np.ndarray
) -> tuple[np.ndarray, float]:
    """Budget-optimal payoff and utility of a log agent with belief f.

    x* = E_f[e_a] / d (wealth proportional to the inverse state-price
    density) and the attained utility is ln E_f[e_a] + H(Q||P).
    """
    density = tilted_density(model, f_index)
    e_a = np.asarray(e_a, dtype=float)
    mean_endowment = density.expect(e_a)
    if mean_endowment <= 0.0:
        raise DomainError("log wealth needs E_f[e_a] > 0")
    x_star = mean_endowment / density.values
    utility = np.log(mean_endowment) + relative_entropy(
        density, ENTROPY_REF_GIVEN_AGENT
    )
    return x_star, float(utility)


def cara_indirect_utility(
    model: MarketModel, f_index: int, e_a: np.ndarray, alpha: float, x: np.ndarray
) -> float:
    """CARA agent's utility after optimally trading his income e_a + x."""
    density = tilted_density(model, f_index)
    mean_income = density.expect(np.asarray(e_a, dtype=float) + np.asarray(x, dtype=float))
    entropy = relative_entropy(density, ENTROPY_AGENT_GIVEN_REF)
    return float(1.0 - np.exp(-alpha * mean_income - entropy))


def log_indirect_utility(
    model: MarketModel, f_index: int, e_a: np.ndarray, x: np.ndarray
) -> float:
    """Log agent's utility after optimally trading his income e_a + x."""
    density = tilted_density(model, f_index)
    mean_income = density.expect(np.asarray(e_a, dtype=float) + np.asarray(x, dtype=float))
    if mean_income <= 0.0:
        raise DomainError("log wealth needs E_f[e_a + x] > 0")
    return float(np.log(mean_income) + relative_entropy(density, ENTROPY_REF_GIVEN_AGENT))


def delegation_income(
    model: MarketModel, f_index: int, x: np.ndarray, beta: float, e_a: np.ndarray
) -> np.ndarray:
    """Principal's per-node income from the log manager's optimal trading.

    With the agent keeping the beta-fraction of trading gains, the principal
    collects (1-beta)/beta * (E_f[e_a+x]/d - (e_a + x)) per node. The
    singular endpoint beta = 0 is excluded; beta below BETA_MIN is refused.
    """
    if not (BETA_MIN <= beta <= 1.0):
        raise RangeError(f"beta must lie in [{BETA_MIN}, 1]")
    density = tilted_density(model, f_index)
    income = np.asarray(e_a, dtype=float) + np.asarray(x, dtype=float)
    mean_income = density.expect(income)
    if mean_income <= 0.0:
        raise DomainError("delegation needs E_f[e_a + x] > 0")
    return (1.0 - beta) / beta * (mean_income / density.values - income)


def delegation_value(
    model: MarketModel,
    f_index: int,
    x: np.ndarray,
    beta: float,
    e_a: np.ndarray,
    e_p: np.ndarray,
    v: UtilitySpec,
) -> float:
    """Principal's expected utility from delegating to the log manager f."""
    w_star = delegation_income(model, f_index, x, beta, e_a)
    wealth = np.asarray(e_p, dtype=float) - np.asarray(x, dtype=float) + w_star
    return float(model.weights @ v.value(wealth))


def market_model_from_json(doc: dict) -> MarketModel:
    """Build a MarketModel from its JSON form.

    The node grid comes either from an explicit "nodes"/"weights" pair or
    from "n_nodes" Gauss-Hermite points at the given horizon. Each drift
    type is either raw node values (plus a declared f(0)) or the named
    clamped-linear family with slope and support parameters.
    """
    if "nodes" in doc:
        nodes = np.asarray(doc["nodes"], dtype=float)
        weights = np.asarray(doc["weights"], dtype=float)
        horizon = float(doc.get("horizon", weighted_moment(nodes, weights, 2)))
    else:
        horizon = float(doc.get("horizon", 1.0))
        nodes, weights = discretize_terminal(horizon, int(doc.get("n_nodes", 12)))
    drifts = []
    for i, entry in enumerate(doc.get("drift_types", [])):
        label = entry.get("label", f"f{i}")
        if "values" in entry:
            drifts.append(
                DriftType(label, entry["values"], float(entry.get("f_at_zero", 0.0)))
            )
        else:
            support = float(entry.get("support", np.max(np.abs(nodes))))
            drifts.append(
                clamped_linear_drift(label, nodes, float(entry["slope"]), support)
            )
    return MarketModel(horizon=horizon, nodes=nodes, weights=weights, drift_types=drifts)


def _multiplier_payoff(u: UtilitySpec, density: np.ndarray, lam: float) -> np.ndarray:
    """Pointwise first-order condition u'(x_i) = lam * d_i, inverted for x."""
    if u.family == CARA:
        return -np.log(lam * density / u.alpha) / u.alpha
    return 1.0 / (lam * density)  # log case


def verify_budget_optimality(
    model: MarketModel,
    f_index: int,
    e_a: np.ndarray,
    u: UtilitySpec,
    grid_size: int = 200,
) -> float:
    """Gap between the closed-form utility and an independent oracle.

    The oracle maximizes E_Q[u(x)] subject to E_f[x - e_a] <= 0 by bisecting
    on the Lagrange multiplier of the (binding) budget, with the pointwise
    first-order condition inverted per node. Returns the absolute utility gap.
    """
    if u.family not in (CARA, LOG):
        raise RangeError("oracle supports cara and log utilities only")
    density = tilted_density(model, f_index)
    e_a = np.asarray(e_a, dtype=float)
    target = density.expect(e_a)
    if u.family == LOG and target <= 0.0:
        raise DomainError("log wealth needs E_f[e_a] > 0")

    def excess(lam: float) -> float:
        return density.expect(_multiplier_payoff(u, density.values, lam)) - target

    lam_lo = lam_hi = 1.0
    for _ in range(grid_size):
        if excess(lam_lo) > 0.0:
            break
        lam_lo /= 4.0
    for _ in range(grid_size):
        if excess(lam_hi) < 0.0:
            break
        lam_hi *= 4.0
    if excess(lam_lo) <= 0.0 or excess(lam_hi) >= 0.0:
        raise NonConvergenceError("could not bracket the budget multiplier")
    for _ in range(grid_size):
        lam_mid = 0.5 * (lam_lo + lam_hi)
        if excess(lam_mid) > 0.0:
            lam_lo = lam_mid
        else:
            lam_hi = lam_mid
        if (lam_hi - lam_lo) <= 1e-15 * lam_hi:
            break
    lam = 0.5 * (lam_lo + lam_hi)
    oracle_payoff = _multiplier_payoff(u, density.values, lam)
    oracle_utility = float(model.weights @ u.value(oracle_payoff))
    if u.family == CARA:
        _, closed = cara_optimal(model, f_index, e_a, u.alpha)
    else:
        _, closed = log_optimal(model, f_index, e_a)
    return abs(oracle_utility - closed)
