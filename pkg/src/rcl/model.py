"""Discretized model for contracting under adverse selection and ambiguity.

States are finitely many atoms carrying a reference probability q. Agent
types are densities d with respect to the reference measure, so every agent
expectation in the package reduces to the weighted dot product
sum_i q_i * d_i * x_i. An Instance bundles endowments, utility functions,
the ambiguity set over types and the contract bounds that the transform,
constraint, solver and menu modules consume.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator
from scipy.optimize import brentq

from .errors import DimensionError, DomainError, ValidationError

PROB_TOL = 1e-12       # reference probabilities must sum to 1 this tightly
DENSITY_TOL = 1e-10    # densities are user-entered decimals; looser on purpose
FEAS_TOL = 1e-9

HALF_LINE = "half-line"
WHOLE_LINE = "whole-line"

CRRA = "crra"
LOG = "log"
CARA = "cara"
LINEAR = "linear"
TABULATED = "tabulated"

_DEFAULT_DOMAIN = {
    CRRA: HALF_LINE,
    LOG: HALF_LINE,
    CARA: WHOLE_LINE,
    LINEAR: WHOLE_LINE,
    TABULATED: HALF_LINE,
}


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValidationError([f"{name} must be a one-dimensional array"])
    return arr


@dataclass
class StateSpace:
    """Finite state space with strictly positive reference probabilities."""

    ref_prob: np.ndarray
    atoms: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.ref_prob = _as_float_array(self.ref_prob, "ref_prob")
        if self.ref_prob.size < 1:
            raise ValidationError(["state space needs at least one atom"])
        if np.any(self.ref_prob <= 0.0):
            raise ValidationError(["reference probabilities must be strictly positive"])
        if abs(self.ref_prob.sum() - 1.0) > PROB_TOL:
            raise ValidationError(
                [f"reference probabilities sum to {self.ref_prob.sum()!r}, not 1"]
            )
        if not self.atoms:
            self.atoms = [f"s{i}" for i in range(self.ref_prob.size)]
        if len(self.atoms) != self.ref_prob.size:
            raise ValidationError(["atom labels and ref_prob lengths differ"])

    @property
    def n_atoms(self) -> int:
        return self.ref_prob.size


@dataclass
class AgentType:
    """An agent type: a density vector with respect to the reference measure."""

    density: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.density = _as_float_array(self.density, "density")
        if np.any(self.density < 0.0) or not np.all(np.isfinite(self.density)):
            raise ValidationError([f"type {self.label or '?'}: density must be finite and >= 0"])

    @property
    def sup_norm(self) -> float:
        """Essential bound of the density; finite by construction, kept for diagnostics."""
        return float(self.density.max())

    def check_normalized(self, states: StateSpace) -> float:
        """Return |E_Q[d] - 1|; a valid density integrates to one under Q."""
        if self.density.size != states.n_atoms:
            raise DimensionError(
                f"type {self.label or '?'}: density length {self.density.size} "
                f"!= {states.n_atoms} atoms"
            )
        return abs(float(states.ref_prob @ self.density) - 1.0)


@dataclass
class UtilitySpec:
    """A utility function from a small parametric family, or tabulated.

    Families: crra (z^gamma / gamma, gamma in (0,1)), log, cara
    (1 - exp(-alpha z), alpha > 0), linear, and tabulated (monotone cubic
    through values, optionally with derivatives, on a strictly increasing
    grid). Evaluation, derivative and inverse are exposed; all three are
    vectorized over numpy arrays.
    """

    family: str
    domain: str = ""
    gamma: float | None = None
    alpha: float | None = None
    grid: np.ndarray | None = None
    values: np.ndarray | None = None
    derivs: np.ndarray | None = None

    def __post_init__(self):
        self.family = str(self.family).lower()
        violations = []
        if self.family not in _DEFAULT_DOMAIN:
            raise ValidationError([f"unknown utility family {self.family!r}"])
        if not self.domain:
            self.domain = _DEFAULT_DOMAIN[self.family]
        if self.domain not in (HALF_LINE, WHOLE_LINE):
            violations.append(f"unknown domain {self.domain!r}")
        if self.family == CRRA:
            if self.gamma is None or not (0.0 < self.gamma < 1.0):
                violations.append(f"crra requires gamma in (0,1), got {self.gamma!r}")
            self.domain = HALF_LINE
        if self.family == LOG:
            self.domain = HALF_LINE
        if self.family == CARA and (self.alpha is None or self.alpha <= 0.0):
            violations.append(f"cara requires alpha > 0, got {self.alpha!r}")
        if self.family == TABULATED:
            violations.extend(self._init_tabulated())
        if violations:
            raise ValidationError(violations)

    def _init_tabulated(self) -> list[str]:
        out = []
        if self.grid is None or self.values is None:
            return ["tabulated utility needs grid and values"]
        self.grid = _as_float_array(self.grid, "grid")
        self.values = _as_float_array(self.values, "values")
        if self.grid.size != self.values.size or self.grid.size < 3:
            return ["tabulated grid/values must share a length >= 3"]
        if np.any(np.diff(self.grid) <= 0):
            out.append("tabulated grid must be strictly increasing")
        if np.any(np.diff(self.values) <= 0):
            out.append("tabulated values must be strictly increasing")
        scale = max(abs(self.values).max(), 1.0)
        slopes = np.diff(self.values) / np.diff(self.grid)
        if np.any(np.diff(slopes) > 1e-9 * scale):
            out.append("tabulated values must be concave on the grid")
        if self.derivs is not None:
            self.derivs = _as_float_array(self.derivs, "derivs")
            if self.derivs.size != self.grid.size:
                out.append("tabulated derivs length must match grid")
            elif np.any(self.derivs <= 0):
                out.append("tabulated derivatives must be strictly positive")
        if out:
            return out
        if self.grid[0] < 0:
            self.domain = WHOLE_LINE
        if self.derivs is not None:
            self._fwd = CubicHermiteSpline(self.grid, self.values, self.derivs)
        else:
            self._fwd = PchipInterpolator(self.grid, self.values)
        self._fwd_deriv = self._fwd.derivative()
        return out

    # -- evaluation ---------------------------------------------------------

    def _check_domain(self, z: np.ndarray) -> np.ndarray:
        """Reject out-of-domain wealth; boundary noise within 1e-12 is clipped."""
        if self.family == LOG:
            if np.any(z <= 0.0):
                raise DomainError(f"log utility undefined at wealth {z.min()!r}")
        elif self.family == TABULATED:
            lo, hi = self.grid[0], self.grid[-1]
            pad = 1e-12 * max(hi - lo, 1.0)
            if np.any(z < lo - pad) or np.any(z > hi + pad):
                raise DomainError("tabulated utility evaluated outside its grid")
        elif self.domain == HALF_LINE:
            pad = 1e-12 * max(1.0, float(np.max(np.abs(z), initial=0.0)))
            if np.any(z < -pad):
                raise DomainError(
                    f"{self.family} utility on the half line undefined at {z.min()!r}"
                )
            return np.maximum(z, 0.0)
        return z

    def value(self, z):
        zz = self._check_domain(np.asarray(z, dtype=float))
        if self.family == CRRA:
            out = np.power(zz, self.gamma) / self.gamma
        elif self.family == LOG:
            out = np.log(zz)
        elif self.family == CARA:
            out = 1.0 - np.exp(-self.alpha * zz)
        elif self.family == LINEAR:
            out = zz.copy()
        else:
            lo, hi = self.grid[0], self.grid[-1]
            out = self._fwd(np.clip(zz, lo, hi))
        return float(out) if np.ndim(z) == 0 else out

    def deriv(self, z):
        zz = self._check_domain(np.asarray(z, dtype=float))
        if self.family == CRRA:
            with np.errstate(divide="ignore"):
                out = np.power(zz, self.gamma - 1.0)
        elif self.family == LOG:
            out = 1.0 / zz
        elif self.family == CARA:
            out = self.alpha * np.exp(-self.alpha * zz)
        elif self.family == LINEAR:
            out = np.ones_like(zz)
        else:
            lo, hi = self.grid[0], self.grid[-1]
            out = self._fwd_deriv(np.clip(zz, lo, hi))
        return float(out) if np.ndim(z) == 0 else out

    def inverse(self, y):
        """Wealth level attaining utility y; exact for the closed families."""
        yy = np.asarray(y, dtype=float)
        if self.family == CRRA:
            if np.any(yy < 0.0):
                raise DomainError("crra utility level must be >= 0")
            out = np.power(self.gamma * yy, 1.0 / self.gamma)
        elif self.family == LOG:
            out = np.exp(yy)
        elif self.family == CARA:
            if np.any(yy >= 1.0):
                raise DomainError("cara utility level must be < 1")
            out = -np.log1p(-yy) / self.alpha
        elif self.family == LINEAR:
            out = yy.copy()
        else:
            out = self._inverse_tabulated(yy)
        return float(out) if np.ndim(y) == 0 else out

    def _inverse_tabulated(self, yy: np.ndarray) -> np.ndarray:
        v_lo, v_hi = self.values[0], self.values[-1]
        pad = 1e-9 * max(v_hi - v_lo, 1.0)
        if np.any(yy < v_lo - pad) or np.any(yy > v_hi + pad):
            raise DomainError("tabulated utility level outside the tabulated range")
        flat = np.clip(np.ravel(yy), v_lo, v_hi)
        out = np.empty_like(flat)
        for i, target in enumerate(flat):
            out[i] = brentq(
                lambda zz: self._fwd(zz) - target,
                self.grid[0],
                self.grid[-1],
                xtol=1e-13,
                rtol=8.9e-16,
            )
        return out.reshape(np.shape(yy))

    def domain_interval(self) -> tuple[float, float]:
        """Wealth interval on which the utility can be evaluated."""
        if self.family == TABULATED:
            return float(self.grid[0]), float(self.grid[-1])
        if self.family == LOG:
            return np.nextafter(0.0, 1.0), np.inf
        if self.domain == HALF_LINE:
            return 0.0, np.inf
        return -np.inf, np.inf

    # -- serialization ------------------------------------------------------

    def to_json(self) -> dict:
        doc = {"family": self.family, "domain": self.domain}
        if self.gamma is not None:
            doc["gamma"] = self.gamma
        if self.alpha is not None:
            doc["alpha"] = self.alpha
        if self.family == TABULATED:
            doc["grid"] = self.grid.tolist()
            doc["values"] = self.values.tolist()
            if self.derivs is not None:
                doc["derivs"] = self.derivs.tolist()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "UtilitySpec":
        return cls(
            family=doc["family"],
            domain=doc.get("domain", ""),
            gamma=doc.get("gamma"),
            alpha=doc.get("alpha"),
            grid=doc.get("grid"),
            values=doc.get("values"),
            derivs=doc.get("derivs"),
        )


def crra(gamma: float) -> UtilitySpec:
    return UtilitySpec(CRRA, gamma=gamma)


def log_utility() -> UtilitySpec:
    return UtilitySpec(LOG)


def cara(alpha: float, domain: str = WHOLE_LINE) -> UtilitySpec:
    return UtilitySpec(CARA, domain=domain, alpha=alpha)


def linear(domain: str = WHOLE_LINE) -> UtilitySpec:
    return UtilitySpec(LINEAR, domain=domain)


@dataclass
class BeliefSet:
    """Finite ambiguity set: priors over the type list plus penalty values.

    With all penalties zero this is plain worst-case (maxmin) evaluation;
    positive penalties give the variational form min_k { k . v + alpha(k) }.
    """

    priors: np.ndarray    # (n_priors, n_types)
    penalties: np.ndarray  # (n_priors,)

    def __post_init__(self):
        self.priors = np.atleast_2d(np.asarray(self.priors, dtype=float))
        self.penalties = _as_float_array(self.penalties, "penalties")
        violations = []
        if self.priors.shape[0] < 1:
            violations.append("belief set needs at least one prior")
        if self.penalties.size != self.priors.shape[0]:
            violations.append("one penalty per prior required")
        if np.any(self.priors < 0.0):
            violations.append("prior weights must be >= 0")
        sums = self.priors.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > PROB_TOL):
            violations.append("each prior must sum to 1")
        if not np.all(np.isfinite(self.penalties)):
            violations.append("penalties must be finite")
        if violations:
            raise ValidationError(violations)

    @property
    def n_priors(self) -> int:
        return self.priors.shape[0]

    def robust_value(self, type_values: np.ndarray) -> tuple[float, int]:
        """min over priors of expected value plus penalty; ties -> lowest index.

        Per-prior dot products are evaluated one row at a time so that
        re-evaluating the returned worst prior reproduces the value bitwise.
        """
        values = np.asarray(type_values, dtype=float)
        totals = np.array([float(np.dot(k, values)) for k in self.priors])
        totals += self.penalties
        idx = int(np.argmin(totals))
        return float(totals[idx]), idx


@dataclass
class Instance:
    """A full discretized contracting problem.

    Payoff bounds are in currency units per atom; in the half-line setting
    they are the no-short-sale bounds -e_a <= x <= e_p. The reservation
    vector holds one outside-option utility per type and defaults to the
    expected utility of the untouched endowment. Treated as immutable after
    validation, so instances are safe to share across threads.
    """

    states: StateSpace
    types: list[AgentType]
    principal_belief: AgentType
    beliefs: BeliefSet
    e_a: np.ndarray
    e_p: np.ndarray
    u: UtilitySpec
    v: UtilitySpec
    contract_lo: np.ndarray
    contract_hi: np.ndarray
    reservation: np.ndarray | None = None

    def __post_init__(self):
        self.e_a = _as_float_array(self.e_a, "e_a")
        self.e_p = _as_float_array(self.e_p, "e_p")
        self.contract_lo = _as_float_array(self.contract_lo, "contract_lo")
        self.contract_hi = _as_float_array(self.contract_hi, "contract_hi")
        if self.reservation is not None:
            self.reservation = _as_float_array(self.reservation, "reservation")

    @property
    def n_atoms(self) -> int:
        return self.states.n_atoms

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def type_labels(self) -> list[str]:
        return [t.label for t in self.types]

    def type_weights(self) -> np.ndarray:
        """Row j holds q * d_j, the weights of type j's expectation."""
        return np.stack([self.states.ref_prob * t.density for t in self.types])

    def principal_weights(self) -> np.ndarray:
        return self.states.ref_prob * self.principal_belief.density

    def to_json(self) -> dict:
        doc = {
            "states": {"atoms": self.states.atoms, "ref_prob": self.states.ref_prob.tolist()},
            "types": [{"label": t.label, "density": t.density.tolist()} for t in self.types],
            "principal_belief": {
                "label": self.principal_belief.label,
                "density": self.principal_belief.density.tolist(),
            },
            "beliefs": {
                "priors": self.beliefs.priors.tolist(),
                "penalties": self.beliefs.penalties.tolist(),
            },
            "e_a": self.e_a.tolist(),
            "e_p": self.e_p.tolist(),
            "u": self.u.to_json(),
            "v": self.v.to_json(),
            "bounds": {"lo": self.contract_lo.tolist(), "hi": self.contract_hi.tolist()},
        }
        if self.reservation is not None:
            doc["reservation"] = self.reservation.tolist()
        return doc


def expectation(states: StateSpace, agent_type: AgentType, payoff) -> float:
    """E_P[x] = sum_i q_i d_i x_i for the type's measure P."""
    x = np.asarray(payoff, dtype=float)
    if x.shape != (states.n_atoms,):
        raise DimensionError(
            f"payoff length {x.size} does not match {states.n_atoms} atoms"
        )
    if agent_type.density.size != states.n_atoms:
        raise DimensionError("type density length does not match the state space")
    return float((states.ref_prob * agent_type.density) @ x)


def _default_reservation(inst: Instance, violations: list[str]) -> np.ndarray | None:
    """Participation baseline: expected utility of the untouched endowment."""
    try:
        base = inst.u.value(np.maximum(inst.e_a, 1e-8) if inst.u.domain == HALF_LINE else inst.e_a)
    except DomainError as exc:
        violations.append(f"cannot compute default reservation: {exc}")
        return None
    return np.array([expectation(inst.states, t, base) for t in inst.types])


def _spot_check_utility(u: UtilitySpec, lo: float, hi: float, tag: str, violations: list[str]):
    """Sample the utility on a grid and confirm it is increasing and concave."""
    dom_lo, dom_hi = u.domain_interval()
    lo, hi = max(lo, dom_lo), min(hi, dom_hi)
    if hi <= lo:
        hi = lo + 1.0
    z = np.linspace(lo, hi, 65)
    try:
        vals = u.value(z)
    except DomainError as exc:
        violations.append(f"{tag}: {exc}")
        return
    if not np.all(np.isfinite(vals)):
        violations.append(f"{tag}: utility not finite on [{lo:g}, {hi:g}]")
        return
    scale = max(float(np.abs(vals).max()), 1.0)
    if np.any(np.diff(vals) <= 0.0):
        violations.append(f"{tag}: utility not strictly increasing on [{lo:g}, {hi:g}]")
    slopes = np.diff(vals) / np.diff(z)
    if np.any(np.diff(slopes) > 1e-9 * scale):
        violations.append(f"{tag}: utility not concave on [{lo:g}, {hi:g}]")


def _check_instance(inst: Instance) -> list[str]:
    violations: list[str] = []
    m = inst.n_atoms
    if inst.n_types == 0:
        violations.append("type set is empty")
    for t in inst.types + [inst.principal_belief]:
        try:
            gap = t.check_normalized(inst.states)
        except DimensionError as exc:
            violations.append(str(exc))
            continue
        if gap > DENSITY_TOL:
            violations.append(
                f"type {t.label or '?'}: density not normalized (|E_Q[d]-1| = {gap:.3e})"
            )
    if inst.beliefs.priors.shape[1] != inst.n_types:
        violations.append("prior length does not match the number of types")
    for name, vec in (("e_a", inst.e_a), ("e_p", inst.e_p),
                      ("contract_lo", inst.contract_lo), ("contract_hi", inst.contract_hi)):
        if vec.size != m:
            violations.append(f"{name} length {vec.size} does not match {m} atoms")
        elif not np.all(np.isfinite(vec)):
            violations.append(f"{name} contains non-finite entries")
    if inst.contract_lo.size == m and inst.contract_hi.size == m:
        if np.any(inst.contract_lo > inst.contract_hi):
            violations.append("contract_lo exceeds contract_hi on some atom")
    if violations:
        return violations

    wealth_hi = inst.e_a + inst.contract_hi
    if inst.u.domain == HALF_LINE:
        _spot_check_utility(inst.u, 1e-6, float(wealth_hi.max()), "agent utility", violations)
    else:
        span = float(np.abs(wealth_hi).max()) + 1.0
        _spot_check_utility(inst.u, -span, span, "agent utility", violations)
    w_span = float((inst.e_p + np.abs(inst.e_a)).max()) + 1.0
    if inst.v.domain == HALF_LINE:
        _spot_check_utility(inst.v, 1e-6, w_span, "principal utility", violations)
    else:
        _spot_check_utility(inst.v, -w_span, w_span, "principal utility", violations)

    if inst.reservation is None:
        inst.reservation = _default_reservation(inst, violations)
    elif inst.reservation.size != inst.n_types:
        violations.append("reservation length does not match the number of types")

    if violations or inst.reservation is None:
        return violations

    # Feasibility: the agent-best contract (upper bound) must clear every IR
    # constraint, otherwise no individually rational contract exists at all.
    try:
        floor = np.maximum(wealth_hi, 1e-8) if inst.u.domain == HALF_LINE else wealth_hi
        c_best = inst.u.value(floor)
    except DomainError as exc:
        violations.append(f"cannot evaluate agent utility at the upper contract bound: {exc}")
        return violations
    for j, t in enumerate(inst.types):
        if expectation(inst.states, t, c_best) < inst.reservation[j] - FEAS_TOL:
            violations.append(
                f"no individually rational contract for type {t.label or j}"
            )
    return violations


def _instance_from_doc(doc: dict) -> Instance:
    violations: list[str] = []

    def grab(builder, *keys):
        node = doc
        try:
            for key in keys:
                node = node[key]
        except (KeyError, TypeError):
            violations.append(f"missing field {'.'.join(keys)}")
            return None
        try:
            return builder(node)
        except ValidationError as exc:
            violations.extend(exc.violations)
        except (ValueError, TypeError) as exc:
            violations.append(f"{'.'.join(keys)}: {exc}")
        return None

    states = grab(lambda n: StateSpace(ref_prob=n["ref_prob"], atoms=list(n.get("atoms", []))),
                  "states")
    types = grab(
        lambda n: [AgentType(density=t["density"], label=t.get("label", f"theta{i}"))
                   for i, t in enumerate(n)],
        "types",
    )
    belief = grab(
        lambda n: AgentType(density=n["density"], label=n.get("label", "principal")),
        "principal_belief",
    )
    beliefs = grab(lambda n: BeliefSet(priors=n["priors"], penalties=n["penalties"]), "beliefs")
    u = grab(UtilitySpec.from_json, "u")
    v = grab(UtilitySpec.from_json, "v")
    e_a = grab(lambda n: _as_float_array(n, "e_a"), "e_a")
    e_p = grab(lambda n: _as_float_array(n, "e_p"), "e_p")
    lo = grab(lambda n: _as_float_array(n, "bounds.lo"), "bounds", "lo")
    hi = grab(lambda n: _as_float_array(n, "bounds.hi"), "bounds", "hi")
    reservation = None
    if "reservation" in doc:
        reservation = grab(lambda n: _as_float_array(n, "reservation"), "reservation")

    if violations:
        raise ValidationError(violations)
    return Instance(
        states=states, types=types, principal_belief=belief, beliefs=beliefs,
        e_a=e_a, e_p=e_p, u=u, v=v, contract_lo=lo, contract_hi=hi,
        reservation=reservation,
    )


def validate_instance(raw) -> Instance:
    """Validate an instance description and return the checked Instance.

    Accepts an Instance (idempotent: the same object comes back), a dict in
    the documented JSON schema, or a path to a JSON file. Raises
    ValidationError carrying every violated invariant.
    """
    if isinstance(raw, Instance):
        inst = raw
    elif isinstance(raw, (str, Path)):
        with open(raw) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError([f"invalid JSON in {raw}: {exc}"]) from exc
        inst = _instance_from_doc(doc)
    elif isinstance(raw, dict):
        inst = _instance_from_doc(raw)
    else:
        raise ValidationError([f"cannot interpret {type(raw).__name__} as an instance"])
    violations = _check_instance(inst)
    if violations:
        raise ValidationError(violations)
    return inst


def load_instance(path) -> Instance:
    return validate_instance(path)


def save_instance(inst: Instance, path):
    with open(path, "w") as fh:
        json.dump(inst.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
