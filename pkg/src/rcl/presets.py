"""Preset problem instances realizing the package's four applications.

Two reinsurance settings (agent utility on the half line with a bounded
principal, and on the whole line behind the asymptotic-elasticity screen)
and two financial-market settings. The market presets encode the agents'
indirect preferences: after optimal trading, both the CARA and the log
agent rank transfer contracts by E_f[x], so the solver sees a linear agent
utility with zero instance endowment and zero reservation, which reproduces
exactly the linear participation and truth-telling characterization of the
market applications.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .market import (
    MarketModel,
    clamped_linear_drift,
    discretize_terminal,
    tilted_density,
)
from .model import (
    HALF_LINE,
    WHOLE_LINE,
    AgentType,
    BeliefSet,
    Instance,
    StateSpace,
    cara,
    crra,
    linear,
    log_utility,
    validate_instance,
)
from .transform import ae_check

PRESET_NAMES = (
    "reinsurance_halfline",
    "reinsurance_wholeline",
    "cara_hedging",
    "log_delegation",
)


@dataclass
class PresetBundle:
    """A validated instance plus whatever market data the preset rests on."""

    instance: Instance
    market_model: MarketModel | None = None
    extras: dict = field(default_factory=dict)


def _merge_params(defaults: dict, params: dict | None, name: str) -> dict:
    merged = dict(defaults)
    for key, value in (params or {}).items():
        if value is None:
            continue
        if key not in defaults:
            raise ValidationError([f"preset {name} has no parameter {key!r}"])
        merged[key] = value
    return merged


def _tilt_types(q: np.ndarray, n_types: int, tilt: float) -> list[AgentType]:
    """Types around the reference measure: raised on low atoms vs high atoms."""
    m = q.size
    pattern = np.cos(np.pi * np.arange(m) / max(m - 1, 1))
    types = []
    for j in range(n_types):
        s = tilt * (2.0 * j / max(n_types - 1, 1) - 1.0) if n_types > 1 else 0.0
        raw = 1.0 + s * pattern
        types.append(AgentType(density=raw / (q @ raw), label=f"theta{j}"))
    return types


def _ambiguity(n_types: int, n_priors: int, penalty: float) -> BeliefSet:
    """Uniform prior plus point priors on the first types, optionally penalized."""
    priors = [np.full(n_types, 1.0 / n_types)]
    penalties = [0.0]
    for j in range(min(n_priors - 1, n_types)):
        point = np.zeros(n_types)
        point[j] = 1.0
        priors.append(point)
        penalties.append(penalty)
    return BeliefSet(priors=np.stack(priors), penalties=np.array(penalties))


def _reinsurance_halfline(params: dict | None) -> PresetBundle:
    p = _merge_params(
        {"n_atoms": 2, "n_types": 2, "tilt": 0.4, "n_priors": 2, "penalty": 0.0,
         "v_alpha": 1.0},
        params, "reinsurance_halfline",
    )
    m, n = int(p["n_atoms"]), int(p["n_types"])
    q = np.full(m, 1.0 / m)
    states = StateSpace(ref_prob=q)
    e_a = 1.0 + 0.25 * np.arange(m)
    e_p = 2.0 - 0.8 * np.arange(m) / max(m, 2)
    inst = Instance(
        states=states,
        types=_tilt_types(q, n, float(p["tilt"])),
        principal_belief=AgentType(density=np.ones(m), label="principal"),
        beliefs=_ambiguity(n, int(p["n_priors"]), float(p["penalty"])),
        e_a=e_a,
        e_p=e_p,
        u=log_utility(),
        v=cara(float(p["v_alpha"]), HALF_LINE),
        contract_lo=-e_a,
        contract_hi=e_p,
    )
    return PresetBundle(instance=validate_instance(inst))


def _reinsurance_wholeline(params: dict | None) -> PresetBundle:
    p = _merge_params(
        {"n_atoms": 2, "n_types": 2, "tilt": 0.4, "n_priors": 2, "penalty": 0.0,
         "gamma": 0.5, "agent_family": "crra", "v_alpha": 0.5, "cap_scale": 2.0},
        params, "reinsurance_wholeline",
    )
    family = str(p["agent_family"]).lower()
    if family == "crra":
        u = crra(float(p["gamma"]))
    elif family == "log":
        u = log_utility()
    elif family == "linear":
        u = linear(HALF_LINE)
    elif family == "cara":
        u = cara(1.0, HALF_LINE)
    else:
        raise ValidationError([f"unknown agent_family {family!r}"])

    report = ae_check(u)
    if not report.passed:
        raise ValidationError(
            [
                "whole-line preset refused: asymptotic elasticity estimate "
                f"{report.estimate:.6f} is not below 1 - margin"
            ]
        )
    m, n = int(p["n_atoms"]), int(p["n_types"])
    q = np.full(m, 1.0 / m)
    e_a = 1.0 + 0.25 * np.arange(m)
    e_p = 2.0 + 0.5 * np.arange(m)
    cap = float(p["cap_scale"]) * e_p
    # Finiteness screen: the best attainable utility from the capped transfer
    # set is bounded by the utility of the largest reachable wealth.
    top_wealth = float((np.max(e_a) + cap).max())
    screen = u.value(np.linspace(1e-8, top_wealth, 64))
    if not np.all(np.isfinite(screen)):
        raise ValidationError(
            ["whole-line preset refused: attainable utility estimate is not finite"]
        )
    inst = Instance(
        states=StateSpace(ref_prob=q),
        types=_tilt_types(q, n, float(p["tilt"])),
        principal_belief=AgentType(density=np.ones(m), label="principal"),
        beliefs=_ambiguity(n, int(p["n_priors"]), float(p["penalty"])),
        e_a=e_a,
        e_p=e_p,
        u=u,
        v=cara(float(p["v_alpha"]), WHOLE_LINE),
        contract_lo=-e_a,
        contract_hi=cap,
    )
    return PresetBundle(
        instance=validate_instance(inst),
        extras={"ae_estimate": report.estimate},
    )


def _market_bundle(params: dict | None, name: str, agent_kind: str) -> PresetBundle:
    p = _merge_params(
        {"n_nodes": 12, "horizon": 1.0, "alpha": 1.0, "beta": 0.5,
         "slopes": (0.0, 0.35, -0.35), "support": 2.0, "e_a_level": 1.0,
         "e_p_level": 2.0, "exposure": 0.4, "x_cap": 1.0, "n_priors": 2,
         "penalty": 0.0},
        params, name,
    )
    nodes, weights = discretize_terminal(float(p["horizon"]), int(p["n_nodes"]))
    slopes = tuple(np.atleast_1d(p["slopes"]).tolist())
    drifts = [
        clamped_linear_drift(f"slope={s:+.2f}", nodes, float(s), float(p["support"]))
        for s in slopes
    ]
    model = MarketModel(
        horizon=float(p["horizon"]), nodes=nodes, weights=weights, drift_types=drifts
    )
    types = []
    for i, drift in enumerate(model.drift_types):
        density = tilted_density(model, i)
        types.append(AgentType(density=density.values, label=drift.label))
    m = model.n_nodes
    n = len(types)
    x_cap = float(p["x_cap"])
    e_p = float(p["e_p_level"]) - float(p["exposure"]) * nodes
    # Indirect preferences over transfers are monotone in E_f[x], so the
    # solver-facing instance uses a linear agent utility, zero endowment and
    # zero reservation (keeping x = 0 attains exactly the outside option).
    inst = Instance(
        states=StateSpace(ref_prob=weights, atoms=[f"w={w:+.4f}" for w in nodes]),
        types=types,
        principal_belief=AgentType(density=np.ones(m), label="reference"),
        beliefs=_ambiguity(n, int(p["n_priors"]), float(p["penalty"])),
        e_a=np.zeros(m),
        e_p=e_p,
        u=linear(WHOLE_LINE),
        v=cara(1.0, WHOLE_LINE),
        contract_lo=np.full(m, -x_cap),
        contract_hi=np.full(m, x_cap),
        reservation=np.zeros(n),
    )
    extras = {
        "agent_kind": agent_kind,
        "alpha": float(p["alpha"]),
        "beta": float(p["beta"]),
        "market_e_a": np.full(m, float(p["e_a_level"])),
    }
    return PresetBundle(
        instance=validate_instance(inst), market_model=model, extras=extras
    )


def build_preset_bundle(name: str, params: dict | None = None) -> PresetBundle:
    if name == "reinsurance_halfline":
        return _reinsurance_halfline(params)
    if name == "reinsurance_wholeline":
        return _reinsurance_wholeline(params)
    if name == "cara_hedging":
        return _market_bundle(params, "cara_hedging", "cara")
    if name == "log_delegation":
        return _market_bundle(params, "log_delegation", "log")
    raise ValidationError(
        [f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}"]
    )


def build_preset(name: str, params: dict | None = None) -> Instance:
    """Construct and validate one of the named preset instances."""
    return build_preset_bundle(name, params).instance
