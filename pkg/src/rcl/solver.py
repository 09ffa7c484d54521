"""Robust mechanism optimization and its brute-force grid oracle.

The principal's objective over mechanisms is concave (her utility is concave
and the inverse agent utility is convex), the constraint set is a box
intersected with half-spaces, and the inner infimum over the finite belief
set is an exact minimum. The solver runs projected subgradient ascent with a
diminishing step; feasibility after each step is restored by clipping to the
box followed by Dykstra's alternating projections onto the constraint rows.
The oracle enumerates grid-level assignments exhaustively and is kept free
of any solver machinery so the two can check each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import (
    DEFAULT_TOL,
    FeasibilityReport,
    LinearConstraintSystem,
    Mechanism,
    build_system,
    check_mechanism,
)
from .errors import RangeError, SizeCapError, ValidationError
from .transform import UtilityUnitsInstance

HARD_ASSIGNMENT_CAP = 10_000_000
_CHUNK = 1 << 16


@dataclass
class SolveOptions:
    max_iters: int = 50_000
    step_scale: float | None = None  # default 0.1 * largest bound range
    tol: float = 1e-8
    projection_max_sweeps: int = 1000
    seed: int = 42
    record_trace: bool = False

    def __post_init__(self):
        violations = []
        if self.max_iters <= 0:
            violations.append("max_iters must be positive")
        if self.step_scale is not None and self.step_scale <= 0:
            violations.append("step_scale must be positive")
        if self.tol <= 0:
            violations.append("tol must be positive")
        if self.projection_max_sweeps <= 0:
            violations.append("projection_max_sweeps must be positive")
        if violations:
            raise ValidationError(violations)


@dataclass
class SolveResult:
    mechanism: Mechanism
    value: float
    worst_prior: int
    iterations: int
    feasibility: FeasibilityReport
    converged: bool
    trace: list[tuple[int, float, float]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "worst_prior": self.worst_prior,
            "iterations": self.iterations,
            "converged": self.converged,
            "feasibility": self.feasibility.to_json(),
            "mechanism": self.mechanism.to_json(),
        }


def _rows_dot(matrix: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # one dot per row keeps results bitwise identical across matrix shapes,
    # which the exact value-identity checks between menus and mechanisms use
    return np.array([row @ weights for row in matrix])


def principal_type_values(uu: UtilityUnitsInstance, mech: Mechanism) -> np.ndarray:
    """Principal's expected utility per reported type, under her own belief."""
    if not mech.within_bounds(uu, tol=1e-6):
        raise RangeError("mechanism leaves the transformed contract bounds")
    c = np.clip(mech.assignment, uu.c_lo, uu.c_hi)
    inst = uu.base
    agent_wealth = inst.u.inverse(c)
    principal_wealth = inst.e_p + inst.e_a - agent_wealth
    return _rows_dot(inst.v.value(principal_wealth), inst.principal_weights())


def principal_value(uu: UtilityUnitsInstance, mech: Mechanism) -> tuple[float, int]:
    """Robust objective of a mechanism: worst prior (plus penalty) applied
    to the per-type values; ties resolve to the lowest prior index."""
    return uu.base.beliefs.robust_value(principal_type_values(uu, mech))


def _subgradient(uu: UtilityUnitsInstance, c: np.ndarray) -> tuple[float, int, np.ndarray]:
    """Objective value, active worst prior and an ascent subgradient at c.

    At a kink (several priors attaining the minimum) the lowest-index active
    prior's gradient is used, the standard choice for subgradient methods.
    """
    inst = uu.base
    c = np.clip(c, uu.c_lo, uu.c_hi)
    agent_wealth = inst.u.inverse(c)
    principal_wealth = inst.e_p + inst.e_a - agent_wealth
    type_values = _rows_dot(inst.v.value(principal_wealth), inst.principal_weights())
    value, worst = inst.beliefs.robust_value(type_values)
    kappa = inst.beliefs.priors[worst]
    with np.errstate(divide="ignore", invalid="ignore"):
        marginal = -(inst.principal_weights() * inst.v.deriv(principal_wealth))
        marginal = marginal / inst.u.deriv(agent_wealth)
    marginal = np.where(np.isfinite(marginal), marginal, 0.0)
    return value, worst, kappa[:, None] * marginal


def _project_halfspace_pair(x, a1, b1, a2, b2):
    """Exact projection onto the intersection of two half-spaces a.x >= b.

    Opposite truth-telling rows of one type pair are close to antiparallel,
    which makes one-row-at-a-time sweeps crawl; projecting the pair jointly
    removes that pathology. When both rows bind, the projection solves the
    2x2 Gram system of the active boundaries.
    """
    v1 = b1 - a1 @ x
    v2 = b2 - a2 @ x
    if v1 <= 0.0 and v2 <= 0.0:
        return x
    g11 = a1 @ a1
    g22 = a2 @ a2
    if v1 > 0.0:
        p = x + (v1 / g11) * a1
        if b2 - a2 @ p <= 1e-14 * max(1.0, abs(b2)):
            return p
    if v2 > 0.0:
        p = x + (v2 / g22) * a2
        if b1 - a1 @ p <= 1e-14 * max(1.0, abs(b1)):
            return p
    g12 = a1 @ a2
    det = g11 * g22 - g12 * g12
    if det <= 1e-14 * g11 * g22:
        # (anti)parallel rows: fall back to the more violated one; the sweep
        # residual check catches genuinely inconsistent data
        if v1 / np.sqrt(g11) >= v2 / np.sqrt(g22):
            return x + (v1 / g11) * a1
        return x + (v2 / g22) * a2
    l1 = (v1 * g22 - v2 * g12) / det
    l2 = (v2 * g11 - v1 * g12) / det
    return x + l1 * a1 + l2 * a2


def _constraint_blocks(system: LinearConstraintSystem):
    """Group rows into Dykstra blocks: IC pairs (j,k)/(k,j) jointly, IR singly."""
    pair_of: dict[tuple[int, int], list[int]] = {}
    singles: list[int] = []
    for idx, row in enumerate(system.rows):
        if row.kind == "IC":
            key = (min(row.j, row.k), max(row.j, row.k))
            pair_of.setdefault(key, []).append(idx)
        else:
            singles.append(idx)
    blocks = [tuple(v) for _, v in sorted(pair_of.items())]
    blocks.extend((idx,) for idx in singles)
    return blocks


def _active_set_projection(y, x_start, lo, hi, a, b, tol):
    """Exact nearest-point projection onto {a x >= b, lo <= x <= hi}.

    Standard primal active-set method for the least-distance problem,
    started from a (tol-)feasible point: at each pivot the equality
    projection onto the working set is computed through its Gram system,
    the step is cut at the first blocking constraint, and working rows with
    negative multipliers are dropped. Box faces and constraint rows are
    treated uniformly. Finite up to the pivot cap; used when the cyclic
    sweeps stall near degenerate faces.
    """
    dim = y.size
    n_rows = b.size
    n_cons = n_rows + 2 * dim

    def normal(idx):
        if idx < n_rows:
            return a[idx]
        e = np.zeros(dim)
        k = idx - n_rows
        if k < dim:
            e[k] = 1.0
        else:
            e[k - dim] = -1.0
        return e

    def rhs(idx):
        if idx < n_rows:
            return b[idx]
        k = idx - n_rows
        return lo[k] if k < dim else -hi[k - dim]

    def slacks(x):
        parts = [a @ x - b] if n_rows else []
        parts.extend([x - lo, hi - x])
        return np.concatenate(parts)

    def slopes(p):
        parts = [a @ p] if n_rows else []
        parts.extend([p, -p])
        return np.concatenate(parts)

    x = x_start.copy()
    working: list[int] = []
    in_working = np.zeros(n_cons, dtype=bool)
    scale = max(1.0, float(np.max(np.abs(y))))
    for _ in range(10 * n_cons + 100):
        if working:
            rows = np.stack([normal(i) for i in working])
            gram = rows @ rows.T
            target = np.array([rhs(i) for i in working]) - rows @ y
            try:
                lam = np.linalg.solve(gram, target)
            except np.linalg.LinAlgError:
                lam = np.linalg.lstsq(gram, target, rcond=None)[0]
            x_target = y + rows.T @ lam
        else:
            lam = np.empty(0)
            x_target = y
        step = x_target - x
        if float(np.max(np.abs(step))) <= 1e-12 * scale:
            if working and float(np.min(lam)) < -1e-11:
                drop = int(np.argmin(lam))
                in_working[working[drop]] = False
                working.pop(drop)
                continue
            ok = float(np.max(-slacks(x), initial=0.0)) <= tol
            return x, ok
        s = slacks(x)
        ds = slopes(step)
        closing = (~in_working) & (ds < -1e-14 * scale)
        alpha = 1.0
        blocker = -1
        if np.any(closing):
            ratios = np.maximum(s[closing], 0.0) / -ds[closing]
            local = int(np.argmin(ratios))
            if ratios[local] < alpha:
                alpha = float(ratios[local])
                blocker = int(np.flatnonzero(closing)[local])
        x = x + alpha * step
        if blocker >= 0:
            working.append(blocker)
            in_working[blocker] = True
    # pivot cap hit (degenerate cycling): the iterate is still feasible for
    # the working polytope, so hand it back whenever it clears the tolerance
    return x, float(np.max(-slacks(x), initial=0.0)) <= tol


def _residual(x, lo, hi, a, b):
    return max(
        float(np.max(b - a @ x, initial=0.0)) if b.size else 0.0,
        float(np.max(lo - x, initial=0.0)),
        float(np.max(x - hi, initial=0.0)),
    )


def _dykstra_sweeps(x, lo, hi, a, b, blocks, tol, sweeps):
    """Cyclic Dykstra over box + constraint blocks for a fixed sweep budget."""
    corrections = np.zeros((len(blocks) + 1, x.size))
    for sweep in range(1, sweeps + 1):
        y = x + corrections[0]
        x = np.clip(y, lo, hi)
        corrections[0] = y - x
        for bi, block in enumerate(blocks):
            y = x + corrections[bi + 1]
            if len(block) == 2:
                r, s = block
                x = _project_halfspace_pair(y, a[r], b[r], a[s], b[s])
            else:
                (r,) = block
                gap = b[r] - a[r] @ y
                norm_sq = a[r] @ a[r]
                x = y + (gap / norm_sq) * a[r] if gap > 0.0 and norm_sq > 0.0 else y
            corrections[bi + 1] = y - x
        if _residual(x, lo, hi, a, b) <= tol:
            return x, True, sweep
    return x, False, sweeps


def _project_feasible(x0, start, lo, hi, a, b, blocks, tol, max_sweeps,
                      handoff=3):
    """Project onto box /\\ constraint blocks: Dykstra sweeps, exact handoff.

    Cyclic Dykstra handles the common case in a couple of warm-started
    sweeps, but it crawls along near-degenerate faces (several truth-telling
    rows active at once). After a short sweep budget the exact active-set
    projection takes over, warm-started from the feasible `start` point
    (rows are relaxed by that point's sub-tolerance slack deficits so the
    start is exactly feasible). If even that fails, the remaining Dykstra
    budget is spent before failure is reported -- never masked.
    """
    x, ok, sweeps = _dykstra_sweeps(
        np.clip(x0, lo, hi), lo, hi, a, b, blocks, tol, min(max_sweeps, handoff)
    )
    if ok:
        return x, True, sweeps
    start_in_box = np.clip(start, lo, hi)
    relaxed = b - np.maximum(b - a @ start_in_box, 0.0) if b.size else b
    x_exact, ok = _active_set_projection(
        np.asarray(x0, dtype=float), start_in_box, lo, hi, a, relaxed, tol
    )
    if ok and _residual(x_exact, lo, hi, a, b) <= tol:
        return x_exact, True, sweeps
    if max_sweeps > handoff:
        x, ok, more = _dykstra_sweeps(x, lo, hi, a, b, blocks, tol,
                                      max_sweeps - handoff)
        if ok:
            return x, True, sweeps + more
    return x, False, max_sweeps


def solve_mechanism(
    uu: UtilityUnitsInstance,
    opts: SolveOptions | None = None,
    seed_mechanism: Mechanism | None = None,
) -> SolveResult:
    """Maximize the robust objective over feasible mechanisms.

    Starts from the pooling mechanism at the upper contract bound (always
    feasible for a validated instance) or from `seed_mechanism`; the returned
    value never falls below the value of a feasible seed. A projection that
    fails to reach `opts.tol` within its sweep budget is surfaced as
    converged=False rather than silently returning an infeasible point.
    A solve is single-threaded and fully deterministic; separate solves
    share no mutable state and can run in parallel.
    """
    opts = opts or SolveOptions()
    system = build_system(uu)
    a, b = system.matrix_form()
    blocks = _constraint_blocks(system)
    n, m = system.n_types, system.n_atoms
    lo = np.tile(uu.c_lo, n)
    hi = np.tile(uu.c_hi, n)
    span = float(np.max(uu.c_hi - uu.c_lo))
    step0 = opts.step_scale if opts.step_scale is not None else 0.1 * max(span, 1e-12)

    def as_mech(flat):
        return Mechanism(flat.reshape(n, m).copy())

    def robust_value(flat):
        vals = _subgradient(uu, flat.reshape(n, m))
        return vals[0]

    best_x = None
    best_val = -np.inf
    if seed_mechanism is not None:
        seed_flat = seed_mechanism.assignment.ravel()
        if seed_mechanism.within_bounds(uu) and check_mechanism(
            system, seed_mechanism, opts.tol
        ).feasible:
            best_x = np.clip(seed_flat, lo, hi)
            best_val = robust_value(best_x)
        x0 = seed_flat
    else:
        x0 = np.tile(uu.c_hi, n)
    anchor = np.tile(uu.c_hi, n)  # pooling at the top: feasible for any
    # validated instance (truth-telling slack is exactly zero, participation
    # clears by validation)

    x, ok, _ = _project_feasible(
        x0, anchor, lo, hi, a, b, blocks, opts.tol, opts.projection_max_sweeps
    )
    trace: list[tuple[int, float, float]] = []
    if not ok:
        mech = as_mech(best_x if best_x is not None else np.clip(x, lo, hi))
        report = check_mechanism(system, mech, opts.tol)
        value, worst = principal_value(uu, mech)
        return SolveResult(mech, value, worst, 0, report, converged=False, trace=trace)

    val, _, grad = _subgradient(uu, x.reshape(n, m))
    if val > best_val:
        best_val, best_x = val, x.copy()

    iterations = 0
    for t in range(1, opts.max_iters + 1):
        iterations = t
        flat_grad = grad.ravel()
        gnorm = float(np.linalg.norm(flat_grad))
        if gnorm < 1e-15:
            break  # flat objective: the current feasible point is optimal
        x_trial = x + (step0 / np.sqrt(t)) * flat_grad / gnorm
        x_prev = x  # feasible: output of the previous projection
        x, ok, _ = _project_feasible(
            x_trial, x_prev, lo, hi, a, b, blocks, opts.tol,
            opts.projection_max_sweeps,
        )
        if not ok:
            mech = as_mech(best_x if best_x is not None else np.clip(x, lo, hi))
            report = check_mechanism(system, mech, opts.tol)
            value, worst = principal_value(uu, mech)
            return SolveResult(
                mech, value, worst, t, report, converged=False, trace=trace
            )
        val, _, grad = _subgradient(uu, x.reshape(n, m))
        if val > best_val:
            best_val, best_x = val, x.copy()
        if opts.record_trace:
            residual = float(np.max(b - a @ x, initial=0.0)) if b.size else 0.0
            trace.append((t, val, max(residual, 0.0)))

    mech = as_mech(best_x)
    report = check_mechanism(system, mech, opts.tol)
    value, worst = principal_value(uu, mech)
    return SolveResult(
        mech, value, worst, iterations, report, converged=report.feasible, trace=trace
    )


def grid_contracts(uu: UtilityUnitsInstance, levels_per_atom: int) -> np.ndarray:
    """All contracts on the per-atom grid of equally spaced utility levels.

    Rows are ordered lexicographically with atom 0 most significant.
    """
    if levels_per_atom < 1:
        raise RangeError("levels_per_atom must be >= 1")
    grids = [
        np.linspace(uu.c_lo[i], uu.c_hi[i], levels_per_atom)
        for i in range(uu.n_atoms)
    ]
    mesh = np.meshgrid(*grids, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, uu.n_atoms)


def contract_values(uu: UtilityUnitsInstance, contracts: np.ndarray) -> np.ndarray:
    """Principal's expected utility of each contract (same for every type)."""
    inst = uu.base
    agent_wealth = inst.u.inverse(np.clip(contracts, uu.c_lo, uu.c_hi))
    principal_wealth = inst.e_p + inst.e_a - agent_wealth
    return _rows_dot(inst.v.value(principal_wealth), inst.principal_weights())


def enumerate_best_assignment(
    contracts: np.ndarray,
    uu: UtilityUnitsInstance,
    tol: float = DEFAULT_TOL,
    max_assignments: int = HARD_ASSIGNMENT_CAP,
) -> tuple[np.ndarray, float, int]:
    """Exhaustively search type->contract assignments for the robust optimum.

    Returns (assignment indices, robust value, number of assignments). Only
    assignments passing the IC/IR rows at `tol` count; ties resolve to the
    lexicographically smallest index tuple. Raises SizeCapError when the
    assignment count exceeds the cap.
    """
    inst = uu.base
    n = inst.n_types
    n_contracts = int(contracts.shape[0])
    count = n_contracts**n
    cap = min(int(max_assignments), HARD_ASSIGNMENT_CAP)
    if count > cap:
        raise SizeCapError(
            f"{count} assignments of {n_contracts} contracts to {n} types "
            f"exceed the cap {cap}"
        )
    weights = inst.type_weights()
    e_mat = weights @ contracts.T          # (n, G): agent value of each contract
    values = contract_values(uu, contracts)
    reservation = np.asarray(uu.reservation, dtype=float)
    priors = inst.beliefs.priors
    penalties = inst.beliefs.penalties
    type_range = np.arange(n)

    best_val = -np.inf
    best_idx: np.ndarray | None = None
    for start in range(0, count, _CHUNK):
        stop = min(start + _CHUNK, count)
        idx = np.array(
            np.unravel_index(np.arange(start, stop), (n_contracts,) * n)
        ).T
        own = e_mat[type_range[None, :], idx]          # (B, n)
        cross = e_mat.T[idx]                           # (B, n, n): [b, k, j]
        ic_ok = np.all(own[:, None, :] >= cross - tol, axis=(1, 2))
        ir_ok = np.all(own >= reservation[None, :] - tol, axis=1)
        feasible = ic_ok & ir_ok
        if not np.any(feasible):
            continue
        robust = (values[idx] @ priors.T + penalties).min(axis=1)
        robust[~feasible] = -np.inf
        local = int(np.argmax(robust))
        if robust[local] > best_val:
            best_val = float(robust[local])
            best_idx = idx[local].copy()
    if best_idx is None:
        raise ValidationError(["no feasible assignment among the candidate contracts"])
    return best_idx, best_val, count


def grid_oracle(
    uu: UtilityUnitsInstance,
    levels_per_atom: int,
    max_assignments: int = HARD_ASSIGNMENT_CAP,
) -> SolveResult:
    """Exact robust optimum over the grid of per-atom contract levels.

    Independent of the subgradient solver: plain enumeration filtered by the
    constraint rows. The assignment count levels^(atoms*types) must stay
    within the cap; the error carries the computed count.
    """
    n, m = uu.n_types, uu.n_atoms
    count = levels_per_atom ** (m * n)
    cap = min(int(max_assignments), HARD_ASSIGNMENT_CAP)
    if count > cap:
        raise SizeCapError(
            f"{count} grid assignments (levels={levels_per_atom}, atoms={m}, "
            f"types={n}) exceed the cap {cap}"
        )
    contracts = grid_contracts(uu, levels_per_atom)
    best_idx, _, evaluated = enumerate_best_assignment(
        contracts, uu, tol=DEFAULT_TOL, max_assignments=max_assignments
    )
    mech = Mechanism(contracts[best_idx])
    system = build_system(uu)
    report = check_mechanism(system, mech, DEFAULT_TOL)
    value, worst = principal_value(uu, mech)
    return SolveResult(
        mechanism=mech,
        value=value,
        worst_prior=worst,
        iterations=evaluated,
        feasibility=report,
        converged=True,
    )
