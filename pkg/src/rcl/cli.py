"""Command-line runner: configuration, batch execution, report emission.

Every command writes `result.json` into the output directory; the
mechanism-producing commands also write `summary.csv` (one row per type and
atom) and `solve` writes `trace.csv` with the iteration history. Outputs are
byte-identical for identical configuration and seed: floats are rendered via
their shortest round-trip representation and JSON keys are sorted.

Exit codes: 0 success, 1 invalid input or caps exceeded, 2 honest
non-convergence of the solver.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import market as mkt
from .constraints import Mechanism, build_system, check_mechanism
from .errors import RclError
from .menu import equivalence_check, extract_mechanism, solve_menu
from .model import cara as cara_spec
from .model import load_instance, log_utility
from .presets import PRESET_NAMES, PresetBundle, build_preset_bundle
from .solver import SolveOptions, grid_contracts, grid_oracle, solve_mechanism
from .transform import ae_check, from_utility_units, to_utility_units

COMMANDS = ("solve", "menu", "equivalence", "market", "ae-check", "oracle")

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NOT_CONVERGED = 2


@dataclass
class RunConfig:
    command: str
    preset: str | None = None
    instance: str | None = None
    out: str = "out"
    seed: int = 42
    max_iters: int | None = None
    tol: float | None = None
    levels: int | None = None
    beta: tuple[float, ...] | None = None
    alpha: float | None = None

    def echo(self) -> dict:
        doc = asdict(self)
        doc["beta"] = list(self.beta) if self.beta is not None else None
        doc.pop("out")  # output location is not part of the computation
        return doc


def _fmt(value) -> str:
    """Shortest round-trip decimal rendering for floats; str otherwise."""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    return str(value)


def _write_json(path: Path, doc: dict):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows: list[list]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])


def _write_trace(path: Path, trace):
    _write_csv(path, ["iter", "value", "max_violation"],
               [[t, v, r] for t, v, r in trace])


def _write_summary(path: Path, uu, mech: Mechanism):
    """Per-type, per-atom table of the mechanism with its constraint slacks."""
    system = build_system(uu)
    report = check_mechanism(system, mech)
    ir_slack = {}
    min_ic = {}
    for row, entry in zip(system.rows, report.row_slacks):
        if row.kind == "IR":
            ir_slack[row.j] = entry["slack"]
        else:
            min_ic[row.j] = min(min_ic.get(row.j, np.inf), entry["slack"])
    rows = []
    for j, agent_type in enumerate(uu.base.types):
        x = from_utility_units(uu, mech.assignment[j])
        for i, atom in enumerate(uu.states.atoms):
            rows.append([
                agent_type.label or f"type{j}",
                atom,
                float(mech.assignment[j, i]),
                float(x[i]),
                float(ir_slack.get(j, np.inf)),
                float(min_ic.get(j, np.inf)),
            ])
    _write_csv(
        path,
        ["type_label", "atom", "c_value", "x_value", "ir_slack", "min_ic_slack"],
        rows,
    )


def load_summary_mechanism(path) -> Mechanism:
    """Re-ingest a summary.csv into the mechanism it describes."""
    by_type: dict[str, list[float]] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            label = row["type_label"]
            if label not in by_type:
                by_type[label] = []
                order.append(label)
            by_type[label].append(float(row["c_value"]))
    return Mechanism(np.array([by_type[label] for label in order]))


def _warn_clamps(uu):
    if uu.clamped_atoms:
        print(
            f"warning: wealth floored at {uu.wealth_floor:g} on atoms "
            f"{uu.clamped_atoms} when transforming the lower contract bound",
            file=sys.stderr,
        )


def _load_bundle(config: RunConfig) -> PresetBundle:
    if (config.preset is None) == (config.instance is None):
        raise RclError("provide exactly one of --preset or --instance")
    if config.preset is not None:
        params = {}
        if config.alpha is not None:
            params["alpha"] = config.alpha
        if config.beta is not None:
            params["beta"] = config.beta[0]
        if config.preset in ("reinsurance_halfline", "reinsurance_wholeline"):
            params.pop("alpha", None)
            params.pop("beta", None)
        return build_preset_bundle(config.preset, params)
    return PresetBundle(instance=load_instance(config.instance))


def _solve_options(config: RunConfig, record_trace: bool) -> SolveOptions:
    kwargs = {"seed": config.seed, "record_trace": record_trace}
    if config.max_iters is not None:
        kwargs["max_iters"] = config.max_iters
    if config.tol is not None:
        kwargs["tol"] = config.tol
    return SolveOptions(**kwargs)


def _max_workers(n_jobs: int) -> int:
    cap = os.environ.get("RCL_THREADS", "").strip()
    if cap:
        return max(1, min(int(cap), n_jobs))
    return max(1, min(4, n_jobs))


def _node_vector(value, m: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return np.full(m, float(arr[0]))
    if arr.size != m:
        raise RclError(f"{name} must be a scalar or one value per node ({m})")
    return arr


def _market_type_report(model, index, e_a, e_p, alpha, betas, v) -> dict:
    density = mkt.tilted_density(model, index)
    entry = {
        "label": model.drift_types[index].label,
        "normalizer": density.normalizer,
        "normalizer_gap": abs(density.normalizer - 1.0),
        "entropy_agent_ref": mkt.relative_entropy(density, mkt.ENTROPY_AGENT_GIVEN_REF),
        "entropy_ref_agent": mkt.relative_entropy(density, mkt.ENTROPY_REF_GIVEN_AGENT),
    }
    x_cara, u_cara = mkt.cara_optimal(model, index, e_a, alpha)
    entry["cara"] = {
        "utility": u_cara,
        "oracle_gap": mkt.verify_budget_optimality(
            model, index, e_a, cara_spec(alpha)
        ),
        "payoff": x_cara.tolist(),
    }
    x_log, u_log = mkt.log_optimal(model, index, e_a)
    entry["log"] = {
        "utility": u_log,
        "oracle_gap": mkt.verify_budget_optimality(model, index, e_a, log_utility()),
        "payoff": x_log.tolist(),
    }
    zero = np.zeros(model.n_nodes)
    entry["delegation"] = {
        repr(float(beta)): mkt.delegation_value(model, index, zero, beta, e_a, e_p, v)
        for beta in betas
    }
    return entry


def run(config: RunConfig) -> int:
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if config.command == "solve":
            bundle = _load_bundle(config)
            uu = to_utility_units(bundle.instance)
            _warn_clamps(uu)
            result = solve_mechanism(uu, _solve_options(config, record_trace=True))
            doc = {"config": config.echo(), "result": result.to_json(),
                   "clamped_atoms": uu.clamped_atoms}
            _write_json(out / "result.json", doc)
            _write_trace(out / "trace.csv", result.trace)
            _write_summary(out / "summary.csv", uu, result.mechanism)
            return EXIT_OK if result.converged else EXIT_NOT_CONVERGED

        if config.command == "oracle":
            bundle = _load_bundle(config)
            uu = to_utility_units(bundle.instance)
            _warn_clamps(uu)
            result = grid_oracle(uu, config.levels or 3)
            doc = {"config": config.echo(), "result": result.to_json(),
                   "clamped_atoms": uu.clamped_atoms}
            _write_json(out / "result.json", doc)
            _write_summary(out / "summary.csv", uu, result.mechanism)
            return EXIT_OK

        if config.command == "menu":
            bundle = _load_bundle(config)
            uu = to_utility_units(bundle.instance)
            _warn_clamps(uu)
            candidates = grid_contracts(uu, config.levels or 2)
            menu, value = solve_menu(candidates, uu)
            mech = extract_mechanism(menu, uu)
            doc = {
                "config": config.echo(),
                "menu_value": value,
                "menu": menu.contracts.tolist(),
                "mechanism": mech.to_json(),
            }
            _write_json(out / "result.json", doc)
            _write_summary(out / "summary.csv", uu, mech)
            return EXIT_OK

        if config.command == "equivalence":
            bundle = _load_bundle(config)
            uu = to_utility_units(bundle.instance)
            _warn_clamps(uu)
            candidates = grid_contracts(uu, config.levels or 2)
            report = equivalence_check(candidates, uu)
            doc = {"config": config.echo(), "report": report.to_json()}
            _write_json(out / "result.json", doc)
            witness = Mechanism(candidates[report.witness_assignment])
            _write_summary(out / "summary.csv", uu, witness)
            return EXIT_OK

        if config.command == "ae-check":
            bundle = _load_bundle(config)
            report = ae_check(bundle.instance.u)
            _write_json(out / "result.json",
                        {"config": config.echo(), "report": report.to_json()})
            return EXIT_OK

        if config.command == "market":
            if (config.preset is None) == (config.instance is None):
                raise RclError("provide exactly one of --preset or --instance")
            if config.instance is not None:
                with open(config.instance) as fh:
                    doc_in = json.load(fh)
                model = mkt.market_model_from_json(doc_in)
                m = model.n_nodes
                e_a = _node_vector(doc_in.get("e_a", 1.0), m, "e_a")
                e_p = _node_vector(doc_in.get("e_p", 2.0), m, "e_p")
                alpha = config.alpha or float(doc_in.get("alpha", 1.0))
                betas = config.beta or tuple(np.atleast_1d(doc_in.get("beta", 0.5)))
                v = cara_spec(1.0)
            else:
                bundle = _load_bundle(config)
                if bundle.market_model is None:
                    raise RclError(
                        f"preset {config.preset!r} carries no market model; "
                        "use cara_hedging or log_delegation"
                    )
                model = bundle.market_model
                e_a = bundle.extras["market_e_a"]
                e_p = bundle.instance.e_p
                alpha = config.alpha or bundle.extras["alpha"]
                betas = config.beta or (bundle.extras["beta"],)
                v = bundle.instance.v
            indices = range(len(model.drift_types))
            with ThreadPoolExecutor(_max_workers(len(model.drift_types))) as pool:
                reports = list(
                    pool.map(
                        lambda i: _market_type_report(model, i, e_a, e_p, alpha, betas, v),
                        indices,
                    )
                )
            doc = {
                "config": config.echo(),
                "horizon": model.horizon,
                "n_nodes": model.n_nodes,
                "types": reports,
            }
            _write_json(out / "result.json", doc)
            return EXIT_OK

        raise RclError(f"unknown command {config.command!r}")
    except RclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON in {config.instance}: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


def parse_args(argv) -> RunConfig:
    parser = argparse.ArgumentParser(
        prog="rcl",
        description="Robust contracting lab: solve, delegate, certify.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--preset", choices=PRESET_NAMES)
    parser.add_argument("--instance", help="path to an instance JSON document")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--max-iters", type=int, dest="max_iters")
    parser.add_argument("--tol", type=float)
    parser.add_argument("--levels", type=int, help="grid levels per atom")
    parser.add_argument(
        "--beta", type=str,
        help="profit share(s) kept by the agent, comma separated for sweeps",
    )
    parser.add_argument("--alpha", type=float, help="CARA risk aversion")
    args = parser.parse_args(argv)
    beta = None
    if args.beta is not None:
        beta = tuple(float(b) for b in args.beta.split(","))
    return RunConfig(
        command=args.command,
        preset=args.preset,
        instance=args.instance,
        out=args.out,
        seed=args.seed,
        max_iters=args.max_iters,
        tol=args.tol,
        levels=args.levels,
        beta=beta,
        alpha=args.alpha,
    )


def main(argv=None) -> int:
    return run(parse_args(argv if argv is not None else sys.argv[1:]))


if __name__ == "__main__":
    raise SystemExit(main())
