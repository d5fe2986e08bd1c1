"""Command-line front end.

Exit codes: 0 success, 1 I/O failure, 2 bad usage or config, 3 infeasible
constraints, 4 missing input file, 5 empty filtered sample.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Sequence

from blockade_gates.config import COMMANDS, ConfigError, ExperimentConfig
from blockade_gates.experiments import (
    EmptySampleError,
    csv_text,
    default_workers,
    mechanism_census,
    minimal_area_search,
    qubit_usage_stats,
    read_jsonl,
    run_batch,
    success_rate,
)
from blockade_gates.optimizer import ConstraintInfeasibleError, OptimizationResult
from blockade_gates.pathways import mechanism_signature
from blockade_gates.propagator import Protocol, fast_fidelity

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_MISSING, EXIT_EMPTY = 0, 1, 2, 3, 4, 5

DEFAULT_OUTPUTS = {
    "optimize": "results.jsonl",
    "sweep": "sweep.csv",
    "minarea": "frontier.csv",
    "usage": "usage.csv",
    "census": "census.csv",
}


class MissingInputError(FileNotFoundError):
    pass


# ---------------------------------------------------------------- parsing


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _targeted(text: str) -> list[tuple[str, float]]:
    out = []
    for item in text.split(","):
        q, _, v = item.partition("=")
        if not v:
            raise argparse.ArgumentTypeError(f"expected qubit=bound, got {item!r}")
        out.append((q.strip(), float(v)))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockade-gates",
        description="Optimize and analyse multi-qubit blockade gate pulse sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run configuration")
    # every default is None so that only explicit flags override a config file
    g.add_argument("--config", help="JSON config file; explicit flags override it")
    g.add_argument("--gate", help="target gate, e.g. pab or pabc")
    g.add_argument("--qubits", dest="n_qubits", type=int, help="number of qubits N")
    g.add_argument("--pulses", dest="n_pulses", type=_ints, help="pulse count(s), comma separated")
    g.add_argument("--sigma", type=float, help="lower bound on every |geometrical factor|")
    g.add_argument("--sigma-order", type=_floats, help="bounds on the 1st, 2nd, ... smallest factor")
    g.add_argument("--positive", dest="positivity", action="store_const", const=True,
                   help="also require non-negative factors")
    g.add_argument("--targeted", type=_targeted, help="per-qubit bounds, e.g. a=0.3,b=0.3")
    g.add_argument("--area-cap-pi", type=float, help="cap on the total area, units of pi")
    g.add_argument("--area-range-pi", type=_floats, help="per-pulse area range lo,hi, units of pi")
    g.add_argument("--independent", action="store_const", const=True,
                   help="one-hot structural vectors (independent qubits)")
    g.add_argument("--restarts", type=int, help="number of random restarts")
    g.add_argument("--seed", dest="master_seed", type=int, help="master seed")
    g.add_argument("--epsilons", dest="epsilon_grid", type=_floats, help="infidelity thresholds")
    g.add_argument("--targets", dest="fidelity_targets", type=_floats, help="fidelity targets")
    g.add_argument("--restarts-per-probe", type=int, help="restarts per minimal-area probe")
    g.add_argument("--resolution-pi", type=float, help="bisection resolution, units of pi")
    g.add_argument("--max-probes", type=int, help="probe limit per fidelity target")
    g.add_argument("--threshold", type=float, help="fidelity filter for usage and census")
    g.add_argument("--input", help="JSONL results file to analyse")
    g.add_argument("--protocol", help="protocol JSON file (mechanism)")
    g.add_argument("--out", dest="output", help="output path")
    g.add_argument("--workers", type=int, help="worker processes (env BLOCKADE_GATES_WORKERS)")
    helps = {
        "optimize": "run a restart batch and write one JSON line per result",
        "sweep": "success rate over an infidelity grid",
        "minarea": "minimal total area per fidelity target",
        "usage": "mean relative qubit use over high-fidelity results",
        "census": "histogram of mechanism-rank tuples",
        "mechanism": "pathway decomposition and ranks of one protocol",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _result_config(path: str) -> dict[str, Any] | None:
    """Config embedded in the first line of a results file, if any."""
    with open(path) as fh:
        first = fh.readline()
    if not first.strip():
        return None
    return json.loads(first).get("config")


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    base: dict[str, Any] = {}
    if args.config:
        if not Path(args.config).exists():
            raise MissingInputError(args.config)
        base = ExperimentConfig.load(args.config).to_dict()
        base.pop("schema_version")
    base["command"] = args.command
    if args.input and args.command in ("usage", "census", "sweep"):
        if not Path(args.input).exists():
            raise MissingInputError(args.input)
        embedded = _result_config(args.input)
        if embedded:
            for key in ("gate", "n_qubits"):
                base.setdefault(key, embedded[key])
    names = {f.name for f in fields(ExperimentConfig)}
    explicit = {k: v for k, v in vars(args).items() if k in names and v is not None}
    if args.sigma is not None:
        if args.sigma_order is not None:
            raise ConfigError("use either --sigma or --sigma-order")
        explicit["sigma_order"] = [args.sigma]
    base.update(explicit)
    return ExperimentConfig.from_dict(base)


# ---------------------------------------------------------------- helpers


def provenance(cfg: ExperimentConfig) -> dict[str, Any]:
    """Config as embedded in artifacts.

    Worker count and output path never change the results, so they are left
    out and artifacts stay byte-identical across them.
    """
    d = cfg.to_dict()
    d.pop("workers")
    d.pop("output")
    return d


def _workers(cfg: ExperimentConfig) -> int:
    return cfg.workers if cfg.workers is not None else default_workers()


def _output(cfg: ExperimentConfig) -> str:
    return cfg.output or DEFAULT_OUTPUTS[cfg.command]


def _write(path: str, text: str) -> None:
    Path(path).write_text(text)


def _load_results(cfg: ExperimentConfig) -> list[OptimizationResult]:
    if cfg.input is None:
        raise ConfigError(f"{cfg.command} needs --input")
    if not Path(cfg.input).exists():
        raise MissingInputError(cfg.input)
    return read_jsonl(cfg.input)


def _fmt_protocol(p: Protocol) -> str:
    areas = ", ".join(f"{a:.6f}" for a in p.areas_pi)
    vecs = "; ".join("(" + ", ".join(f"{c:+.6f}" for c in v) + ")" for v in p.vectors)
    return f"areas_pi=[{areas}] vectors=[{vecs}]"


# ---------------------------------------------------------------- commands


def cmd_optimize(cfg: ExperimentConfig) -> int:
    gate, constraints = cfg.gate_spec(), cfg.constraint_set()
    constraints.check_feasible(gate.n_qubits)
    prov = provenance(cfg)
    path = _output(cfg)
    best: OptimizationResult | None = None
    total = feasible = 0
    with open(path, "w") as fh:

        def emit(r: OptimizationResult) -> None:
            nonlocal best, total, feasible
            row = r.to_dict()
            row["config"] = prov
            fh.write(json.dumps(row, sort_keys=True) + "\n")
            total += 1
            feasible += r.feasible
            if r.feasible and (best is None or r.infidelity < best.infidelity):
                best = r

        for n_pulses in cfg.n_pulses:
            run_batch(gate, n_pulses, constraints, cfg.restarts, cfg.master_seed,
                      workers=_workers(cfg), on_result=emit)
    print(f"wrote {total} results to {path} ({feasible} feasible)")
    if best is not None:
        print(f"best infidelity {best.infidelity:.3e} (restart seed {best.restart_seed})")
        print(f"best protocol {_fmt_protocol(best.protocol)}")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if cfg.input is not None:
        groups = {None: _load_results(cfg)}
    else:
        gate, constraints = cfg.gate_spec(), cfg.constraint_set()
        constraints.check_feasible(gate.n_qubits)
        groups = {
            n: run_batch(gate, n, constraints, cfg.restarts, cfg.master_seed, workers=_workers(cfg))
            for n in cfg.n_pulses
        }
    rows = []
    for n, results in groups.items():
        n_pulses = n if n is not None else "input"
        for eps, rate in zip(cfg.epsilon_grid, success_rate(results, cfg.epsilon_grid)):
            rows.append((n_pulses, repr(eps), repr(rate)))
    path = _output(cfg)
    _write(path, csv_text(("n_pulses", "epsilon", "rate"), rows, provenance(cfg)))
    for n, results in groups.items():
        r1, r4 = success_rate(results, [1e-1, 1e-4])
        label = "input" if n is None else f"N_p={n}"
        print(f"{label}: {len(results)} restarts, rate(eps<1e-1)={r1:.4f} rate(eps<1e-4)={r4:.4f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_minarea(cfg: ExperimentConfig) -> int:
    gate, constraints = cfg.gate_spec(), cfg.constraint_set()
    constraints.check_feasible(gate.n_qubits)
    frontier = minimal_area_search(
        gate, constraints, cfg.fidelity_targets, n_pulses=cfg.n_pulses,
        budget=cfg.area_budget(), master_seed=cfg.master_seed, workers=_workers(cfg),
        initial_cap=None if cfg.area_cap_pi is None else cfg.area_cap_pi * math.pi,
    )
    rows = []
    for target, point in frontier.items():
        w = point.witness
        rows.append((
            repr(target),
            repr(point.min_area_pi),
            "" if w is None else repr(w.infidelity),
            "" if w is None else json.dumps(w.protocol.to_dict(), sort_keys=True),
        ))
        shown = "not reached" if w is None else f"{point.min_area_pi:.4f} pi"
        print(f"F >= {target}: minimal area {shown} ({len(point.probes)} probes)")
    path = _output(cfg)
    header = ("fidelity_target", "min_area_pi", "witness_infidelity", "witness_protocol")
    _write(path, csv_text(header, rows, provenance(cfg)))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_usage(cfg: ExperimentConfig) -> int:
    results = _load_results(cfg)
    stats = qubit_usage_stats(results, cfg.gate_spec(), cfg.threshold)
    path = _output(cfg)
    _write(path, csv_text(("qubit", "mean_d"), [(q, repr(d)) for q, d in stats.to_rows()],
                          provenance(cfg)))
    print(f"{stats.count} protocols with F > {cfg.threshold}")
    for q, d in stats.to_rows():
        print(f"qubit {q}: <d> = {d:+.4f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_census(cfg: ExperimentConfig) -> int:
    results = _load_results(cfg)
    census = mechanism_census(results, cfg.gate_spec(), cfg.threshold)
    dominant = census.dominant
    rows = [
        (key, count, int(tuple(map(int, key.split("-"))) in dominant))
        for key, count in census.to_rows()
    ]
    path = _output(cfg)
    prov = provenance(cfg)
    prov["blocks"] = census.grounds
    _write(path, csv_text(("omega_tuple", "count", "dominant"), rows, prov))
    print(f"{census.count} protocols with F > {cfg.threshold}; blocks {' '.join(census.grounds)}")
    for key, count, dom in rows[:10]:
        print(f"{key}: {count}{'  dominant' if dom else ''}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_mechanism(cfg: ExperimentConfig) -> int:
    if cfg.protocol is None:
        raise ConfigError("mechanism needs --protocol")
    if not Path(cfg.protocol).exists():
        raise MissingInputError(cfg.protocol)
    protocol = Protocol.load(cfg.protocol)
    if protocol.n_qubits != cfg.n_qubits:
        cfg = replace(cfg, n_qubits=protocol.n_qubits)
    gate = cfg.gate_spec()
    record = mechanism_signature(protocol, gate)
    report = {
        "config": provenance(cfg),
        "fidelity": fast_fidelity(protocol, gate),
        "total_area_pi": protocol.total_area / math.pi,
        **record.to_dict(),
    }
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if cfg.output:
        _write(cfg.output, text)
    sys.stdout.write(text)
    return EXIT_OK


HANDLERS = {
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "minarea": cmd_minarea,
    "usage": cmd_usage,
    "census": cmd_census,
    "mechanism": cmd_mechanism,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        return HANDLERS[cfg.command](cfg)
    except MissingInputError as exc:
        print(f"error: input file not found: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConstraintInfeasibleError as exc:
        print(f"error: infeasible constraints: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except EmptySampleError as exc:
        print(f"error: empty sample: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (ConfigError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
