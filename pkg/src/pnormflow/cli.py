"""Command-line front end.

    pnormflow solve  --graph g.json --p 3 --out flows.csv
    pnormflow sweep  --graph g.json --p-list 2,4,8,16
    pnormflow oracle --graph g.json --p 3
    pnormflow mincut --graph g.json [--flows flows.csv]

Exit status: 0 converged (or matching, for ``oracle``), 1 input error,
2 not converged (or mismatch). Output files are still written on 2.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph_model import NetworkGraph, cut_balance_metric, min_cut, validate_traffic
from .oracles import oracle_general_p, oracle_p2
from .solver import SolveReport, SolverOptions, solve

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2
ORACLE_TOL = 1e-5

FLOW_COLUMNS = ("edge_index", "r", "s", "flow")
TRACE_COLUMNS = (
    "iter",
    "cost",
    "feasibility_residual",
    "correction_norm",
    "inner_sweeps",
    "step_length",
)
SWEEP_COLUMNS = ("p", "cost", "cut_max", "cut_min", "cut_cv", "converged")


class InputError(Exception):
    """Malformed or inconsistent input; maps to exit status 1."""


@dataclass
class Problem:
    graph: NetworkGraph
    traffic: np.ndarray


# -- input ------------------------------------------------------------------


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise InputError(f"{where}: expected an integer, got {value!r}")
    return int(value)


def _as_float(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InputError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _build(n: int, edges, traffic, source: str) -> Problem:
    try:
        graph = NetworkGraph(n, edges)
    except ValueError as exc:
        raise InputError(f"{source}: {exc}") from None
    if traffic is None:
        traffic = np.zeros(n - 1)
    elif len(traffic) != n - 1:
        raise InputError(
            f"{source}: traffic has {len(traffic)} entries, expected {n - 1} (nodes 1..{n - 1})"
        )
    try:
        traffic = validate_traffic(graph, traffic)
    except ValueError as exc:
        raise InputError(f"{source}: {exc}") from None
    return Problem(graph, traffic)


def parse_graph_json(text: str, source: str = "<json>") -> Problem:
    """``{"nodes": N, "edges": [[r, s], ...], "traffic": [...]}``.

    An absent ``traffic`` means all zeros; a present list must have ``N-1``
    entries.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise InputError(f"{source}: top level must be an object")
    for key in ("nodes", "edges"):
        if key not in doc:
            raise InputError(f"{source}: missing field '{key}'")
    n = _as_int(doc["nodes"], f"{source}: field 'nodes'")
    if not isinstance(doc["edges"], list):
        raise InputError(f"{source}: field 'edges' must be a list")
    edges = []
    for j, pair in enumerate(doc["edges"]):
        where = f"{source}: edges[{j}]"
        if not isinstance(pair, list) or len(pair) != 2:
            raise InputError(f"{where}: expected [r, s], got {pair!r}")
        edges.append((_as_int(pair[0], where), _as_int(pair[1], where)))
    traffic = None
    if "traffic" in doc:
        if not isinstance(doc["traffic"], list):
            raise InputError(f"{source}: field 'traffic' must be a list")
        traffic = [_as_float(v, f"{source}: traffic[{k}]") for k, v in enumerate(doc["traffic"])]
    return _build(n, edges, traffic, source)


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def parse_edgelist(text: str, traffic_text: str | None = None, source: str = "<edgelist>",
                   traffic_source: str = "<traffic>") -> Problem:
    """One ``r s`` pair per line; ``#`` starts a comment.

    ``N`` is the largest node index mentioned. Traffic comes from a sidecar
    with one value per line for nodes ``1..N-1``; without one it is zero.
    """
    edges = []
    for lineno, line in _data_lines(text):
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"{source}: line {lineno}: expected 'r s', got {line!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise InputError(f"{source}: line {lineno}: node indices must be integers") from None
    if not edges:
        raise InputError(f"{source}: no edges")
    n = max(max(e) for e in edges)
    traffic = None
    if traffic_text is not None:
        traffic = []
        for lineno, line in _data_lines(traffic_text):
            try:
                traffic.append(float(line))
            except ValueError:
                raise InputError(
                    f"{traffic_source}: line {lineno}: expected a number, got {line!r}"
                ) from None
    return _build(n, edges, traffic, source)


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def load_problem(args) -> Problem:
    text = _read_text(args.graph)
    if args.format == "json":
        if args.traffic is not None:
            raise InputError("--traffic only applies to --format edgelist")
        return parse_graph_json(text, args.graph)
    traffic_text = _read_text(args.traffic) if args.traffic is not None else None
    return parse_edgelist(text, traffic_text, args.graph, args.traffic or "<traffic>")


def read_flows(path: str, graph: NetworkGraph) -> np.ndarray:
    """Read a flows file written by ``solve`` (CSV or JSON)."""
    text = _read_text(path)
    if text.lstrip().startswith("{"):
        try:
            rows = json.loads(text)["flows"]
        except (json.JSONDecodeError, KeyError, TypeError):
            raise InputError(f"{path}: not a flows JSON document") from None
    else:
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != FLOW_COLUMNS:
            raise InputError(f"{path}: header must be {','.join(FLOW_COLUMNS)}")
        rows = list(reader)
    flows = np.full(graph.edge_count, np.nan)
    for k, row in enumerate(rows, start=1):
        try:
            m = int(row["edge_index"]) - 1
            value = float(row["flow"])
        except (KeyError, TypeError, ValueError):
            raise InputError(f"{path}: row {k}: bad edge_index or flow") from None
        if not 0 <= m < graph.edge_count:
            raise InputError(f"{path}: row {k}: edge_index {m + 1} out of range")
        flows[m] = value
    if np.any(np.isnan(flows)):
        missing = int(np.flatnonzero(np.isnan(flows))[0]) + 1
        raise InputError(f"{path}: no flow given for edge {missing}")
    return flows


# -- output -----------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.6f}"


def _csv_text(columns: Sequence[str], rows: list[dict]) -> str:
    lines = [",".join(columns)]
    lines += [",".join(_fmt(row[c]) for c in columns) for row in rows]
    return "\n".join(lines) + "\n"


def _json_value(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    return value


def _json_text(meta: dict, key: str, rows: list[dict]) -> str:
    doc = {k: _json_value(v) for k, v in meta.items()}
    doc[key] = [{k: _json_value(v) for k, v in row.items()} for row in rows]
    return json.dumps(doc, indent=2) + "\n"


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def flow_rows(graph: NetworkGraph, flows) -> list[dict]:
    return [
        {"edge_index": m + 1, "r": r, "s": s, "flow": float(flows[m])}
        for m, (r, s) in enumerate(graph.edges)
    ]


def trace_rows(report: SolveReport) -> list[dict]:
    return [
        {
            "iter": rec.iteration,
            "cost": rec.cost,
            "feasibility_residual": rec.feasibility_residual,
            "correction_norm": rec.correction_norm,
            "inner_sweeps": rec.inner_sweeps,
            "step_length": rec.step_length,
        }
        for rec in report.records
    ]


def trace_path(out: str) -> str:
    """``flows.csv`` -> ``flows.trace.csv``."""
    path = Path(out)
    return str(path.with_name(f"{path.stem}.trace{path.suffix}"))


# -- commands ---------------------------------------------------------------


def _options(args, p: float) -> SolverOptions:
    kwargs = {"p": p}
    if args.inner_tol is not None:
        kwargs["inner_tol"] = args.inner_tol
    if args.outer_tol is not None:
        kwargs["outer_tol"] = args.outer_tol
    if args.max_outer is not None:
        kwargs["outer_max_iters"] = args.max_outer
    try:
        return SolverOptions(**kwargs)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _single_p(args) -> float:
    if args.p_list is not None:
        raise InputError("--p-list is only used by the sweep command")
    return 2.0 if args.p is None else args.p


def cmd_solve(args) -> int:
    prob = load_problem(args)
    p = _single_p(args)
    report = solve(prob.graph, prob.traffic, _options(args, p))
    meta = {
        "command": "solve",
        "p": p,
        "seed": args.seed,
        "converged": report.converged,
        "reason": report.reason,
        "cost": report.cost,
        "feasibility_residual": report.feasibility_residual,
    }
    flows = flow_rows(prob.graph, report.loads)
    trace = trace_rows(report)
    if args.out_format == "json":
        flows_text = _json_text(meta, "flows", flows)
        trace_text = _json_text(meta, "trace", trace)
    else:
        flows_text = _csv_text(FLOW_COLUMNS, flows)
        trace_text = _csv_text(TRACE_COLUMNS, trace)
    _emit(flows_text, args.out)
    if args.out is not None or args.trace is not None:
        _emit(trace_text, args.trace or trace_path(args.out))
    print(
        f"converged={report.converged} reason={report.reason} "
        f"iterations={report.iterations} cost={report.cost:.12g} seed={args.seed}",
        file=sys.stderr,
    )
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def parse_p_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"--p-list: expected comma-separated numbers, got {text!r}") from None
    if len(values) < 2:
        raise InputError("--p-list needs at least two values")
    bad = [v for v in values if not v > 1]
    if bad:
        raise InputError(f"--p-list: p must be greater than 1, got {bad[0]}")
    return values


def cmd_sweep(args) -> int:
    prob = load_problem(args)
    if args.p_list is None:
        raise InputError("sweep needs --p-list")
    ps = parse_p_list(args.p_list)
    try:
        cut = min_cut(prob.graph, prob.traffic)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    rows = []
    for p in ps:
        report = solve(prob.graph, prob.traffic, _options(args, p))
        bal = cut_balance_metric(report.loads, cut)
        rows.append(
            {
                "p": p,
                "cost": report.cost,
                "cut_max": bal.max_load,
                "cut_min": bal.min_load,
                "cut_cv": bal.cv,
                "converged": report.converged,
            }
        )
    meta = {"command": "sweep", "seed": args.seed, "cut_edges": sorted(m + 1 for m in cut.edge_indices)}
    if args.out_format == "json":
        _emit(_json_text(meta, "rows", rows), args.out)
    else:
        _emit(_csv_text(SWEEP_COLUMNS, rows), args.out)
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NOT_CONVERGED


def cmd_oracle(args) -> int:
    prob = load_problem(args)
    p = _single_p(args)
    report = solve(prob.graph, prob.traffic, _options(args, p))
    general = oracle_general_p(prob.graph, prob.traffic, p)
    columns = ["edge_index", "r", "s", "solver", "nullspace"]
    laplacian = oracle_p2(prob.graph, prob.traffic) if p == 2.0 else None
    if laplacian is not None:
        columns.append("laplacian")
    rows = []
    for m, (r, s) in enumerate(prob.graph.edges):
        row = {"edge_index": m + 1, "r": r, "s": s,
               "solver": float(report.loads[m]), "nullspace": float(general.flows[m])}
        if laplacian is not None:
            row["laplacian"] = float(laplacian.flows[m])
        rows.append(row)
    refs = [general.flows] + ([laplacian.flows] if laplacian is not None else [])
    gap = max((float(np.max(np.abs(report.loads - f))) if f.size else 0.0) for f in refs)
    meta = {"command": "oracle", "p": p, "seed": args.seed, "discrepancy": gap,
            "solver_converged": report.converged, "oracle_converged": general.converged}
    if args.out_format == "json":
        _emit(_json_text(meta, "flows", rows), args.out)
    else:
        _emit(_csv_text(columns, rows), args.out)
    print(f"discrepancy={gap:.3e} tolerance={ORACLE_TOL:g} seed={args.seed}", file=sys.stderr)
    return EXIT_OK if gap <= ORACLE_TOL else EXIT_NOT_CONVERGED


def cmd_mincut(args) -> int:
    prob = load_problem(args)
    try:
        cut = min_cut(prob.graph, prob.traffic)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    members = [
        {"edge_index": m + 1, "r": prob.graph.edges[m][0], "s": prob.graph.edges[m][1]}
        for m in sorted(cut.edge_indices)
    ]
    meta = {"command": "mincut", "seed": args.seed, "cardinality": cut.cardinality}
    if args.flows is not None:
        bal = cut_balance_metric(read_flows(args.flows, prob.graph), cut)
        meta.update(cut_max=bal.max_load, cut_min=bal.min_load, cut_cv=bal.cv)
    if args.out_format == "json":
        _emit(_json_text(meta, "edges", members), args.out)
    else:
        lines = [f"cardinality,{cut.cardinality}"]
        for key in ("cut_max", "cut_min", "cut_cv"):
            if key in meta:
                lines.append(f"{key},{_fmt(meta[key])}")
        text = "\n".join(lines) + "\n" + _csv_text(("edge_index", "r", "s"), members)
        _emit(text, args.out)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "oracle": cmd_oracle, "mincut": cmd_mincut}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pnormflow", description="p-norm congestion-minimizing flows")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in [
        ("solve", "solve one p and write flows and trace"),
        ("sweep", "solve a list of p values and report min-cut balance"),
        ("oracle", "compare the solver with the reference oracles"),
        ("mincut", "report the minimum cut"),
    ]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--graph", required=True, help="graph file")
        cmd.add_argument("--format", choices=("json", "edgelist"), default="json")
        cmd.add_argument("--traffic", help="traffic sidecar for edgelist input")
        cmd.add_argument("--p", type=float, help="norm exponent (default 2)")
        cmd.add_argument("--p-list", help="comma-separated exponents (sweep)")
        cmd.add_argument("--out", help="output file (default stdout)")
        cmd.add_argument("--out-format", choices=("csv", "json"), default="csv")
        cmd.add_argument("--inner-tol", type=float)
        cmd.add_argument("--outer-tol", type=float)
        cmd.add_argument("--max-outer", type=int)
        cmd.add_argument("--seed", type=int, default=0, help="reserved; echoed in reports")
        if name == "solve":
            cmd.add_argument("--trace", help="trace file (default: <out>.trace.<ext>)")
        if name == "mincut":
            cmd.add_argument("--flows", help="flows file to summarize on the cut")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.p is not None and not args.p > 1:
        print(f"error: --p must be greater than 1, got {args.p}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
