"""Command line entry point: ``conedp solve | verify | oracle | info``.

Exit codes: 0 ok, 2 bad input, 3 numerical failure or escape from the
grid, 4 a check was violated, 5 problem hash mismatch, 6 enumeration cap.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .cones import alpha, alpha_prime, deep_point, lipschitz_constant, mu
from .control import (
    ConfigurationError,
    ControlSequence,
    EnumerationCapError,
    NumericalError,
    check_constants,
    check_cost_estimate,
    check_objective_estimate,
    check_trajectory_estimate,
    time_steps,
)
from .dp import ValueField, backward_solve, default_tol_dpp, dp_consistency_check, outer_semicontinuity_probe
from .grid import TrajectoryEscapeError
from .io import ProblemFile, ProblemFileError, bundled_problems, load_problem, to_jsonable, write_json
from .oracle import enumerate_front, scalar_dp
from .pareto import lipschitz_certificate, project_to_k_class
from .tangent import contingent_solution_residual, default_tol_tan, proximal_residual

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_VIOLATION, EXIT_HASH, EXIT_CAP = 0, 2, 3, 4, 5, 6
CHECKS = ("estimates", "dpp", "contingent", "proximal", "lipschitz")


class CheckViolation(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class HashMismatch(RuntimeError):
    pass


def _fmt(v) -> str:
    return repr(float(v))


def _header(pf: ProblemFile, command: str) -> dict:
    return {"tool": "conedp", "version": __version__, "problem_hash": pf.hash, "problem": pf.name,
            "command": command}


def _emit(report: dict, path: str | None) -> None:
    if path:
        write_json(report, path)
    print(json.dumps(to_jsonable(report), indent=2, sort_keys=True))


# -- solve -------------------------------------------------------------------

def cmd_solve(args) -> int:
    pf = load_problem(args.problem)
    check_constants(pf.problem, pf.grid.box, seed=pf.seeds["probes"])
    field_ = backward_solve(pf.problem, pf.cone, pf.grid, n_jobs=args.jobs)
    written = field_.export(args.out, pf.hash, extra={"problem": pf.name})
    report = _header(pf, "solve")
    report.update({"out_dir": args.out, "files": [os.path.basename(p) for p in written],
                   "slices": field_.n_steps + 1, "valid_nodes_t0": int(field_.valid_mask(0).sum())})
    _emit(report, None)
    return EXIT_OK


# -- verify ----------------------------------------------------------------------

def _inner_box(pf: ProblemFile) -> np.ndarray:
    """Box shrunk by M_f T so probe trajectories stay where the constants hold."""
    box = np.asarray(pf.grid.box, dtype=float)
    margin = pf.problem.M_f * pf.problem.horizon
    lo, hi = box[:, 0] + margin, box[:, 1] - margin
    mid = 0.5 * (box[:, 0] + box[:, 1])
    bad = lo > hi
    lo[bad], hi[bad] = mid[bad], mid[bad]
    return np.column_stack([lo, hi])


def check_estimates(pf: ProblemFile, field_: ValueField) -> dict:
    prob, step = pf.problem, pf.grid.step
    rng = np.random.default_rng(pf.seeds["probes"])
    box = _inner_box(pf)
    steps = time_steps(prob.horizon, step)
    n = pf.verify["n_probes"]
    tol = pf.tolerances["estimates"]
    worst = {"trajectory": -np.inf, "cost": -np.inf, "objective": -np.inf}
    witness = {}
    violations = {k: 0 for k in worst}
    constants = check_constants(prob, pf.grid.box, n_probes=max(200, n), seed=pf.seeds["probes"])
    for probe in range(n):
        x1 = rng.uniform(box[:, 0], box[:, 1])
        x2 = rng.uniform(box[:, 0], box[:, 1])
        idx = rng.integers(len(prob.controls), size=steps)
        seq = ControlSequence.from_indices(prob, idx, step)
        i1, i2 = rng.integers(0, steps, size=2)
        t1, t2 = i1 * step, i2 * step
        tail = ControlSequence(seq.values[min(i1, i2):], step)
        reports = {
            "trajectory": check_trajectory_estimate(prob, t1, x1, x2, ControlSequence(seq.values[i1:], step), tol=tol),
            "cost": check_cost_estimate(prob, t1, t2, x1, x2, tail, tol=tol),
        }
        # keep the exhaustive clouds small: at most six remaining steps
        k1, k2 = rng.integers(1, min(steps, 6) + 1, size=2)
        reports["objective"] = check_objective_estimate(prob, prob.horizon - k1 * step, x1,
                                                        prob.horizon - k2 * step, x2, step, tol=tol)
        for name, rep in reports.items():
            if not rep.ok:
                violations[name] += 1
            if rep.max_violation > worst[name]:
                worst[name] = rep.max_violation
                witness[name] = {"probe": probe, "x1": x1, "x2": x2, "lhs": rep.lhs, "rhs": rep.rhs}
    ok = not any(violations.values())
    return {"ok": ok, "n_probes": n, "tolerance": tol, "violations": violations, "max_violation": worst,
            "witness": witness, "observed_constants": constants}


def _query_nodes(pf: ProblemFile, field_: ValueField) -> list:
    if pf.grid.queries:
        return [np.asarray(q, dtype=float) for q in pf.grid.queries]
    valid = np.flatnonzero(field_.valid_mask(0))
    return [field_.grid.coords(field_.grid.multi_index(valid[len(valid) // 2]))]


def check_dpp(pf: ProblemFile, field_: ValueField) -> dict:
    prob = pf.problem
    tol = pf.tolerances.get("dpp", default_tol_dpp(prob, pf.grid))
    rows, ok = [], True
    terminal_ok = all(np.allclose(f, 0.0) and len(f) == 1 for f in field_.fronts[-1] if f is not None)
    ok &= terminal_ok
    for x in _query_nodes(pf, field_):
        for k in pf.verify["dpp_k_steps"]:
            if k > field_.n_steps:
                continue
            if len(prob.controls) ** field_.n_steps > pf.cap:
                rows.append({"x": x, "k_steps": k, "skipped": "enumeration exceeds the cap"})
                continue
            rep = dp_consistency_check(field_, prob, pf.cone, 0.0, x, k, tol=tol, substeps=pf.grid.substeps)
            ok &= rep.ok
            rows.append({"x": x, "k_steps": k, **rep.to_dict()})
        probe = outer_semicontinuity_probe(field_, pf.cone, field_.step, x, prob) if field_.n_steps > 1 else None
        if probe is not None:
            ok &= probe.ok
            rows.append({"x": x, "outer_semicontinuity": probe.to_dict()})
    return {"ok": bool(ok), "tolerance": tol, "terminal_ok": terminal_ok, "checks": rows,
            "note": "piecewise-constant controls give an inner approximation; gaps are one-sided"}


def _triples(field_: ValueField, limit: int, seed: int) -> list:
    out = []
    for i in range(field_.n_steps + 1):
        for j in np.flatnonzero(field_.valid_mask(i)):
            for y in field_.fronts[i][j]:
                out.append((i, int(j), y))
    if len(out) > limit:
        keep = np.sort(np.random.default_rng(seed).choice(len(out), size=limit, replace=False))
        out = [out[k] for k in keep]
    return out


def check_contingent(pf: ProblemFile, field_: ValueField) -> dict:
    prob = pf.problem
    tol = pf.tolerances.get("tan", default_tol_tan(prob, field_, pf.tolerances["c_tan"]))
    triples = _triples(field_, pf.verify["max_triples"], pf.seeds["probes"])
    passed, failures, defects = 0, [], 0
    worst1 = worst2 = 0.0
    for i, j, y in triples:
        x = field_.grid.coords(field_.grid.multi_index(j))
        rep = contingent_solution_residual(field_, prob, pf.cone, field_.times[i], x, y, n_hull=pf.verify["n_hull"],
                                           seed=pf.seeds["hull"], tol=tol)
        worst1, worst2 = max(worst1, rep.cond1_residual), max(worst2, rep.cond2_residual)
        defects += not rep.reformulation_agrees
        if rep.cond1_ok and rep.cond2_ok:
            passed += 1
        elif len(failures) < 20:
            failures.append({"slice": i, "node": j, "x": x, "y": y, **rep.to_dict()})
    rate = passed / len(triples) if triples else 1.0
    return {"ok": rate >= pf.tolerances["pass_rate"], "tolerance": tol, "pass_rate": rate,
            "required_pass_rate": pf.tolerances["pass_rate"], "n_triples": len(triples),
            "max_cond1_residual": worst1, "max_cond2_residual": worst2, "reformulation_defects": defects,
            "failures": failures,
            "note": "closedness of E(cl S, -P) needed by the second reformulation is not checkable from samples"}


def check_proximal(pf: ProblemFile, field_: ValueField) -> dict:
    prob = pf.problem
    tol = pf.tolerances.get("tan", default_tol_tan(prob, field_, pf.tolerances["c_tan"]))
    pol_tol = pf.tolerances["polarity"]
    triples = _triples(field_, pf.verify["proximal_nodes"], pf.seeds["normals"])
    budget = prob.cost_budget * max(field_.grid.spacing) * np.sqrt(field_.grid.dim) + prob.M_L * field_.step
    n_normals = polarity_bad = residual_bad = boundary_bad = boundary_skipped = 0
    worst_pol, worst_res, worst_gap = -np.inf, 0.0, 0.0
    witness = None
    for i, j, y in triples:
        x = field_.grid.coords(field_.grid.multi_index(j))
        rep = proximal_residual(field_, prob, pf.cone, field_.times[i], x, y, seed=pf.seeds["normals"])
        if rep.boundary_gap is not None:
            if np.isnan(rep.boundary_gap):
                boundary_skipped += 1
                continue
            worst_gap = max(worst_gap, rep.boundary_gap)
            if rep.boundary_gap > budget:
                boundary_bad += 1
                witness = witness or {"slice": i, "node": j, "y": y, "boundary_gap": rep.boundary_gap}
            continue
        n_normals += rep.n_normals
        worst_pol = max(worst_pol, rep.polarity_max)
        if not rep.polarity_ok(pol_tol):
            polarity_bad += 1
            witness = witness or {"slice": i, "node": j, "y": y, **rep.to_dict()}
        if rep.complete:
            worst_res = max(worst_res, rep.max_residual)
            if rep.max_residual > tol:
                residual_bad += 1
                witness = witness or {"slice": i, "node": j, "y": y, **rep.to_dict()}
    ok = polarity_bad == 0 and residual_bad == 0 and boundary_bad == 0
    return {"ok": ok, "n_points": len(triples), "n_normals": n_normals, "polarity_tolerance": pol_tol,
            "polarity_max": worst_pol, "polarity_violations": polarity_bad, "residual_tolerance": tol,
            "max_residual": worst_res, "residual_violations": residual_bad, "boundary_budget": budget,
            "max_boundary_gap": worst_gap, "boundary_violations": boundary_bad,
            "boundary_unavailable": boundary_skipped, "witness": witness}


def check_lipschitz(pf: ProblemFile, field_: ValueField | None = None) -> dict:
    pair = pf.pair
    rng = np.random.default_rng(pf.seeds["lipschitz"])
    p = pf.cone.dim
    bound = lipschitz_constant(pair)
    trials = violations = 0
    max_ratio, witness = 0.0, None
    while trials < pf.verify["n_pairs"]:
        base = rng.uniform(0.0, 1.0, size=(int(rng.integers(3, 30)), p))
        k1 = project_to_k_class(base, pair)
        noise = rng.normal(scale=10.0 ** rng.uniform(-3, -0.5), size=k1.shape)
        k2 = project_to_k_class(k1 + noise, pair)
        rep = lipschitz_certificate(k1, k2, pair)
        if rep.h_inputs == 0:
            continue
        trials += 1
        if rep.ratio > max_ratio:
            max_ratio = rep.ratio
        if not rep.satisfied:
            violations += 1
            witness = witness or {"k1": k1, "k2": k2, "h_inputs": rep.h_inputs, "h_fronts": rep.h_fronts}
    return {"ok": violations == 0, "n_pairs": trials, "violations": violations, "M": bound,
            "alpha": alpha(pair), "alpha_prime": alpha_prime(pair), "max_ratio": max_ratio, "witness": witness}


VERIFIERS = {"estimates": check_estimates, "dpp": check_dpp, "contingent": check_contingent,
             "proximal": check_proximal, "lipschitz": check_lipschitz}


def cmd_verify(args) -> int:
    pf = load_problem(args.problem)
    which = list(CHECKS) if "all" in args.which else list(dict.fromkeys(args.which))
    if "lipschitz" in which and pf.cone_outer is None:
        if "all" in args.which:
            which.remove("lipschitz")
        else:
            raise ProblemFileError("cone C required: the lipschitz check needs 'cone_outer' in the problem file")
    try:
        field_, manifest = ValueField.load(args.field_dir)
    except (OSError, KeyError, ValueError) as exc:
        raise ProblemFileError(f"cannot read field directory {args.field_dir}: {exc}") from None
    if manifest.get("problem_hash") != pf.hash:
        raise HashMismatch(f"field was solved for problem hash {manifest.get('problem_hash')}, "
                           f"but {args.problem} hashes to {pf.hash}")
    report = _header(pf, "verify")
    bad = field_.antichain_violation()
    if bad is not None:
        i, j, ya, yb = bad
        report.update({"ok": False, "antichain_witness": {"slice": i, "node": j, "dominated": ya, "dominating": yb}})
        _emit(report, args.report)
        raise CheckViolation(f"front at slice {i}, node {j} is not an antichain: {ya.tolist()} lies in "
                             f"{yb.tolist()} + P")
    results = {name: VERIFIERS[name](pf, field_) for name in which}
    report["checks"] = results
    report["ok"] = all(r["ok"] for r in results.values())
    _emit(report, args.report)
    if not report["ok"]:
        failed = [name for name, r in results.items() if not r["ok"]]
        worst = {name: results[name].get("witness") or results[name].get("failures", [None])[:1] for name in failed}
        raise CheckViolation(f"checks failed: {', '.join(failed)}; worst witness: {json.dumps(to_jsonable(worst))}")
    return EXIT_OK


# -- oracle ---------------------------------------------------------------------

def cmd_oracle(args) -> int:
    pf = load_problem(args.problem)
    prob = pf.problem
    os.makedirs(args.out, exist_ok=True)
    report = _header(pf, "oracle")
    if args.scalar:
        if prob.cost_dim != 1:
            raise ProblemFileError(f"--scalar needs a single cost, the problem has cost_dim={prob.cost_dim}")
        table = scalar_dp(prob, pf.grid)
        path = os.path.join(args.out, "scalar_value.csv")
        with open(path, "w", newline="") as fh:
            fh.write("slice,node,value\n")
            for i, row in enumerate(table):
                for j in np.flatnonzero(np.isfinite(row)):
                    fh.write(f"{i},{j},{_fmt(row[j])}\n")
        report["files"] = ["scalar_value.csv"]
        report["defined_nodes_t0"] = int(np.isfinite(table[0]).sum())
    else:
        grid = pf.grid.state_grid()
        runs, files = [], []
        for k, x in enumerate(_query_points(pf)):
            res = enumerate_front(prob, pf.cone, 0.0, x, pf.grid.step, grid=grid, cap=pf.cap,
                                  substeps=pf.grid.substeps)
            name = f"oracle_q{k}.csv"
            with open(os.path.join(args.out, name), "w", newline="") as fh:
                fh.write(",".join(f"y{c + 1}" for c in range(prob.cost_dim)) + "\n")
                for y in res.front:
                    fh.write(",".join(_fmt(v) for v in y) + "\n")
            files.append(name)
            runs.append({"x": x, "count": res.count, "front_size": len(res.front), "file": name})
        report["files"] = files
        report["queries"] = runs
    write_json(report, os.path.join(args.out, "oracle.json"))
    _emit(report, None)
    return EXIT_OK


def _query_points(pf: ProblemFile) -> list:
    if pf.grid.queries:
        return [np.asarray(q, dtype=float) for q in pf.grid.queries]
    box = np.asarray(pf.grid.box, dtype=float)
    return [pf.grid.state_grid().snap(0.5 * (box[:, 0] + box[:, 1])[None, :])[0]]


# -- info -----------------------------------------------------------------------

def cmd_info(args) -> int:
    if args.problem is None:
        print(json.dumps({"tool": "conedp", "version": __version__, "bundled_problems": bundled_problems()},
                         indent=2, sort_keys=True))
        return EXIT_OK
    pf = load_problem(args.problem)
    prob, cone = pf.problem, pf.cone
    steps = time_steps(prob.horizon, pf.grid.step)
    info = _header(pf, "info")
    info.update({
        "state_dim": prob.state_dim, "cost_dim": prob.cost_dim, "n_controls": len(prob.controls),
        "horizon": prob.horizon, "steps": steps, "grid_nodes": pf.grid.state_grid().n_nodes,
        "constants": {"K_f": prob.K_f, "M_f": prob.M_f, "K_L": prob.K_L, "M_L": prob.M_L},
        "cost_budget": prob.cost_budget, "tol_dpp": default_tol_dpp(prob, pf.grid),
        "sequences": len(prob.controls) ** steps, "cap": pf.cap,
        "cone": {"generators": cone.generators, "facet_normals": cone.facet_normals, "solid": cone.is_solid},
    })
    if cone.is_solid:
        info["cone"].update({"d1": deep_point(cone, 1.0), "mu": mu(cone)})
    if pf.pair is not None:
        info["cone_pair"] = {"alpha": alpha(pf.pair), "alpha_prime": alpha_prime(pf.pair),
                             "M": lipschitz_constant(pf.pair)}
    _emit(info, None)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conedp", description="Cone-ordered multiobjective dynamic programming.")
    parser.add_argument("--version", action="version", version=f"conedp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="backward-solve a problem file and export the value field")
    p.add_argument("problem", help="problem JSON file or bundled problem name")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=None, help="worker threads per time slice")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="run checks against an exported value field")
    p.add_argument("problem")
    p.add_argument("field_dir")
    p.add_argument("--which", nargs="+", choices=CHECKS + ("all",), default=["all"])
    p.add_argument("--report", help="also write the JSON report here")
    p.add_argument("--jobs", type=int, default=None, help="accepted for symmetry; checks run serially")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle", help="exhaustive enumeration or scalar value iteration")
    p.add_argument("problem")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--scalar", action="store_true", help="scalar value iteration (single-cost problems)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("info", help="summarise a problem file, or list bundled problems")
    p.add_argument("problem", nargs="?")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ProblemFileError, ConfigurationError) as exc:
        code, msg = EXIT_INPUT, str(exc)
    except TrajectoryEscapeError as exc:
        code = EXIT_NUMERIC
        msg = f"{exc} [node={exc.node}, landing={exc.landing}, t={exc.time}]"
    except (NumericalError, FloatingPointError) as exc:
        code, msg = EXIT_NUMERIC, str(exc)
    except CheckViolation as exc:
        code, msg = EXIT_VIOLATION, str(exc)
    except HashMismatch as exc:
        code, msg = EXIT_HASH, str(exc)
    except EnumerationCapError as exc:
        code, msg = EXIT_CAP, str(exc)
    print(f"conedp: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
