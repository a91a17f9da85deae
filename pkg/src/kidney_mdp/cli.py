"""Command-line front end: ``kidney-mdp <subcommand> ...``.

Exit status: 0 success, 2 bad input, 3 non-convergence, 4 precondition violated.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import build_experiment_model, run_comparison
from .io import write_csv, write_json, write_manifest, write_solution
from .model import ModelSpec, Policy, SchemaError, validate_model
from .sim import SimConfig, simulate
from .solver import DEFAULT_TIE_TOL, DEFAULT_TOL, solve_value_iteration
from .structure import check_assumptions, compare_dominance, extract_control_limits

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_NONCONVERGED = 3
EXIT_PRECONDITION = 4

log = logging.getLogger("kidney_mdp")


class CliError(Exception):
    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


def _load(args, attr="input") -> tuple[ModelSpec, list[Path]]:
    path = getattr(args, attr, None)
    experiment = getattr(args, "experiment", None)
    if path is None and experiment is None:
        raise CliError("one of --input or --experiment is required", EXIT_BAD_INPUT)
    if path is None:
        return build_experiment_model(experiment), []
    try:
        spec = ModelSpec.from_json(path)
    except (OSError, SchemaError) as exc:
        raise CliError(f"bad input {path}: {exc}", EXIT_BAD_INPUT) from exc
    report = validate_model(spec)
    if not report.ok:
        raise CliError(f"invalid model {path}: " + "; ".join(report.messages()), EXIT_BAD_INPUT)
    return spec, [Path(path)]


def _solve(spec, args):
    sol = solve_value_iteration(spec, tol=args.tol, tie_tol=args.tie_tol)
    if not sol.converged:
        raise CliError(f"value iteration did not converge (residual {sol.residual:.3e})",
                       EXIT_NONCONVERGED)
    return sol


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _limit_rows(report, baseline=None):
    rows = list(report.csv_rows())
    if baseline is not None:
        for (h, _), val in np.ndenumerate(baseline.kidney_based.limits):
            rows.append(("baseline_kidney", h + 1, "", int(val)))
        for (k, _), val in np.ndenumerate(baseline.patient_based.limits):
            rows.append(("baseline_patient", k + 1, "", int(val)))
    return rows


def _existence_lines(report) -> list[str]:
    lines = []
    for name, fam in report.families().items():
        if fam.exists:
            lines.append(f"{name}-based control limit: exists")
        else:
            where = ", ".join(
                "(" + ", ".join(f"{k}={v}" for k, v in w.items() if k != "accept_pattern") + ")"
                for w in fam.witnesses
            )
            lines.append(f"{name}-based control limit: ABSENT at {where}")
    return lines


def cmd_solve(args):
    spec, inputs = _load(args)
    sol = _solve(spec, args)
    out = _out_dir(args)
    write_solution(out, sol)
    write_manifest(out, "solve", vars(args), inputs)
    print(f"converged in {sol.iterations} iterations; error bound {sol.error_bound:.3e}")


def cmd_check(args):
    spec, inputs = _load(args)
    report = check_assumptions(spec)
    out = _out_dir(args)
    write_json(out / "assumptions.json", {
        "validation": validate_model(spec).messages(),
        "assumptions": report.to_dict(),
    })
    write_manifest(out, "check", vars(args), inputs)
    for key, res in report.results.items():
        print(f"{key}: {'pass' if res.passed else 'FAIL'}")


def cmd_limits(args):
    spec, inputs = _load(args)
    sol = _solve(spec, args)
    report = extract_control_limits(sol.policy, spec.dims)
    out = _out_dir(args)
    write_csv(out / "limits.csv", ["axis", "coord1", "coord2", "limit"], _limit_rows(report))
    write_json(out / "limits.json", report.to_dict())
    write_manifest(out, "limits", vars(args), inputs)
    print("\n".join(_existence_lines(report)))


def _write_comparison(out: Path, cmp) -> None:
    spec = cmp.spec
    write_json(out / "model.json", spec.to_dict())
    write_json(out / "baseline.json", cmp.baseline.to_dict())
    write_solution(out, cmp.solution)
    bs = cmp.baseline_solution
    H, K = spec.dims.H, spec.dims.K
    rows = []
    for (h, k), val in np.ndenumerate(bs.V):
        decision = h < H and k < K
        q_t = cmp.baseline.terminal_reward[h, k] if decision else None
        rows.append((h + 1, k + 1, val, bs.q_wait[h], q_t,
                     "T" if decision and bs.accept[h, k] else "W"))
    write_csv(out / "baseline_solution.csv", ["h", "k", "V", "Q_W", "Q_T", "action"], rows)
    write_csv(out / "limits.csv", ["axis", "coord1", "coord2", "limit"],
              _limit_rows(cmp.limits, cmp.baseline_limits))
    write_csv(out / "comparison.csv", ["h", "k", "m", "V_opt", "V_baseline", "gap"], (
        (h + 1, k + 1, m + 1, cmp.solution.V[h, k, m], cmp.V_baseline[h, k, m], g)
        for (h, k, m), g in np.ndenumerate(cmp.gap)
    ))
    write_json(out / "summary.json", cmp.summary())


def cmd_compare(args):
    if args.input2 is not None:
        spec1, in1 = _load(args)
        spec2, in2 = _load(args, "input2")
        sol1, sol2 = _solve(spec1, args), _solve(spec2, args)
        try:
            report = compare_dominance(spec1, spec2, sol1, sol2, args.mode)
        except ValueError as exc:
            raise CliError(str(exc), EXIT_PRECONDITION) from exc
        out = _out_dir(args)
        write_json(out / "dominance.json", report.to_dict())
        write_manifest(out, "compare", vars(args), in1 + in2)
        print(f"hypotheses: {'hold' if report.precondition_ok else 'VIOLATED'}; "
              f"V1 >= V2: {'yes' if report.conclusion.passed else 'NO'}")
        if not report.precondition_ok:
            raise CliError("stochastic-order hypotheses do not hold", EXIT_PRECONDITION)
        return
    if args.experiment is None:
        raise CliError("compare needs --input2 (dominance) or --experiment (baseline)",
                       EXIT_BAD_INPUT)
    cmp = _comparison(args)
    out = _out_dir(args)
    _write_comparison(out, cmp)
    write_manifest(out, "compare", vars(args))
    _print_comparison(cmp)


def _comparison(args):
    try:
        return run_comparison(args.experiment, failure_weighted=args.baseline_failure_weighted,
                              tol=args.tol, tie_tol=args.tie_tol)
    except RuntimeError as exc:
        raise CliError(str(exc), EXIT_NONCONVERGED) from exc


def _print_comparison(cmp):
    s = cmp.summary()
    print("\n".join(_existence_lines(cmp.limits)))
    print(f"baseline curve between m=4 and m=5 curves: "
          f"{'yes' if s['bracketing_m4_m5']['pass'] else 'NO'}")
    print(f"max gap V_opt - V_baseline: {s['max_gap']:.6f} at (h,k,m)={tuple(s['argmax_gap'])}")
    print(f"patient-level gap v(1): {s['patient_value_gap'][0]:.6f}")


def _parse_start(text: str):
    parts = [int(p) for p in text.split(",")]
    if len(parts) == 1:
        return parts[0]
    if len(parts) == 3:
        return tuple(parts)
    raise argparse.ArgumentTypeError("start must be 'h' or 'h,k,m'")


def cmd_simulate(args):
    spec, inputs = _load(args)
    if args.policy == "optimal":
        policy = _solve(spec, args).policy
    elif args.policy == "always-wait":
        policy = Policy.always_wait(spec.dims)
    else:
        policy = Policy.always_transplant(spec.dims)
    out = _out_dir(args)
    cfg = SimConfig(
        n_trajectories=args.n, horizon_cap=args.horizon_cap, seed=args.seed,
        start_state=args.start,
        log_path=out / "trajectories.csv" if args.log_trajectories else None,
    )
    try:
        res = simulate(spec, policy, cfg)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_BAD_INPUT) from exc
    write_json(out / "simulation.json", {"policy": args.policy, "start": args.start, **res.to_dict()})
    write_manifest(out, "simulate", vars(args), inputs)
    print(f"estimate {res.mean:.6f} +/- {res.std_error:.6f} (n={res.n})")


def cmd_experiment(args):
    cmp = _comparison(args)
    out = _out_dir(args)
    _write_comparison(out, cmp)
    write_json(out / "assumptions.json", {
        "validation": validate_model(cmp.spec).messages(),
        "assumptions": check_assumptions(cmp.spec).to_dict(),
    })
    write_manifest(out, "experiment", vars(args))
    _print_comparison(cmp)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kidney-mdp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("--input", type=Path, help="model JSON file")
            sp.add_argument("--experiment", choices=["exp1", "exp2"],
                            help="use a built-in experiment model instead of --input")
        sp.add_argument("--out-dir", type=Path, default=Path("out"))
        sp.add_argument("--tol", type=float, default=DEFAULT_TOL)
        sp.add_argument("--tie-tol", type=float, default=DEFAULT_TIE_TOL)
        sp.add_argument("-v", "--verbose", action="store_true")

    for name, fn in (("solve", cmd_solve), ("check", cmd_check), ("limits", cmd_limits)):
        sp = sub.add_parser(name)
        common(sp)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("compare", help="dominance check between two models, or baseline comparison")
    common(sp)
    sp.add_argument("--input2", type=Path)
    sp.add_argument("--mode", choices=["offer", "transition"], default="offer")
    sp.add_argument("--baseline-failure-weighted", action="store_true")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("simulate")
    common(sp)
    sp.add_argument("--policy", choices=["optimal", "always-wait", "always-transplant"],
                    default="optimal")
    sp.add_argument("--start", type=_parse_start, default=(1, 1, 1), help="'h' or 'h,k,m'")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n", type=int, default=100_000)
    sp.add_argument("--horizon-cap", type=int, default=4000)
    sp.add_argument("--log-trajectories", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("experiment", help="reproduce an experiment into --out-dir")
    sp.add_argument("experiment", choices=["exp1", "exp2"])
    common(sp, model=False)
    sp.add_argument("--baseline-failure-weighted", action="store_true")
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.status
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
