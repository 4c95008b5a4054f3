"""Command-line entry point: ``dicke-verify <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from fractions import Fraction

import numpy as np

from .converter import convert_strategy
from .errors import DomainError, NumericError
from .simulator import (
    NoisyInput,
    default_deltas,
    default_eps_grid,
    simulate,
    worst_case_noise,
)
from .measurement import execute_branch_procedure
from .spectral import build_strategy, closed_form_gap, required_tests, spectral_gap

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

FAMILIES = ("bell3", "bell2", "W", "D")

TABLE_STATES = (
    ("W", 3, 1), ("W", 4, 1), ("W", 5, 1), ("W", 6, 1), ("W", 7, 1), ("W", 8, 1),
    ("D", 4, 2), ("D", 5, 2), ("D", 6, 2), ("D", 6, 3), ("D", 7, 2), ("D", 7, 3),
    ("D", 8, 2), ("D", 8, 4),
)


def format_fraction(f: Fraction | None, value: float) -> str:
    """``p/q (decimal)`` when an exact value is known, else the decimal alone."""
    if f is None:
        return f"{value:.12g}"
    return f"{f.numerator}/{f.denominator} ({float(f):.12g})"


def state_label(family: str, n: int, k: int | None) -> str:
    return f"W_{n}" if family == "W" else f"D_{n}^{k}"


def derive_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1, np.uint64)[0] >> 1)


def _csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def run_table(M: int = 10_000, seed: int = 0, eps_grid=None, deltas=None, states=TABLE_STATES,
              modes=("adaptive", "nonadaptive")) -> list[dict]:
    """Fitted and theoretical 1/nu for each state and protocol."""
    rows = []
    for s_idx, (family, n, k) in enumerate(states):
        for m_idx, mode in enumerate(modes):
            s = build_strategy(family, n, k, mode)
            rep = simulate(s, eps_grid=eps_grid, M=M, deltas=deltas, seed=derive_seed(seed, s_idx, m_idx))
            theory = 1 / closed_form_gap(f"{family}-{mode}", n, k)
            rows.append({
                "state": state_label(family, n, k),
                "mode": mode,
                "fitted": repr(rep.fit),
                "stddev": repr(rep.fit_std),
                "theory": str(theory),
            })
    return rows


def compare_rows(n: int, k: int, delta: float, eps_grid, exact: bool = False) -> list[dict]:
    """Sample counts of the adaptive, nonadaptive and global protocols."""
    family = "W" if k == 1 else "D"
    gaps = {
        "adaptive": float(closed_form_gap(f"{family}-adaptive", n, k)),
        "nonadaptive": float(closed_form_gap(f"{family}-nonadaptive", n, k)),
        "global": 1.0,
    }
    rows = []
    for eps in eps_grid:
        row = {"eps": repr(float(eps))}
        for name, nu in gaps.items():
            r = required_tests(nu, float(eps), delta)
            row[f"N_{name}"] = r.exact if exact else repr(r.approx)
        rows.append(row)
    return rows


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _add_target(p: argparse.ArgumentParser, mode: bool = True):
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    if mode:
        p.add_argument("--mode", choices=("adaptive", "nonadaptive"), default="adaptive")


def _add_output(p: argparse.ArgumentParser, default: str = "json"):
    p.add_argument("--format", choices=("json", "csv"), default=default)
    p.add_argument("--out", metavar="PATH")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dicke-verify", description="Verification of W and Dicke states.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gap", help="spectral gap of a built-in strategy")
    _add_target(p)
    _add_output(p)

    p = sub.add_parser("table", help="simulated 1/nu for the W and Dicke test suite")
    p.add_argument("--M", type=int, default=10_000)
    p.add_argument("--seed", type=int)
    _add_output(p, default="csv")

    p = sub.add_parser("compare", help="tests needed by adaptive, nonadaptive and global protocols")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--eps", type=_floats)
    p.add_argument("--exact", action="store_true", help="smallest integer N instead of ln(1/delta)/(nu eps)")
    _add_output(p, default="csv")

    p = sub.add_parser("convert", help="nonadaptive strategy from an adaptive one")
    _add_target(p, mode=False)
    p.add_argument("--merge", action="store_true")
    _add_output(p)

    p = sub.add_parser("simulate", help="repeated pass-until-failure experiments")
    _add_target(p)
    p.add_argument("--eps", type=_floats, help="infidelity grid")
    p.add_argument("--delta", type=_floats, help="significance levels")
    p.add_argument("--M", type=int, default=10_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--sim-mode", choices=("bernoulli", "procedure"), default="bernoulli")
    p.add_argument("--scatter", metavar="PATH", help="also write (1/eps, N) pairs here")
    _add_output(p)

    p = sub.add_parser("procedure", help="run one randomly chosen test on a noisy copy")
    _add_target(p)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--seed", type=int)
    _add_output(p)
    return parser


def _resolve_seed(args) -> int:
    if args.seed is None:
        args.seed = int(np.random.SeedSequence().entropy % (1 << 63))
        print(f"seed: {args.seed}", file=sys.stderr)
    return args.seed


def _emit(args, text: str):
    if not text.endswith("\n"):
        text += "\n"
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dumps(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True)


def cmd_gap(args) -> str:
    s = build_strategy(args.family, args.n, args.k, args.mode)
    rep = spectral_gap(s)
    if args.format == "json":
        return _dumps(rep.to_json())
    return _csv([{
        "family": rep.family, "n": rep.n, "k": rep.k, "mode": rep.mode,
        "nu": format_fraction(rep.nu_exact, rep.nu),
        "lambda2": format_fraction(rep.lambda2_exact, rep.lambda2),
        "multiplicity": rep.multiplicity2,
    }], ["family", "n", "k", "mode", "nu", "lambda2", "multiplicity"])


def cmd_table(args) -> str:
    if args.M < 100:
        raise DomainError("M must be at least 100")
    rows = run_table(args.M, _resolve_seed(args))
    if args.format == "json":
        return _dumps(rows)
    return _csv(rows, ["state", "mode", "fitted", "stddev", "theory"])


def cmd_compare(args) -> str:
    eps = args.eps or list(np.geomspace(0.01, 0.5, 25))
    rows = compare_rows(args.n, args.k, args.delta, eps, exact=args.exact)
    if args.format == "json":
        return _dumps(rows)
    return _csv(rows, ["eps", "N_adaptive", "N_nonadaptive", "N_global"])


def cmd_convert(args) -> str:
    s = build_strategy(args.family, args.n, args.k, "adaptive")
    res = convert_strategy(s, merge=args.merge)
    payload = res.to_json()
    if args.format == "json":
        return _dumps(payload)
    return _csv([{
        "family": payload["family"], "n": payload["n"], "k": payload["k"], "merged": payload["merged"],
        "alpha_in": res.alpha_in, "alpha": res.alpha,
        "gap_in": format_fraction(res.report_in.nu_exact, res.gap_in),
        "gap_out": format_fraction(res.report_out.nu_exact, res.gap_out),
        "guarantee_ok": res.guarantee_ok,
    }], ["family", "n", "k", "merged", "alpha_in", "alpha", "gap_in", "gap_out", "guarantee_ok"])


def cmd_simulate(args) -> str:
    s = build_strategy(args.family, args.n, args.k, args.mode)
    rep = simulate(
        s,
        eps_grid=args.eps or default_eps_grid(),
        M=args.M,
        deltas=args.delta or default_deltas(),
        seed=_resolve_seed(args),
        mode=args.sim_mode,
    )
    if args.scatter:
        with open(args.scatter, "w", newline="") as fh:
            fh.write(rep.scatter_csv())
    if args.format == "json":
        return rep.dumps()
    return rep.thresholds_csv()


def cmd_procedure(args) -> str:
    s = build_strategy(args.family, args.n, args.k, args.mode)
    rng = np.random.default_rng(_resolve_seed(args))
    state = s.target
    if args.eps > 0:
        tau, _ = worst_case_noise(s)
        state = NoisyInput.build(s.target, tau, args.eps).psi_prime
    j = int(rng.choice(len(s.tests), p=np.asarray(s.weights) / sum(s.weights)))
    passed, t = execute_branch_procedure(s.tests[j][1], state, rng)
    payload = {
        "test": j,
        "pair": [q + 1 for q in t.pair],
        "first_outcomes": list(t.first_outcomes),
        "excitations": t.excitations,
        "setting": t.setting,
        "second_outcomes": None if t.second_outcomes is None else list(t.second_outcomes),
        "passed": passed,
        "transcript": t.describe(),
    }
    if args.format == "json":
        return _dumps(payload)
    return _csv([{**payload, "pair": "-".join(map(str, payload["pair"])),
                  "first_outcomes": "".join(map(str, t.first_outcomes)),
                  "second_outcomes": "" if t.second_outcomes is None else "".join(map(str, t.second_outcomes))}],
                list(payload))


COMMANDS = {
    "gap": cmd_gap,
    "table": cmd_table,
    "compare": cmd_compare,
    "convert": cmd_convert,
    "simulate": cmd_simulate,
    "procedure": cmd_procedure,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    try:
        _emit(args, COMMANDS[args.command](args))
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
