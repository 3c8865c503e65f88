"""Command-line harness: ``capalloc {gen,lp,run,oracle,audit,kappa-table,ratio}``.

Exit codes: 0 success, 2 bad input, 3 oracle budget exceeded, 4 violation found.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import secrets
import sys

import numpy as np

from capalloc import __version__
from capalloc import instance as inst_mod
from capalloc import lp
from capalloc._io import atomic_write_text
from capalloc.allocator.rules import KAPPA

EXIT_BAD_INPUT = 2
EXIT_BUDGET = 3
EXIT_VIOLATION = 4

FAMILIES = ("lp-gap", "bdm", "positive-correlation", "random")
ALGS = ("twoproposal-exact", "twoproposal-sampled", "twoproposal-general", "bdm", "greedy")

log = logging.getLogger("capalloc")


class BadInput(Exception):
    pass


class BudgetExceeded(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _resolve_seed(args) -> int:
    seed = args.seed if getattr(args, "seed", None) is not None else secrets.randbits(32)
    print(f"seed: {seed}")
    return seed


def _header(command: str, seed, config: dict) -> str:
    lines = [f"# capalloc {__version__}", f"# command: {command}", f"# seed: {seed}",
             "# config: " + json.dumps(config, sort_keys=True)]
    return "\n".join(lines) + "\n"


def _emit(out, text: str) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _load_instance(args, seed):
    if getattr(args, "instance", None):
        try:
            inst = inst_mod.read(args.instance)
        except OSError as exc:
            raise BadInput(f"cannot read instance: {exc}") from exc
        except (inst_mod.InstanceFormatError, ValueError, TypeError) as exc:
            raise BadInput(f"invalid instance file: {exc}") from exc
    elif getattr(args, "family", None):
        inst = _generate(args, seed)
    else:
        raise BadInput("give --instance or --family")
    problems = inst_mod.validate(inst)
    if problems:
        raise BadInput("instance is invalid: " + "; ".join(problems))
    return inst


def _generate(args, seed):
    fam = args.family
    try:
        if fam == "lp-gap":
            return inst_mod.gen_lp_gap()
        if fam == "bdm":
            return inst_mod.gen_bdm_counterexample(args.n if args.n is not None else 4)
        if fam == "positive-correlation":
            return inst_mod.gen_positive_correlation(args.eps if args.eps is not None else 0.1)
        if fam == "random":
            params = inst_mod.RandomParams(
                n=args.n if args.n is not None else 3, T=args.T,
                c_range=tuple(args.c_range), v_range=tuple(args.v_range),
                q_range=tuple(args.q_range), p_range=tuple(args.p_range))
            return inst_mod.gen_random(params, seed)
    except ValueError as exc:
        raise BadInput(str(exc)) from exc
    raise BadInput(f"unknown family {fam!r}")


def _load_solution(args, inst):
    if getattr(args, "solution", None):
        try:
            sol = lp.read_solution(args.solution, inst)
        except OSError as exc:
            raise BadInput(f"cannot read solution: {exc}") from exc
        except (inst_mod.InstanceFormatError, ValueError) as exc:
            raise BadInput(f"invalid solution file: {exc}") from exc
        bad = lp.check_feasibility(sol, sol.model, 1e-7)
        if bad:
            raise BadInput(f"solution is infeasible for the instance: {bad[:3]}")
        return sol
    return lp.solve_instance(inst)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _ci(p: float, trials: int) -> float:
    return 1.96 * math.sqrt(max(p * (1.0 - p), 0.0) / trials)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    seed = _resolve_seed(args)
    inst = _generate(args, seed)
    if args.general:
        inst = inst_mod.to_general(inst)
    if args.out:
        inst_mod.write(inst, args.out)
    else:
        sys.stdout.write(json.dumps(inst_mod.to_dict(inst), indent=2) + "\n")
    return 0


def cmd_lp(args) -> int:
    seed = _resolve_seed(args)
    inst = _load_instance(args, seed)
    model = lp.build(inst)
    if args.lp_text:
        atomic_write_text(args.lp_text, lp.to_lp_text(model))
    sol = lp.solve(model)
    if sol.status != "optimal":
        print(f"LP solve failed: {sol.status}", file=sys.stderr)
        return 1
    print(f"objective: {sol.objective!r}")
    text = json.dumps(lp.solution_to_dict(sol), indent=2) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    elif not args.quiet:
        sys.stdout.write(text)
    return 0


def cmd_run(args) -> int:
    from capalloc.allocator.core import ExactLimitError
    from capalloc.diagnostics import simulate_algorithm

    seed = _resolve_seed(args)
    if args.trials < 1:
        raise BadInput("--trials must be positive")
    inst = _load_instance(args, seed)
    sol = _load_solution(args, inst)
    if args.alg in ("bdm", "greedy", "twoproposal-exact", "twoproposal-sampled") \
            and not isinstance(inst, inst_mod.BernoulliInstance):
        raise BadInput(f"--alg {args.alg} needs a Bernoulli instance; use twoproposal-general")
    try:
        welfare, res = simulate_algorithm(args.alg, inst, sol, args.trials, seed, args.jobs,
                                          args.kappa, args.epsilon, args.samples)
    except ExactLimitError as exc:
        raise BudgetExceeded(str(exc)) from exc
    except ValueError as exc:
        raise BadInput(str(exc)) from exc

    n, T = inst.n, inst.T
    if args.alg in ("bdm", "greedy"):
        freq = res.pair_freq
        keys = [((i, t), (i, t)) for t in range(T) for i in range(n)]
        getf = lambda key: freq[key[1], key[0]]
        kappa_eff = None
    else:
        kappa_eff = args.kappa - args.epsilon if args.alg == "twoproposal-sampled" else args.kappa
        af = res.alloc_freq
        if isinstance(inst, inst_mod.BernoulliInstance) and args.alg != "twoproposal-general":
            keys = [((i, t), (i, t)) for t in range(T) for i in range(n)]
            getf = lambda key: af[key[1], :, key[0]].sum()
        else:
            g = inst_mod.as_general(inst)
            keys = [((i, t, j), (i, t, j)) for t in range(T)
                    for j in range(len(g.rounds[t])) for i in range(n)]
            getf = lambda key: af[key[1], key[2], key[0]]
    if args.alg == "twoproposal-general" and isinstance(inst, inst_mod.BernoulliInstance):
        xsol = lp.embed_solution(inst, sol)
    else:
        xsol = sol
    rows = []
    for key, _ in keys:
        x = xsol.get(key)
        f = float(getf(key))
        if args.alg == "greedy":
            target = ""
        elif args.alg == "bdm":
            target = x
        else:
            target = (0.5 + kappa_eff) * x
        rows.append([":".join(map(str, key)), x, f, target, _ci(f, args.trials)])
    mean = float(np.mean(welfare))
    ci = float(1.96 * np.std(welfare, ddof=1) / math.sqrt(args.trials)) if args.trials > 1 else float("inf")
    config = {"alg": args.alg, "trials": args.trials, "kappa": args.kappa,
              "epsilon": args.epsilon, "samples": args.samples,
              "instance": args.instance, "family": args.family}
    head = _header("run", seed, config)
    head += f"# lp_objective: {sol.objective!r}\n# mean_welfare: {mean!r}\n# welfare_ci_half_width: {ci!r}\n"
    _emit(args.out, head + _csv(rows, ["pair", "x", "empirical_prob", "target_prob", "ci_half_width"]))
    print(f"mean_welfare: {mean:.6f} +/- {ci:.6f}")
    if args.trace:
        from capalloc.allocator import core
        if args.alg.startswith("twoproposal"):
            cfg = core.AlgoConfig(kappa=args.kappa, epsilon=args.epsilon,
                                  rho_mode="sampled" if args.alg == "twoproposal-sampled" else "exact",
                                  sample_count_override=args.samples, seed=seed)
            tinst, tsol = inst, sol
            if args.alg == "twoproposal-general" and isinstance(inst, inst_mod.BernoulliInstance):
                tinst, tsol = inst_mod.to_general(inst), lp.embed_solution(inst, sol)
            trace = core.run(tinst, tsol, cfg, np.random.default_rng(seed))
            atomic_write_text(args.trace, trace.to_jsonl())
        else:
            print("--trace is only available for the two-proposal algorithms", file=sys.stderr)
    return 0


def cmd_oracle(args) -> int:
    from capalloc.oracles import OracleBudgetError, opt_online, opt_offline_estimate

    seed = _resolve_seed(args)
    inst = _load_instance(args, seed)
    try:
        val = opt_online(inst, args.budget)
    except OracleBudgetError as exc:
        raise BudgetExceeded(str(exc)) from exc
    print(f"opt_online: {val.value!r}")
    rows = [["opt_online", val.value, ""]]
    if args.offline_trials:
        off = opt_offline_estimate(inst, args.offline_trials, np.random.default_rng(seed))
        print(f"opt_offline: {off.mean!r} +/- {off.ci_half_width!r}")
        rows.append(["opt_offline_estimate", off.mean, off.ci_half_width])
    if args.out:
        head = _header("oracle", seed, {"instance": args.instance, "family": args.family,
                                        "budget": args.budget})
        _emit(args.out, head + _csv(rows, ["quantity", "value", "ci_half_width"]))
    return 0


def cmd_audit(args) -> int:
    from capalloc.diagnostics import correlation_audit
    from capalloc.oracles import OracleBudgetError, exact_report

    seed = _resolve_seed(args)
    inst = _load_instance(args, seed)
    if not isinstance(inst, inst_mod.BernoulliInstance):
        raise BadInput("audit expects a Bernoulli instance")
    sol = _load_solution(args, inst)
    try:
        rep = exact_report(inst, sol, args.kappa)
    except OracleBudgetError as exc:
        raise BudgetExceeded(str(exc)) from exc
    aud = correlation_audit(rep, sol, args.kappa)
    head = _header("audit", seed, {"instance": args.instance, "family": args.family,
                                   "kappa": args.kappa})
    _emit(args.out, head + aud.to_csv())
    if args.report_out:
        atomic_write_text(args.report_out, head + rep.to_csv())
    problems = []
    if rep.marginal_error > 1e-9:
        problems.append(f"marginal law off by {rep.marginal_error:.3g}")
    if not rep.capacity_ok:
        problems.append("capacity exceeded on some path")
    if rep.max_beta_ratio > 1.0 + 1e-12:
        problems.append(f"beta ratio {rep.max_beta_ratio:.6f} exceeds 1")
    if aud.f_violations:
        problems.append(f"{aud.f_violations} f-bound violations")
    if aud.delta_violations:
        problems.append(f"{aud.delta_violations} Delta-bound violations")
    print(f"marginal_error: {rep.marginal_error:.3g}  exact_welfare: {rep.welfare!r}  "
          f"lp_objective: {sol.objective!r}")
    if problems:
        print("VIOLATION: " + "; ".join(problems), file=sys.stderr)
        return EXIT_VIOLATION
    print("audit: no violations")
    return 0


def cmd_kappa_table(args) -> int:
    from capalloc.diagnostics import TABLE_ONE, kappa_table, matches_printed

    if args.max_c < 1:
        raise BadInput("--max-c must be at least 1")
    rows = []
    for c, k in kappa_table(args.max_c):
        printed = TABLE_ONE.get(c)
        if printed:
            rows.append([c, k, printed[0], int(matches_printed(k, *printed))])
        else:
            rows.append([c, k, "", ""])
    text = _header("kappa-table", "none", {"max_c": args.max_c})
    text += _csv(rows, ["min_c", "kappa", "published", "matches_published"])
    _emit(args.out, text)
    return 0


def cmd_ratio(args) -> int:
    from capalloc.diagnostics import ratio_report

    seed = _resolve_seed(args)
    inst = _load_instance(args, seed)
    algs = args.algs or ["twoproposal-exact", "bdm", "greedy"]
    table = ratio_report(inst, algs, args.trials, seed, args.jobs, args.kappa)
    head = _header("ratio", seed, {"algs": algs, "trials": args.trials, "kappa": args.kappa,
                                   "instance": args.instance, "family": args.family})
    head += "".join(f"# note: {n}\n" for n in table.notes)
    _emit(args.out, head + table.to_csv())
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_source(p, family=True):
    p.add_argument("--instance", help="instance file (JSON)")
    if family:
        p.add_argument("--family", choices=FAMILIES, help="generate the instance instead")
        p.add_argument("--n", type=int, help="number of users for generated families")
        p.add_argument("--T", type=int, default=3, help="rounds for the random family")
        p.add_argument("--eps", type=float, help="arrival probability for positive-correlation")
        p.add_argument("--c-range", type=int, nargs=2, default=(1, 3))
        p.add_argument("--v-range", type=float, nargs=2, default=(0.0, 1.0))
        p.add_argument("--q-range", type=float, nargs=2, default=(1.0, 1.0))
        p.add_argument("--p-range", type=float, nargs=2, default=(0.0, 1.0))
    p.add_argument("--seed", type=int, help="master seed (drawn and printed when omitted)")
    p.add_argument("--out", help="output file (stdout when omitted)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="capalloc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"capalloc {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate an instance file")
    _add_source(p)
    p.add_argument("--general", action="store_true", help="write the general-distribution embedding")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("lp", help="solve the online LP relaxation")
    _add_source(p)
    p.add_argument("--lp-text", help="also dump the model in LP text format")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_lp)

    p = sub.add_parser("run", help="simulate an algorithm and write per-pair frequencies")
    _add_source(p)
    p.add_argument("--solution", help="LP solution file (solved on the fly when omitted)")
    p.add_argument("--alg", choices=ALGS, default="twoproposal-exact")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--kappa", type=float, default=KAPPA)
    p.add_argument("--epsilon", type=float, default=0.001,
                   help="slack subtracted from kappa in sampled mode")
    p.add_argument("--samples", type=int, help="simulations per normalizer estimate")
    p.add_argument("--trace", help="write one execution as line-delimited JSON")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="optimum online value by backward induction")
    _add_source(p)
    p.add_argument("--budget", type=int, default=20_000_000)
    p.add_argument("--offline-trials", type=int, default=0,
                   help="also estimate the offline optimum with this many samples")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("audit", help="exact law, marginal and correlation checks")
    _add_source(p)
    p.add_argument("--solution")
    p.add_argument("--kappa", type=float, default=KAPPA)
    p.add_argument("--report-out", help="also write the pair-level exact report CSV")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("kappa-table", help="largest constant per minimum capacity")
    p.add_argument("--max-c", type=int, default=9)
    p.add_argument("--out")
    p.set_defaults(func=cmd_kappa_table)

    p = sub.add_parser("ratio", help="welfare ratios against the LP and optimum online")
    _add_source(p)
    p.add_argument("--algs", nargs="+", choices=ALGS)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--kappa", type=float, default=KAPPA)
    p.set_defaults(func=cmd_ratio)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BadInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
