"""``safereach`` command line: run, ground-truth, validate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from .harness import DEFAULT_SEEDS, ExperimentConfig, bundled_example_path, load_mdp, run_experiment
from .learner import ALGOS, NoSafePolicyError, compute_ground_truth
from .mdp import Mdp, MdpFormatError, MdpValidationError, validate_mdp
from .opt import build_known_lp


def _seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="safereach", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def mdp_arg(p):
        p.add_argument("--mdp", type=Path, default=None,
                       help="MDP JSON file (default: bundled example)")

    run = sub.add_parser("run", help="multi-seed learning experiment")
    mdp_arg(run)
    run.add_argument("--algo", choices=(*ALGOS, "both"), default="both")
    run.add_argument("--episodes", "-K", type=int, default=2000)
    run.add_argument("--p", type=float, default=0.5)
    run.add_argument("--delta", type=float, default=0.01)
    run.add_argument("--eta", type=float, default=0.1)
    run.add_argument("--seeds", type=_seeds, default=DEFAULT_SEEDS, help="comma separated, e.g. 0,1,2")
    run.add_argument("--proxy", choices=("declared", "all-living", "both"), default="declared",
                     help="'both' runs the proxy ablation")
    run.add_argument("--out", type=Path, default=Path("results"))
    run.add_argument("--plot", action="store_true")
    run.add_argument("--workers", type=int, default=1)

    gt = sub.add_parser("ground-truth", help="solve the known-model program")
    mdp_arg(gt)
    gt.add_argument("--p", type=float, default=0.5)
    gt.add_argument("--proxy", choices=("declared", "all-living"), default="declared")
    gt.add_argument("--dump-lp", type=Path, default=None, help="write the LP in CPLEX LP format")

    val = sub.add_parser("validate", help="check an MDP file")
    mdp_arg(val)
    return ap


def _cmd_run(args) -> int:
    algos = ALGOS if args.algo == "both" else (args.algo,)
    proxies = ("declared", "all-living") if args.proxy == "both" else (args.proxy,)
    cfg = ExperimentConfig(
        mdp_path=args.mdp or bundled_example_path(),
        algos=algos,
        K=args.episodes,
        seeds=args.seeds,
        p=args.p,
        delta=args.delta,
        eta=args.eta,
        proxy_modes=proxies,
        output_dir=args.out,
        plot=args.plot,
        workers=args.workers,
    )
    summary = run_experiment(cfg)
    for tag, r in summary["runs"].items():
        print(f"{tag}: cumulative regret {r['final_cumulative_regret_mean']:.6g} "
              f"(feasible episodes per seed {r['feasible_episodes_per_seed']})")
    print(f"outputs in {cfg.output_dir}")
    return 0


def _cmd_ground_truth(args) -> int:
    mdp = load_mdp(args.mdp or bundled_example_path())
    truth = compute_ground_truth(mdp, args.p, proxy_mode=args.proxy)
    if args.dump_lp:
        args.dump_lp.write_text(build_known_lp(mdp, args.p).to_lp_format())
    S, A = mdp.states, mdp.actions
    out = {
        "optimal_value": truth.value,
        "optimal_safety": truth.safety,
        "optimal_policy": {S[x]: {A[a]: float(truth.policy.probs[x, a]) for a in range(mdp.n_actions)}
                           for x in sorted(mdp.living)},
        "baseline_policy": {S[x]: {A[a]: float(truth.baseline.probs[x, a]) for a in range(mdp.n_actions)}
                            for x in sorted(mdp.living)},
        "p_s": truth.p_s,
        "q_min": truth.q_min,
    }
    if "baseline_safety" in mdp.reference:
        out["p_s_reference"] = mdp.reference["baseline_safety"]
    print(json.dumps(out, indent=2))
    return 0


def _cmd_validate(args) -> int:
    path = args.mdp or bundled_example_path()
    rep = validate_mdp(Mdp.from_json(path))
    for w in rep.warnings:
        print(f"warning: {w}")
    for e in rep.errors:
        print(f"error: {e}")
    print(f"{path}: {'ok' if rep.ok else 'invalid'}")
    return 0 if rep.ok else 1


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


COMMANDS = {"run": _cmd_run, "ground-truth": _cmd_ground_truth, "validate": _cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        warnings.showwarning = _show_warning
        try:
            return COMMANDS[args.command](args)
        except (MdpFormatError, MdpValidationError, NoSafePolicyError, ValueError, OSError) as exc:
            print(f"safereach: error: {exc}", file=sys.stderr)
            return 2


if __name__ == "__main__":
    sys.exit(main())
