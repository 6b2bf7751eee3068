"""Multi-seed experiment runner: ground truth, ledgers, averaged CSVs, figures."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib.resources import files
from pathlib import Path

import numpy as np

from .learner import ALGOS, PROXY_MODES, GroundTruth, RunLedger, compute_ground_truth, run_seed
from .mdp import Mdp, MdpValidationError, ProxyWarning, validate_mdp

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
CSV_COLUMNS = ("k", "mean_R", "mean_C", "mean_cumulative_regret", "std_R", "std_C", "std_cumulative_regret")
LEDGER_FIELDS = ("seed", "algo", "k", "feasible", "R_k", "C_k", "cumulative_regret", "episode_length", "hit_unsafe")


def bundled_example_path() -> Path:
    return Path(str(files("safereach") / "data" / "reach_avoid_example.json"))


def load_mdp(path) -> Mdp:
    """Parse and validate an MDP file; validation warnings are re-emitted."""
    mdp = Mdp.from_json(path)
    rep = validate_mdp(mdp)
    if not rep.ok:
        raise MdpValidationError(f"{path}: " + "; ".join(rep.errors))
    for w in rep.warnings:
        warnings.warn(w, ProxyWarning if w.startswith("proxy") else UserWarning, stacklevel=2)
    return mdp


@dataclass
class ExperimentConfig:
    mdp_path: Path = field(default_factory=bundled_example_path)
    algos: tuple[str, ...] = ALGOS
    K: int = 2000
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    p: float = 0.5
    delta: float = 0.01
    eta: float = 0.1
    proxy_modes: tuple[str, ...] = ("declared",)
    output_dir: Path = Path("results")
    plot: bool = False
    workers: int = 1

    def __post_init__(self):
        self.mdp_path = Path(self.mdp_path)
        self.output_dir = Path(self.output_dir)
        self.algos = tuple(self.algos)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.proxy_modes = tuple(self.proxy_modes)
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 0.5)")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be non-empty and distinct")
        if not self.algos or set(self.algos) - set(ALGOS):
            raise ValueError(f"algos must be a non-empty subset of {ALGOS}")
        if not self.proxy_modes or set(self.proxy_modes) - set(PROXY_MODES):
            raise ValueError(f"proxy modes must be a non-empty subset of {PROXY_MODES}")


def _check_writable(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-probe"
    probe.write_text("")
    probe.unlink()


def _job(args):
    mdp, algo, K, seed, p, delta, eta, proxy, truth = args
    return run_seed(mdp, algo, K, seed, p=p, delta=delta, eta=eta, proxy_mode=proxy, truth=truth)


def run_ledgers(cfg: ExperimentConfig, mdp: Mdp, truths: dict[str, GroundTruth]) -> dict:
    """All (algo, proxy mode, seed) runs, keyed by (algo, proxy)."""
    jobs = [
        (mdp, algo, cfg.K, seed, cfg.p, cfg.delta, cfg.eta, proxy, truths[proxy])
        for proxy in cfg.proxy_modes
        for algo in cfg.algos
        for seed in cfg.seeds
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            ledgers = list(pool.map(_job, jobs))
    else:
        ledgers = [_job(j) for j in jobs]
    out: dict = {}
    for led in ledgers:
        out.setdefault((led.algo, led.proxy_mode), []).append(led)
    return out


def average(ledgers: list[RunLedger]) -> dict[str, np.ndarray]:
    R = np.array([l.objective_regret for l in ledgers])
    C = np.array([l.constraint_regret for l in ledgers])
    cum = np.array([l.cumulative_regret for l in ledgers])
    return {
        "k": np.arange(1, R.shape[1] + 1),
        "mean_R": R.mean(axis=0),
        "mean_C": C.mean(axis=0),
        "mean_cumulative_regret": cum.mean(axis=0),
        "std_R": R.std(axis=0),
        "std_C": C.std(axis=0),
        "std_cumulative_regret": cum.std(axis=0),
    }


def write_ledger(path: Path, ledger: RunLedger) -> None:
    with open(path, "w") as f:
        for row in ledger.rows():
            f.write(json.dumps({k: row[k] for k in LEDGER_FIELDS}) + "\n")


def read_ledger(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def write_average_csv(path: Path, avg: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\r\n")
        w.writerow(CSV_COLUMNS)
        for i in range(len(avg["k"])):
            w.writerow([int(avg["k"][i])] + [repr(float(avg[c][i])) for c in CSV_COLUMNS[1:]])


def read_average_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return {c: np.array([float(r[c]) for r in rows]) for c in CSV_COLUMNS}


def _truth_summary(mdp: Mdp, truth: GroundTruth, p: float) -> dict:
    S, A = mdp.states, mdp.actions
    out = {
        "optimal_value": truth.value,
        "optimal_safety": truth.safety,
        "optimal_policy": {
            S[x]: {A[a]: float(truth.policy.probs[x, a]) for a in range(mdp.n_actions)}
            for x in sorted(mdp.living | (set() if mdp.unsafe_terminal else mdp.unsafe))
        },
        "baseline_policy": {
            S[x]: {A[a]: float(truth.baseline.probs[x, a]) for a in range(mdp.n_actions)}
            for x in sorted(mdp.living)
        },
        "p": p,
        "p_s": truth.p_s,
        "q_min": truth.q_min,
    }
    ref = mdp.reference.get("baseline_safety")
    if ref is not None:
        out["p_s_reference"] = ref
        out["p_s_note"] = (
            f"exact linear solve gives {truth.p_s:.6g}; the reference value {ref} is not reproduced "
            "and is not used"
        )
    return out


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every configured learner and write ledgers, CSVs, summary and figures.

    Returns the summary dictionary that is also written to ``summary.json``.
    """
    out = cfg.output_dir
    _check_writable(out)
    mdp = load_mdp(cfg.mdp_path)
    truths = {m: compute_ground_truth(mdp, cfg.p, proxy_mode=m) for m in cfg.proxy_modes}
    runs = run_ledgers(cfg, mdp, truths)

    (out / "ledgers").mkdir(exist_ok=True)
    averages = {}
    summary = {
        "config": {
            "mdp": str(cfg.mdp_path),
            "algos": list(cfg.algos),
            "K": cfg.K,
            "K_note": "episode budget chosen for this run (harness default 2000)",
            "seeds": list(cfg.seeds),
            "p": cfg.p,
            "delta": cfg.delta,
            "eta": cfg.eta,
            "t_max": mdp.t_max,
            "proxy_modes": list(cfg.proxy_modes),
        },
        "ground_truth": {m: _truth_summary(mdp, t, cfg.p) for m, t in truths.items()},
        "runs": {},
    }
    for (algo, proxy), ledgers in sorted(runs.items()):
        tag = f"{algo}_{proxy}"
        for led in ledgers:
            write_ledger(out / "ledgers" / f"{tag}_seed{led.seed}.jsonl", led)
        avg = average(ledgers)
        averages[(algo, proxy)] = avg
        write_average_csv(out / f"{tag}.csv", avg)
        summary["runs"][tag] = {
            "final_cumulative_regret_mean": float(avg["mean_cumulative_regret"][-1]),
            "final_cumulative_regret_per_seed": {str(l.seed): float(l.cumulative_regret[-1]) for l in ledgers},
            "feasible_episodes_per_seed": {str(l.seed): int(l.feasible.sum()) for l in ledgers},
            "max_constraint_regret": float(max(l.constraint_regret.max() for l in ledgers)),
        }
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    if cfg.plot:
        from .plots import write_figures

        summary["figures"] = [str(p) for p in write_figures(averages, out)]
    return summary
