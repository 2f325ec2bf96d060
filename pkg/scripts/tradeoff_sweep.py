"""Sweep the budget fraction of a config and tabulate final cost vs quality.

    python3 scripts/tradeoff_sweep.py configs/greedy_prune.json --fractions 0.9 0.7 0.5 0.3
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
import tempfile
from pathlib import Path

from kmr.config import ExperimentConfig, run_experiment
from kmr.errors import KMRError


def sweep(raw: dict, fractions: list[float], seeds: list[int]):
    with tempfile.TemporaryDirectory() as tmp:
        for seed in seeds:
            for frac in fractions:
                cfg_dict = copy.deepcopy(raw)
                cfg_dict["seed"] = seed
                cfg_dict["engine"].pop("budget", None)
                cfg_dict["engine"]["budget_fraction"] = frac
                try:
                    res = run_experiment(ExperimentConfig.from_dict(cfg_dict), Path(tmp))
                except KMRError as exc:
                    print(f"seed {seed} fraction {frac}: {exc}", file=sys.stderr)
                    continue
                yield {
                    "seed": seed,
                    "budget_fraction": frac,
                    "budget": res.budget,
                    "outcome": res.outcome.value,
                    "steps": len(res.log),
                    "initial_cost": res.initial.cost,
                    "final_cost": res.final.cost,
                    "initial_quality": res.initial.quality,
                    "final_quality": res.final.quality,
                }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.9, 0.7, 0.5, 0.3, 0.2])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("-o", "--output", help="CSV path (default: stdout)")
    args = ap.parse_args(argv)

    raw = json.loads(Path(args.config).read_text())
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    writer = None
    for row in sweep(raw, args.fractions, args.seeds):
        if writer is None:
            writer = csv.DictWriter(out, fieldnames=list(row), lineterminator="\r\n")
            writer.writeheader()
        writer.writerow(row)
    if args.output:
        out.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
