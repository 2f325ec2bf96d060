"""Run one config end to end and print its cost/quality table.

    python3 scripts/run_pipeline.py configs/prune_quant_blobs.json --out-dir runs
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from kmr.config import load_config, run_experiment
from kmr.runlog import read_runlog, report_csv


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--out-dir", type=Path, default=Path("."))
    ap.add_argument("--seed", type=int, help="override the config seed")
    args = ap.parse_args(argv)

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.raw["seed"] = args.seed
    result = run_experiment(cfg, args.out_dir)
    log_path = args.out_dir / cfg.output.get("run_log", "run.jsonl")
    sys.stdout.write(report_csv(read_runlog(log_path)))
    print(f"# {result.outcome.value}, budget {result.budget:g}, stopped: {result.stop_reason}", file=sys.stderr)
    return 0 if result.success else 2


if __name__ == "__main__":
    sys.exit(main())
