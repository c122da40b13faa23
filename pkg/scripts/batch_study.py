"""Sequential versus batch acquisition at a shared budget.

    python3 scripts/batch_study.py [--budget 6]
"""
import argparse
from pathlib import Path

from mfopt.harness.config import load_config
from mfopt.harness.io import write_outputs
from mfopt.harness.runner import run_batch_study

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "dr_batch.yaml")
    ap.add_argument("--budget", type=int)
    args = ap.parse_args()
    cfg = load_config(args.config)
    if args.budget:
        cfg = cfg.replace(N_budget=args.budget)
    rec = run_batch_study(cfg)
    out = ROOT / "results" / "batch"
    write_outputs(rec, cfg, out)
    print(f"{'p':>3} {'round':>5} {'n_data':>6} {'J_hifi':>12}")
    for r in rec.rows:
        print(f"{r['batch_size']:3d} {r['round']:5d} {r['n_data']:6d} {r['J_hifi']:12.5f}")
    print(f"outputs in {out}")


if __name__ == "__main__":
    main()
