"""Continuation error versus number of pseudo-time steps (diffusion-reaction).

    python3 scripts/continuation_study.py [--corrector iterate|single|none]
"""
import argparse
from pathlib import Path

from mfopt.harness.config import load_config
from mfopt.harness.io import write_outputs
from mfopt.harness.runner import run_continuation_study

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "dr_continuation.yaml")
    ap.add_argument("--corrector", choices=["iterate", "single", "none"])
    args = ap.parse_args()
    cfg = load_config(args.config)
    if args.corrector:
        cfg = cfg.replace(continuation_corrector=args.corrector)
    rec = run_continuation_study(cfg)
    out = ROOT / "results" / f"continuation_{cfg.continuation_corrector}"
    write_outputs(rec, cfg, out)
    print(f"direct projected optimum objective {rec.meta['J_direct']:.6f}, rank {rec.meta['rank']}")
    print(f"{'n_steps':>7} {'objective error':>16} {'|b - b_direct|':>15} {'corrector its':>13}")
    for r in rec.rows:
        print(f"{r['n_steps']:7d} {r['objective_error']:16.3e} {r['b_error']:15.3e} "
              f"{r['corrector_iterations']:13d}")
    print(f"outputs in {out}")


if __name__ == "__main__":
    main()
