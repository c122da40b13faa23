"""Sequential acquisition loop; prints the high-fidelity objective per round.

    python3 scripts/sequential.py [--config configs/dr_sequential.yaml] [--policy random]
"""
import argparse
from pathlib import Path

from mfopt.harness.config import load_config
from mfopt.harness.io import write_outputs
from mfopt.harness.runner import run_sequential

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "dr_sequential.yaml")
    ap.add_argument("--policy", choices=["oed", "random", "tracing"])
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    cfg = load_config(args.config)
    cfg = cfg.replace(**{k: v for k, v in (("policy", args.policy), ("seed", args.seed)) if v is not None})
    rec = run_sequential(cfg, compare_linear=True)
    out = Path(args.out or ROOT / "results" / f"{cfg.problem}_{cfg.policy}_seed{cfg.seed}")
    write_outputs(rec, cfg, out)
    J = rec.J_hifi
    print(f"{'round':>5} {'n_data':>6} {'alpha_k':>10} {'J_hifi':>12} {'J_linear':>12}")
    for r in rec.rows:
        print(f"{r['round']:5d} {r['n_data']:6d} {r['alpha_k']:10.3e} {r['J_hifi']:12.5e} "
              f"{r['J_hifi_linear']:12.5e}")
    print(f"J_hifi ratio final/initial: {J[-1] / J[0]:.4f}; outputs in {out}")


if __name__ == "__main__":
    main()
