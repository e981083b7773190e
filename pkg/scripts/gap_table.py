"""Excess worst-case delay of the multi-chart rule over a single CUSUM, versus gamma.

    python scripts/gap_table.py --n 2 --gammas 100,1000 --out results/gap
"""
import argparse
import math
from pathlib import Path

from multicusum.calibration import McParams
from multicusum.io import write_csv, write_json
from multicusum.montecarlo import excess_delay_table


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2)
    ap.add_argument("--gammas", default="100,1000")
    ap.add_argument("--cal-dt", type=float, default=0.25)
    ap.add_argument("--cal-reps", type=int, default=10_000)
    ap.add_argument("--delay-dt", type=float, default=5e-3)
    ap.add_argument("--delay-reps", type=int, default=40_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/gap"))
    a = ap.parse_args()

    gammas = [float(g) for g in a.gammas.split(",")]
    mc = McParams(replications=a.cal_reps, dt=a.cal_dt, seed=a.seed)
    rows = excess_delay_table(gammas, a.n, mc=mc, delay_dt=a.delay_dt, delay_reps=a.delay_reps, seed=a.seed)
    cols = ["gamma", "N", "nu", "f_neg_nu", "h", "h_se", "delay", "delay_se", "gap", "gap_se", "log_N"]
    write_csv(a.out / "gap.csv", cols, [[r.to_dict()[c] for c in cols] for r in rows],
              comment=f"seed={a.seed} n={a.n}")
    write_json(a.out / "gap.json", {"args": vars(a) | {"out": str(a.out)}, "rows": [r.to_dict() for r in rows]})
    print(f"{'gamma':>8} {'h':>8} {'delay':>8} {'gap':>8} {'se':>7}  log N = {math.log(a.n):.4f}")
    for r in rows:
        print(f"{r.gamma:>8g} {r.h:>8.4f} {r.delay.mean:>8.4f} {r.gap:>8.4f} {r.gap_se:>7.4f}")


if __name__ == "__main__":
    main()
