"""Corner values of the rescaled exit-energy problems against their closed forms.

    python scripts/pde_sweep.py --epsilons 0.25,0.2,0.15,0.125 --out results/pde
"""
import argparse
from pathlib import Path

from multicusum import pde
from multicusum.io import write_csv


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epsilons", default="0.25,0.2,0.15,0.125,0.1")
    ap.add_argument("--cells-per-layer", type=int, default=32)
    ap.add_argument("--scheme", choices=["central", "upwind"], default="central")
    ap.add_argument("--out", type=Path, default=Path("results/pde"))
    a = ap.parse_args()

    eps = [float(e) for e in a.epsilons.split(",")]
    rows = []
    for problem in pde.Problem:
        rows += pde.sweep(eps, problem, a.cells_per_layer, a.scheme)
    write_csv(a.out / "sweep.csv", pde.SWEEP_COLUMNS, [r.as_row() for r in rows],
              comment=f"scheme={a.scheme} cells_per_layer={a.cells_per_layer}")
    for r in rows:
        print(f"{r.problem.value:>20} eps={r.epsilon:<6g} n={r.n_cells:<5d} corner={r.corner:<12.6g} "
              f"asymptote={r.asymptote:<12.6g} rel_err={r.rel_err:.4f}")
    for e in eps[:3]:
        rep = pde.product_check(e, scheme=a.scheme)
        print(f"product check eps={e}: T {rep.rel_err_T:.2e}  S {rep.rel_err_S:.2e}")


if __name__ == "__main__":
    main()
