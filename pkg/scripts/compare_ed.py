"""ITE energy per site against exact diagonalization on 2x2 and 3x3 lattices.

    python scripts/compare_ed.py --tau 3 --steps 200 --chi-max 2 --out results/ed_compare.csv
"""

import argparse
import csv
import sys
import time

from pepsim.ed import ground_state
from pepsim.ite import IteConfig, ite_run


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[2, 3])
    p.add_argument("--gammas", type=float, nargs="+", default=[0.0, 0.5, 1.0, 1.5, 2.0])
    p.add_argument("--j", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=3.0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--chi-max", type=int, default=2)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--out", default="")
    args = p.parse_args(argv)

    cols = ["L", "gamma", "ite_per_site", "ed_per_site", "rel_error", "max_chi", "seconds"]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.DictWriter(fh, cols, lineterminator="\n")
    w.writeheader()
    for L in args.sizes:
        for g in args.gammas:
            t0 = time.perf_counter()
            cfg = IteConfig(J=args.j, gamma=g, tau=args.tau, steps=args.steps, epsilon=args.epsilon, chi_max=args.chi_max)
            res = ite_run(cfg, height=L, width=L)
            e = res.trace[-1].energy / (L * L)
            e0 = ground_state(L, L, args.j, g).ground_energy / (L * L)
            w.writerow({
                "L": L, "gamma": g, "ite_per_site": repr(e), "ed_per_site": repr(e0),
                "rel_error": f"{abs(e - e0) / abs(e0):.3e}", "max_chi": res.lattice.max_bond_dim(),
                "seconds": f"{time.perf_counter() - t0:.3f}",
            })
            fh.flush()
    if args.out:
        fh.close()


if __name__ == "__main__":
    main()
