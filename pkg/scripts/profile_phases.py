"""Where ITE time goes: operator application vs. expectation values, per lattice size."""

import argparse
import csv
import sys

from pepsim.ite import IteConfig, ite_run


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", type=int, nargs="+", default=[3, 4, 5, 6])
    p.add_argument("--chi-max", type=int, default=2)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=3.0)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--energy-eval-period", type=int, default=2)
    args = p.parse_args(argv)

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["L", "one_body_s", "two_body_s", "normalize_s", "expectation_s", "total_s", "expectation_share"])
    for L in args.sizes:
        cfg = IteConfig(J=1.0, gamma=args.gamma, tau=args.tau, steps=args.steps,
                        chi_max=args.chi_max, energy_eval_period=args.energy_eval_period)
        t = ite_run(cfg, height=L, width=L).times
        w.writerow([L, f"{t.one_body:.4f}", f"{t.two_body:.4f}", f"{t.normalize:.4f}",
                    f"{t.expectation:.4f}", f"{t.total:.4f}", f"{t.expectation / t.total:.3f}"])


if __name__ == "__main__":
    main()
