"""Messages and bytes per plan as the lattice grows, from real parallel runs."""

import argparse
import csv
import sys

from pepsim.networks import all_ones_network
from pepsim.parallel import execute_plan_parallel
from pepsim.plan import plan_quadrant, plan_row


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--l-min", type=int, default=4)
    p.add_argument("--l-max", type=int, default=10)
    p.add_argument("--chi", type=int, default=2)
    args = p.parse_args(argv)

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["L", "plan", "messages", "bytes", "comm_seconds", "local_seconds"])
    for L in range(args.l_min, args.l_max + 1):
        net = all_ones_network(L, L, args.chi)
        plans = [("quadrant", plan_quadrant(net))]
        plans += [(f"row{b}", plan_row(net, b)) for b in range(1, min(L, 4) + 1)]
        for name, plan in plans:
            _, stats, _ = execute_plan_parallel(net, plan)
            w.writerow([L, name, stats.messages_sent, stats.bytes_sent,
                        f"{stats.comm_seconds:.6f}", f"{stats.local_seconds:.6f}"])


if __name__ == "__main__":
    main()
