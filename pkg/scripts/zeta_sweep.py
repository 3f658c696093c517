"""Stage-1 error rate against the decoder constant zeta.

    python3 scripts/zeta_sweep.py --trials 200 > zeta.csv
"""

import argparse
import csv
import sys

from commgt import oracles
from commgt.core_model import ZETA_DEFAULT, Parameters


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--F", type=int, default=40)
    ap.add_argument("--M", type=int, default=8)
    ap.add_argument("--k-f", type=int, default=2)
    ap.add_argument("--k-m", type=int, default=4)
    ap.add_argument("--rho-T", type=int, default=8)
    ap.add_argument("--zetas", type=float, nargs="+", default=[0.5, 1, 2, 4, 8, 16, ZETA_DEFAULT])
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["zeta", "T1", "errors", "trials", "rate", "wilson_lo", "wilson_hi"])
    for zeta in args.zetas:
        p = Parameters(F=args.F, M=args.M, k_f=args.k_f, k_m=args.k_m, rho_T=args.rho_T,
                       zeta_override=zeta, seed=args.seed)
        est = oracles.mc_error_rate(p, args.trials, threads=args.threads)
        out.writerow([zeta, est.results[0].T1, est.errors, est.trials, est.rate, est.lo, est.hi])
        print(f"zeta={zeta:g}: {est.errors}/{est.trials}", file=sys.stderr)


if __name__ == "__main__":
    main()
