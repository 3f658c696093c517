"""First-stage test count and error rate in the classical dilution model as alpha varies.

The formula count scales as 1/alpha; the older noise-dependent design needs 1/alpha^2.

    python3 scripts/dilution_scaling.py --zeta 4 --trials 100
"""

import argparse
import sys

from commgt import bounds, oracles
from commgt.stage1_design import choose_dilution_params


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.125, 0.25, 0.5, 1.0])
    ap.add_argument("--zeta", type=float, default=4.0)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    print("alpha,T1,t1_formula,order_term,nli_prior_order_term,errors,trials,wilson_hi")
    for a in args.alphas:
        cfg = choose_dilution_params(args.n, args.k, a, zeta=args.zeta)
        terms = bounds.dilution_order_terms(args.n, args.k, a)
        res = oracles.run_trials(
            lambda t: oracles.run_dilution_trial(args.n, args.k, cfg, t, seed=args.seed), args.trials)
        est = oracles.summarize(res)
        print(f"{a},{cfg.T1},{cfg.t1_formula},{terms['order_term']},{terms['nli_prior_order_term']},"
              f"{est.errors},{est.trials},{est.hi}")
        print(f"alpha={a}: T1={cfg.T1} errors {est.errors}/{est.trials}", file=sys.stderr)


if __name__ == "__main__":
    main()
