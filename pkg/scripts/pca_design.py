"""Bias and noise of the PCA block estimator before running it.

For full-ring windows of n = 2N+1 steps the block estimator has bias
e_n(lam) - e(lam) and, per independent block, relative variance
exp(n [2 e_n(lam) - e_n(2 lam)]) - 1 of the tilted weight. The script
tabulates both for a grid of drives and window sizes so that a
configuration for the oracle comparison can be chosen up front.

    python scripts/pca_design.py --L 4 --sweeps 3e7
"""
import argparse
import math

from gibbsft import pca


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--L", type=int, default=4)
    ap.add_argument("--K", type=float, default=0.1)
    ap.add_argument("--drives", type=float, nargs="+", default=[0.05, 0.07, 0.1, 0.2])
    ap.add_argument("--Ns", type=int, nargs="+", default=[2, 5, 10, 20])
    ap.add_argument("--lams", type=float, nargs="+", default=[0.2, 0.5, 0.8])
    ap.add_argument("--sweeps", type=float, default=3e7)
    args = ap.parse_args()

    print(f"{'drive':>6} {'N':>4} {'lam':>5} {'e':>10} {'bias %':>8} {'sigma %':>8}")
    for drive in args.drives:
        rule = pca.glauber(args.K, 0.0, drive)
        for N in args.Ns:
            n = 2 * N + 1
            blocks = args.sweeps / n
            for lam in args.lams:
                e = pca.exact_scgf_ring(rule, args.L, lam)
                e_n = pca.exact_block_moment(rule, args.L, lam, n)
                e_2 = pca.exact_block_moment(rule, args.L, 2 * lam, n)
                rel_var = math.expm1(n * (2 * e_n - e_2))
                sigma = math.sqrt(max(rel_var, 0.0) / blocks) / n
                print(f"{drive:6.3f} {N:4d} {lam:5.2f} {e:10.6f} {100 * (e_n / e - 1):8.3f} {100 * sigma / abs(e):8.3f}")


if __name__ == "__main__":
    main()
