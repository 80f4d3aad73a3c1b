"""Empirical smallness thresholds for the Uhlenbeck gauge and the gauge pair.

For each candidate value the script runs 20 seeded random inputs and reports
how many converge.  The largest value where all seeds converge is the
empirical threshold; the package defaults sit below it.

    python benchmarks/gauge_thresholds.py --n 8
"""

import argparse

import numpy as np

from biharm4.errors import Biharm4Error
from biharm4.gauge import build_gauge_pair, coulomb_gauge, gauge_smallness, uhlenbeck_gauge
from biharm4.potentials import random_potentials
from biharm4.spectral import Grid, random_smooth


def uhlenbeck_scan(grid, values, seeds):
    for target in values:
        ok = 0
        for seed in seeds:
            rng = np.random.default_rng(seed)
            a = random_smooth(grid, (3, 3), rng, kmax=2, zero_mean=True)
            Omega = coulomb_gauge(grid, a - a.swapaxes(0, 1))
            Omega *= np.sqrt(target / gauge_smallness(grid, Omega))
            try:
                uhlenbeck_gauge(grid, Omega, eps_gauge=np.inf)
                ok += 1
            except Biharm4Error:
                pass
        print(f"uhlenbeck smallness ~{target:8.3f}: {ok}/{len(seeds)} converged")


def pair_scan(grid, values, seeds):
    for eps in values:
        ok = 0
        for seed in seeds:
            pots = random_potentials(grid, 3, rng=seed)
            try:
                build_gauge_pair(grid, pots, eps, eps_max=np.inf, eps_gauge=np.inf)
                ok += 1
            except Biharm4Error:
                pass
        print(f"pair eps {eps:8.3f}: {ok}/{len(seeds)} converged")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=8)
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--gauge-values", type=float, nargs="+",
                        default=[512.0, 2048.0, 8192.0, 32768.0])
    parser.add_argument("--pair-values", type=float, nargs="+", default=[0.5, 1.0, 2.0, 4.0, 8.0])
    args = parser.parse_args()
    grid = Grid(args.n)
    seeds = range(args.seeds)
    uhlenbeck_scan(grid, args.gauge_values, seeds)
    pair_scan(grid, args.pair_values, seeds)


if __name__ == "__main__":
    main()
