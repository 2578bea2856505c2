"""Predicting how often six sample covariances cluster correctly.

Three pairs of equal Toeplitz covariances (rho 0.3, 0.5, 0.7) are estimated
from N_j = M / c_j samples. Clustering succeeds when every intra-pair distance
is below every inter-pair one. The Gaussian limit law gives the probability
without simulation; the Monte Carlo column checks it.
"""

import argparse

from covdist.clustering import ClusteringScenario, empirical_success, success_probability

PROFILES = {
    "2/3": (2 / 3, 2 / 3, 2 / 3),
    "1/2": (1 / 2, 1 / 2, 1 / 2),
    "1/2,1/3,1/4": (1 / 2, 1 / 3, 1 / 4),
}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--metric", default="LE", choices=("EU", "KL", "LE"))
    p.add_argument("--trials", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    print(f"{'c-profile':>12} {'M':>4} {'theory':>8} {'empirical':>10} {'+-':>6}")
    for name, prof in PROFILES.items():
        c = [prof[g] for g in (0, 0, 1, 1, 2, 2)]
        for M in (10, 20, 40):
            sc = ClusteringScenario.toeplitz([0.3, 0.3, 0.5, 0.5, 0.7, 0.7], M, c, args.metric)
            theory = success_probability(sc.law(), sc, seed=args.seed)
            emp = empirical_success(sc, args.trials, seed=args.seed)
            print(f"{name:>12} {M:>4} {theory.value:8.3f} {emp.value:10.3f} {emp.error:6.3f}")


if __name__ == "__main__":
    main()
