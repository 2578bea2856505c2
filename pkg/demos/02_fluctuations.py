"""The consistent estimators fluctuate like the predicted Gaussian.

For rho = (0.8, 0.4) and c = (1/10, 1/2) the script draws the consistent
estimates, standardizes them with the limit law and prints a text histogram
next to the standard normal density, plus the KS distance.
"""

import argparse

import numpy as np
from scipy import stats

from covdist.asymptotics import PairSystem, asymptotic_law
from covdist.estimators import consistent_distance
from covdist.spectral import sample_gaussian, scm_spectrum, toeplitz_model


def text_histogram(z, bins=13, width=50):
    edges = np.linspace(-3.25, 3.25, bins + 1)
    counts, _ = np.histogram(z, edges)
    density = counts / (len(z) * np.diff(edges))
    mids = 0.5 * (edges[1:] + edges[:-1])
    top = max(density.max(), stats.norm.pdf(0))
    for x, h in zip(mids, density):
        bar = "#" * int(round(width * h / top))
        mark = int(round(width * stats.norm.pdf(x) / top))
        line = list(bar.ljust(width + 1))
        line[mark] = "|"
        print(f"{x:+5.1f} {''.join(line)}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--M", type=int, default=40)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--metric", default="LE", choices=("EU", "KL", "LE"))
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    M = args.M
    models = [toeplitz_model(0.8, M), toeplitz_model(0.4, M)]
    N = [10 * M, 2 * M]
    law = asymptotic_law(PairSystem(models, N, [(0, 1)], args.metric))
    print(f"{args.metric}: d = {law.d[0]:.4f}, predicted mean {law.loc[0]:.4f}, sd {law.scale[0]:.4f}")

    rng = np.random.default_rng(args.seed)
    d = np.empty(args.trials)
    for t in range(args.trials):
        s1, s2 = (scm_spectrum(sample_gaussian(m, n, rng)) for m, n in zip(models, N))
        d[t] = consistent_distance(s1, s2, args.metric).value
    z = law.standardize(d[:, None])[:, 0]
    print(f"sample mean {d.mean():.4f}, sd {d.std(ddof=1):.4f}")
    print(f"standardized: mean {z.mean():+.3f}, variance {z.var(ddof=1):.3f}")
    print(f"KS distance to the limit law: {stats.kstest(z, 'norm').statistic:.3f}\n")
    print("histogram of the standardized estimates ('|' marks the N(0, 1) density)")
    text_histogram(z)


if __name__ == "__main__":
    main()
