"""Credible-interval coverage of the hierarchical FRB fit on synthetic catalogs.

    python3 scripts/coverage.py --replicates 10 --n-iter 4000 --out results/coverage
"""
import argparse
from pathlib import Path

from kcontact.mcmc import CoverageConfig, coverage_study


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="results/coverage")
    ap.add_argument("--replicates", type=int, default=10)
    ap.add_argument("--chains", type=int, default=4)
    ap.add_argument("--n-iter", type=int, default=4000)
    ap.add_argument("--burn-in", type=int, default=1000)
    ap.add_argument("--adapt-at", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    cfg = CoverageConfig(n_replicates=args.replicates, n_chains=args.chains, n_iter=args.n_iter,
                         burn_in=args.burn_in, adapt_at=args.adapt_at, seed=args.seed, workers=args.workers)
    table = coverage_study(cfg, progress=lambda r, c: print(f"replicate {r}: covered {c.astype(int).tolist()}",
                                                            flush=True))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "coverage.csv")
    print(table.table())


if __name__ == "__main__":
    main()
