"""Pilot for the cross-block study: lazy simple walk d = 2, n = 10^5, b_n = log log n, eps = 0.5."""
import argparse
import json

from ril.mc_experiments import ExperimentConfig, block_partition_study


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10 ** 5)
    ap.add_argument("--replicates", type=int, default=10 ** 4)
    ap.add_argument("--eta", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=4242)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    cfg = ExperimentConfig(walk="lazy", eta=args.eta, d=2, p=2, n_grid=(args.n,), bn_rule="loglog",
                           eps=0.5, replicates=args.replicates, seed=args.seed)
    report = block_partition_study(cfg)
    result = {c.experiment: [c.estimate, c.stderr] for c in report.cells}
    result.update(report.extra["blocks"][str(args.n)])
    result.update(n=args.n, replicates=args.replicates, seed=args.seed, eta=args.eta,
                  walltime_s=report.walltime_s)
    print(json.dumps(result, indent=1))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result, fh, indent=1)


if __name__ == "__main__":
    main()
