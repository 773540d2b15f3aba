"""Pilot for the LIL sanity corridor: d = 3, p = 2, checkpoints up to n = 10^6, 200 replicates.

The median running max at the last checkpoint is compared against
lil_constant / 100 and 5 * lil_constant.
"""
import argparse
import json

from ril.mc_experiments import ExperimentConfig, lil_track
from ril.theory_constants import lil_constant, rate_params_for


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10 ** 6)
    ap.add_argument("--replicates", type=int, default=200)
    ap.add_argument("--seed", type=int, default=31337)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    cfg = ExperimentConfig(walk="simple", d=3, p=2, n_grid=(args.n,), replicates=args.replicates,
                           seed=args.seed, checkpoint_ratio=4.0)
    dist = cfg.dist()
    const = lil_constant(rate_params_for(dist, 2))
    report = lil_track(cfg, constant=const)
    med = report.select("lil_q50")[-1].estimate
    result = {"n": args.n, "replicates": args.replicates, "seed": args.seed,
              "lil_constant": const, "median_running_max": med,
              "ratio": med / const, "inside": bool(const / 100 < med < 5 * const),
              "walltime_s": report.walltime_s}
    print(json.dumps(result, indent=1))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result, fh, indent=1)


if __name__ == "__main__":
    main()
