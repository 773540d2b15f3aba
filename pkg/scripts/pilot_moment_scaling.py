"""Pilot for the moment-scaling bands: scaled E J_n over n = 2^10..2^16, d = 2 and 3, p = 2.

Prints the scaled estimates, their standard errors and the relative spread
(max - min) / min. The acceptance suite reruns exactly these settings.
"""
import argparse
import json
import time

from ril.mc_experiments import ExperimentConfig, estimate_moments, scaled_drift

GRID = tuple(2 ** k for k in range(10, 17))
SETTINGS = {2: dict(replicates=4000), 3: dict(replicates=1000)}
SEED = 20240601


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=SEED)
    ap.add_argument("--out", default=None, help="optional JSON summary path")
    args = ap.parse_args()
    summary = {}
    for d, extra in SETTINGS.items():
        cfg = ExperimentConfig(walk="simple", d=d, p=2, n_grid=GRID, moments=(1,),
                               seed=args.seed, **extra)
        t0 = time.perf_counter()
        report = estimate_moments(cfg)
        cells = report.select("moment_scaled", m_or_lambda=1)
        vals = [c.estimate for c in cells]
        summary[d] = {"n": list(GRID), "scaled": vals, "stderr": [c.stderr for c in cells],
                      "drift": scaled_drift(vals), "replicates": cfg.replicates,
                      "seed": args.seed, "seconds": time.perf_counter() - t0}
        print(f"d={d} drift={summary[d]['drift']:.4f} "
              + " ".join(f"{v:.4f}" for v in vals))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(summary, fh, indent=1)


if __name__ == "__main__":
    main()
