"""Pilot for the tail-diagnostic lambda grid: d = 3, p = 2, n = 10^4, b_n = 3.

Prints P-hat, the decay diagnostic and md_rate per lambda so an estimable
grid (at least 10 exceedances per cell) can be chosen.
"""
import argparse
import warnings

from ril.mc_experiments import ExperimentConfig, estimate_tail
from ril.theory_constants import md_rate, rate_params_for


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicates", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--lambdas", default="0.02,0.05,0.1,0.15,0.2,0.3,0.4,0.5,20")
    args = ap.parse_args()
    lams = tuple(float(x) for x in args.lambdas.split(","))
    cfg = ExperimentConfig(walk="simple", d=3, p=2, n_grid=(10 ** 4,), bn_rule=(3.0,),
                           lambdas=lams, replicates=args.replicates, seed=args.seed)
    params = rate_params_for(cfg.dist(), 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = estimate_tail(cfg, rate=lambda lam: md_rate(params, lam))
    for prob, diag, rate in zip(report.select("tail_prob"), report.select("tail_decay"),
                                report.select("md_rate")):
        print(f"lambda={prob.m_or_lambda:<6} P={prob.estimate:.4f}+-{prob.stderr:.4f} "
              f"diag={diag.estimate:.4f}+-{diag.stderr:.4f} md_rate={rate.estimate:.4f} {prob.flag}")


if __name__ == "__main__":
    main()
