"""Cumulative regret of the learner against the uniform and known-model baselines.

    python scripts/regret_curves.py --episodes 5000 --bonus-scale 1e-3 --out results/curves
"""
import argparse
from pathlib import Path

import numpy as np

from opo_cmdp.cli import write_plot
from opo_cmdp.harness import (
    baseline_known_model,
    baseline_uniform,
    loglog_slope,
    pseudo_regret,
    regret_curve,
    run_experiment,
    standard_config,
)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=5000)
    ap.add_argument("--bonus-scale", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/curves")
    args = ap.parse_args(argv)

    cfg = standard_config(episodes=args.episodes, bonus_scale=args.bonus_scale, seed=args.seed)
    runs = {
        "OPO-CMDP": run_experiment(cfg),
        "uniform": baseline_uniform(cfg),
        "known model": baseline_known_model(cfg),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curves = {name: regret_curve(r) for name, r in runs.items()}
    np.savetxt(out / "curves.csv", np.column_stack(list(curves.values())), delimiter=",",
               header=",".join(curves), comments="", fmt="%.17g")
    write_plot(out / "regret.svg", {k: list(v) for k, v in curves.items()})
    for name, r in runs.items():
        print(f"{name:>12s}: regret {pseudo_regret(r):10.2f}  slope {loglog_slope(r):.3f}")


if __name__ == "__main__":
    main()
