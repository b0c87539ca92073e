"""Regret, concentration slack and Azuma gap across seeds on the standard instance.

    python scripts/seed_sweep.py --seeds 20 --episodes 1000
"""
import argparse

import numpy as np

from opo_cmdp.harness import (
    azuma_gap_check,
    baseline_uniform,
    concentration_check,
    pseudo_regret,
    regret_bound,
    run_experiment,
    standard_config,
)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--episodes", type=int, default=1000)
    ap.add_argument("--bonus-scale", type=float, default=1e-3)
    args = ap.parse_args(argv)

    rows = []
    print("seed  regret   uniform  sq_slack  hel_slack  azuma")
    for seed in range(args.seeds):
        cfg = standard_config(episodes=args.episodes, bonus_scale=args.bonus_scale, seed=seed)
        res = run_experiment(cfg)
        conc = concentration_check(res)
        row = (pseudo_regret(res), pseudo_regret(baseline_uniform(cfg)),
               conc["squared_error"].worst_slack, conc["hellinger"].worst_slack)
        azuma = azuma_gap_check(res, cfg.delta, cfg.horizon).passed
        rows.append(row)
        print(f"{seed:4d} {row[0]:8.1f} {row[1]:8.1f} {row[2]:9.1f} {row[3]:10.2f}  {'PASS' if azuma else 'FAIL'}")
    rows = np.array(rows)
    print(f"mean regret {rows[:, 0].mean():.1f} (uniform {rows[:, 1].mean():.1f}); "
          f"theoretical bound {regret_bound(standard_config(episodes=args.episodes)):.4g}")


if __name__ == "__main__":
    main()
