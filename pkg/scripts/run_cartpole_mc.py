"""Seeded cart-pole Monte Carlo: iteration statistics over contact-phase solves."""
import argparse
import json

from gbdmpc.config import RunConfig
from gbdmpc.experiments import run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=10, dest="N")
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mode", default="gbd-warm", choices=("gbd-warm", "gbd-cold"))
    ap.add_argument("--out", default="runs/cartpole_mc")
    a = ap.parse_args()
    cfg = RunConfig(experiment="cartpole", N=a.N, episodes=a.episodes, seed=a.seed, mode=a.mode, out=a.out)
    summary, _ = run(cfg)
    keys = ("fraction_1iter", "fraction_le5iter", "median_iters", "n_counted", "histogram")
    print(json.dumps({k: summary[k] for k in keys}, indent=2))
    for ep in summary["episodes"]:
        print(f"seed {ep['seed']}: {ep['status']} after {ep['steps']} steps, peak feasibility cuts "
              f"{ep['max_feas_cuts']}")


if __name__ == "__main__":
    main()
