"""Free-flyer closed loop among random obstacles; reports reach distance and obstacle violations."""
import argparse

from gbdmpc.config import RunConfig
from gbdmpc.experiments import run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=9, dest="N", choices=(9, 12, 15))
    ap.add_argument("--episodes", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mode", default="gbd-warm", choices=("gbd-warm", "gbd-cold"))
    ap.add_argument("--out", default="runs/freeflyer")
    a = ap.parse_args()
    cfg = RunConfig(experiment="freeflyer", N=a.N, episodes=a.episodes, seed=a.seed, mode=a.mode, out=a.out)
    summary, _ = run(cfg)
    print(f"fraction_1iter {summary['fraction_1iter']:.3f}, median iters {summary['median_iters']}")
    for ep in summary["episodes"]:
        print(f"seed {ep['seed']}: {ep['status']} after {ep['steps']} steps, final distance "
              f"{ep['final_distance']:.3f} m, {ep['violations']} obstacle violations")


if __name__ == "__main__":
    main()
