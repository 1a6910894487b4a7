"""One phantom, three agents: random vs look-ahead oracle from the same start state.

    python demos/episode.py [--seed 3] [--out episode.png]
"""
import argparse

import numpy as np

from planeloc.env import PlaneEnv, greedy_oracle_policy, random_policy, rollout
from planeloc.phantom import align_case, generate_phantom
from planeloc.benchmark import PROFILE


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--out", default=None, help="optional png with SAD per step")
    args = p.parse_args()

    case = align_case(generate_phantom(args.seed))
    env = PlaneEnv(case, size=32, step_sizes=PROFILE["step_sizes"], horizon=30)
    start = env.reset((20.0, 4.0), np.random.default_rng(args.seed))
    runs = {
        "random": rollout(random_policy(np.random.default_rng(0)), env, state=start),
        "oracle": rollout(greedy_oracle_policy(env), env, state=start),
    }
    for name, tr in runs.items():
        print(f"{name:7s} SAD per agent {np.round(tr.sad[0], 2)} -> {np.round(tr.sad[-1], 2)}  "
              f"reward {tr.accumulated_reward:+.0f}")
    if args.out:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(5, 3))
        for name, tr in runs.items():
            ax.plot(tr.sad.mean(axis=1), label=name)
        ax.set_xlabel("step")
        ax.set_ylabel("mean SAD")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.out, dpi=120)


if __name__ == "__main__":
    main()
