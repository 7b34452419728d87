"""Wall-clock cost of word-level candidate generation at several batch sizes.

    python scripts/timing.py --seed 0 --n 64 --batch-sizes 1 8 32
"""

import argparse

import torch

from agnostic_attack import experiments as ex
from agnostic_attack.config import AttackParams
from agnostic_attack.eval_harness import measure_attack_time
from agnostic_attack.word_attack import generate_all


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, default=64, help="number of test sentences to attack")
    ap.add_argument("--batch-sizes", type=int, nargs="+", default=[1, 8, 32])
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    torch.set_num_threads(1)
    world = ex.build_toy_world(args.seed)
    params = AttackParams(seed=args.seed)
    inputs = world.test[:args.n]

    def attack(batch):
        return generate_all(batch, world.model, world.space, params)

    for bs in args.batch_sizes:
        t = measure_attack_time(attack, inputs, bs, args.repeats)
        print(f"batch {bs:>3}: {t.seconds:.2f} s for {t.n_inputs} sentences "
              f"({1000 * t.seconds / max(t.n_inputs, 1):.1f} ms each)")


if __name__ == "__main__":
    main()
