"""Training with control dropout.

The linear toy model is trained in closed loop twice on the same corpus and
seed, once plainly and once with every agent handed back to log replay with
probability 0.1. Both are then evaluated on a fresh corpus.

The toy policy only sees observed states, and its agents draw independent
noise. It has no channel through which to assume it controls the ego, so
both variants should come out nearly insensitive. Compare this with
``positive_control.py``.

Run: python demos/control_dropout.py [--n 60] [--k 16] [--epochs 10]
"""

import argparse

from delta_sim import Domain, GeneratorConfig, domain_sweep, generate_corpus
from delta_sim.toy import LinearPolicyModel, TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=60)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=10)
    args = ap.parse_args()

    train_set = generate_corpus(GeneratorConfig(n=args.n), seed=21)
    eval_set = generate_corpus(GeneratorConfig(n=args.n), seed=22)
    for p_drop in (0.0, 0.1):
        result = train(train_set, TrainConfig(p_drop=p_drop, epochs=args.epochs))
        losses = ", ".join(f"{v:.3f}" for v in result.epoch_losses)
        res = domain_sweep(eval_set, LinearPolicyModel(result.params), k=args.k, seed=0, domains=(Domain.UNION,))
        d = res.domains[Domain.UNION]
        print(f"p_drop {p_drop:.1f}: losses [{losses}]")
        print(f"    M {d.M:.4f}  dM {d.aggregate.delta_abs:.4f}  C_s@.05 {d.confusion[0.05].C_s:.3f}")


if __name__ == "__main__":
    main()
