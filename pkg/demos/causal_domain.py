"""Scoring only the agents that matter to the ego.

The standard eval set samples agents without regard to the ego, so it often
misses the follower that actually interacts with it, and sometimes holds no
sim agent at all. Restricting the score to causal agents concentrates it on
the interactions that replaying the ego disturbs.

Run: python demos/causal_domain.py [--n 60] [--k 16]
"""

import argparse

from delta_sim import GeneratorConfig, domain_sweep, generate_corpus
from delta_sim.delta import ALL_DOMAINS
from delta_sim.models import AggressiveFollowerModel


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=60)
    ap.add_argument("--k", type=int, default=16)
    args = ap.parse_args()

    corpus = generate_corpus(GeneratorConfig(n=args.n), seed=11)
    res = domain_sweep(corpus, AggressiveFollowerModel(), k=args.k, seed=0, domains=ALL_DOMAINS)
    for dom, r in res.domains.items():
        print(f"{dom.value:7s} scored {len(r.scores):3d}  excluded {len(r.excluded):3d}  "
              f"dM_sim {r.aggregate.delta_sim_abs:.4f}  C_s@.05 {r.confusion[0.05].C_s:.3f}")


if __name__ == "__main__":
    main()
