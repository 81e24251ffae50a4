#!/usr/bin/env python3
"""Predicted entropy of a single-head model as the observation noise grows."""
from _common import dump, load_table, parser

from multipose import experiments


def main():
    p = parser(__doc__)
    p.add_argument("--sigmas", type=float, nargs="+", default=[0.01, 0.05, 0.1, 0.2, 0.4])
    args = p.parse_args()
    table = load_table(args.table)

    fitted = experiments.entropy_model(table, seed=args.seed)
    sweep = experiments.noise_entropy_sweep(fitted, table, sigmas=args.sigmas)
    for sigma, h in sweep:
        print(f"sigma {sigma:<6g} mean entropy {h:9.4f} nats")
    dump(args.out, [dict(sigma=s, entropy=h) for s, h in sweep])


if __name__ == "__main__":
    main()
