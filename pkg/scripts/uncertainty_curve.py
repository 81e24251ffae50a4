#!/usr/bin/env python3
"""Error after discarding the most uncertain predictions, on a scene with mixed noise levels."""
from _common import dump, load_table, parser

from multipose import experiments


def main():
    p = parser(__doc__)
    p.add_argument("--symmetry", type=int, default=4)
    p.add_argument("--scheme", default="rwta")
    p.add_argument("--factor", type=float, default=3.0, help="noise multiplier on every other test sample")
    args = p.parse_args()
    table = load_table(args.table)

    fitted = experiments.mode_collapse(table, (args.scheme,), args.symmetry, args.seed)[args.scheme]
    curve = experiments.uncertainty_filtering(fitted, table, factor=args.factor)
    print(f"{'dropped':>7} {'rot deg':>8} {'trans m':>8}")
    for frac, eq, et in curve:
        print(f"{frac:>7.2f} {eq:>8.3f} {et:>8.4f}")
    dump(args.out, [dict(fraction=f, rot_deg=q, trans_m=t) for f, q, t in curve])


if __name__ == "__main__":
    main()
