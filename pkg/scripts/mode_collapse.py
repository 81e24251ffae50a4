#!/usr/bin/env python3
"""Train each scheme on the n-fold symmetric scene and compare how many modes survive."""
from _common import dump, load_table, parser

from multipose import experiments

SCHEMES = ("rwta", "unimodal", "mdn", "wta", "ewta")


def main():
    p = parser(__doc__)
    p.add_argument("--symmetry", type=int, nargs="+", default=[4, 2])
    p.add_argument("--schemes", nargs="+", default=list(SCHEMES), choices=SCHEMES)
    args = p.parse_args()
    table = load_table(args.table)

    rows = []
    print(f"{'n':>2} {'scheme':<9} {'detection':>9} {'semd':>8} {'med deg':>8} {'med m':>7} {'secs':>6}")
    for n in args.symmetry:
        for scheme, fitted in experiments.mode_collapse(table, args.schemes, n, args.seed).items():
            r = fitted.report
            rows.append(dict(symmetry=n, scheme=scheme, mode_detection=r.mode_detection, mean_semd=r.mean_semd,
                             median_rot_deg=r.median_rot_deg, median_trans_m=r.median_trans_m,
                             seconds=fitted.seconds))
            print(f"{n:>2} {scheme:<9} {r.mode_detection:>9.3f} {r.mean_semd:>8.3f} {r.median_rot_deg:>8.2f} "
                  f"{r.median_trans_m:>7.3f} {fitted.seconds:>6.1f}")
    dump(args.out, rows)


if __name__ == "__main__":
    main()
