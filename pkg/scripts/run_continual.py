"""Key-pathway continual learning with high- and low-centrality selections."""

from dataclasses import replace
from pathlib import Path

from _common import parser, seeds_from, setup_from
from cognisnn.experiments import ContinualSetup, continual_trend, write_rows


def main():
    p = parser(__doc__)
    p.add_argument("--new-family", default=ContinualSetup.new_family)
    p.add_argument("--new-lr", type=float, default=ContinualSetup.new_lr)
    p.add_argument("--k", type=int, default=ContinualSetup.k)
    p.add_argument("--lam", type=float, default=ContinualSetup.lam)
    args = p.parse_args()
    desk = setup_from(args)
    cs = replace(ContinualSetup(desk=desk), old_epochs=desk.epochs, new_epochs=desk.epochs,
                 new_family=args.new_family, new_lr=args.new_lr, k=args.k, lam=args.lam)
    rows = continual_trend(cs, seeds=seeds_from(args), jobs=args.jobs)
    write_rows(Path(args.out) / "continual.csv", rows,
               ["scenario", "seed", "k", "pathway", "trainable_params", "frozen_identical",
                "old_before", "old_after", "new_accuracy"])
    for r in rows:
        print(f"{r['scenario']:10s} seed {r['seed']} {r['pathway']}: new {r['new_accuracy']:.3f} "
              f"old {r['old_before']:.3f} -> {r['old_after']:.3f}")


if __name__ == "__main__":
    main()
