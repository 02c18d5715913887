"""Standard vs growth training under test-time noise and frame loss."""

from pathlib import Path

from _common import parser, seeds_from, setup_from
from cognisnn.experiments import mean_by, robustness_trend, write_rows


def main():
    p = parser(__doc__)
    p.add_argument("--kinds", default="salt_pepper,poisson,frame_loss")
    p.add_argument("--rhos", default="0,2,4,6,8")
    args = p.parse_args()
    kinds = tuple(k for k in args.kinds.split(",") if k)
    rhos = tuple(int(r) for r in args.rhos.split(",") if r)
    rows = robustness_trend(setup_from(args), seeds_from(args), kinds, rhos, jobs=args.jobs)
    write_rows(Path(args.out) / "robustness.csv", rows, ["method", "seed", "kind", "rho", "loss", "accuracy"])
    means = mean_by(rows, ("kind", "rho", "method"))
    for kind in kinds:
        for rho in rhos:
            print(f"{kind:12s} rho {rho}: dgl {means[(kind, rho, 'dgl')]:.3f} "
                  f"standard {means[(kind, rho, 'standard')]:.3f}")


if __name__ == "__main__":
    main()
