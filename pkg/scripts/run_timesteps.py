"""Accuracy when inference uses fewer timesteps than training."""

from pathlib import Path

from _common import parser, seeds_from, setup_from
from cognisnn.experiments import mean_by, timestep_trend, write_rows


def main():
    args = parser(__doc__, timesteps=8).parse_args()
    steps = tuple(t for t in (1, 2, 4, 8, 16) if t <= args.timesteps)
    rows = timestep_trend(setup_from(args), seeds_from(args), steps, jobs=args.jobs)
    write_rows(Path(args.out) / "timesteps.csv", rows, ["method", "seed", "timesteps", "loss", "accuracy"])
    means = mean_by(rows, ("timesteps", "method"))
    for t in steps:
        print(f"T'={t}: dgl {means[(t, 'dgl')]:.3f} standard {means[(t, 'standard')]:.3f}")


if __name__ == "__main__":
    main()
