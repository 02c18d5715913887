"""Train the desk-scale model once per seed and report train/test accuracy."""

from pathlib import Path

from _common import parser, seeds_from, setup_from
from cognisnn.experiments import learning_run, write_rows


def main():
    args = parser(__doc__).parse_args()
    setup = setup_from(args)
    rows = []
    for seed in seeds_from(args):
        run = learning_run(setup, seed)
        out = Path(args.out) / f"learning_seed{seed}_metrics.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(run["metrics_csv"])
        rows.append(run)
        print(f"seed {seed}: train {run['train_accuracy']:.3f} test {run['test_accuracy']:.3f}")
    write_rows(Path(args.out) / "learning.csv", rows, ["seed", "epochs", "train_accuracy", "test_accuracy"])


if __name__ == "__main__":
    main()
