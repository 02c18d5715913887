"""Argument plumbing shared by the experiment scripts."""

import argparse
from dataclasses import replace

from cognisnn.experiments import DeskSetup


def parser(description: str, timesteps: int = 4) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--out", default="results", help="directory for the CSV output")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds")
    p.add_argument("--epochs", type=int, default=DeskSetup.epochs)
    p.add_argument("--timesteps", type=int, default=timesteps)
    p.add_argument("--nodes", type=int, default=DeskSetup.nodes)
    p.add_argument("--gen", default=DeskSetup.generator, choices=["er", "ws"])
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return p


def setup_from(args) -> DeskSetup:
    return replace(DeskSetup(), epochs=args.epochs, timesteps=args.timesteps, nodes=args.nodes, generator=args.gen)


def seeds_from(args) -> tuple[int, ...]:
    return tuple(int(s) for s in args.seeds.split(",") if s.strip())
