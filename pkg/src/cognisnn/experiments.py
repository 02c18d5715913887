"""Desk-scale experiment drivers shared by the acceptance suite and ``scripts/``.

Each driver trains small models on synthetic event data and returns plain
row dictionaries; ``write_rows`` turns them into CSV. Seeds are explicit
everywhere, and parallel runs are merged in submission order, so results
do not depend on worker scheduling.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import PerturbationSpec, SyntheticTaskSpec, generate_synthetic
from .graph import RandomGraphSpec, generate_graph, rank_pathways, select_key_pathways
from .network import ModelConfig, build_model
from .training import (
    ContinualConfig,
    FreezeMask,
    TrainConfig,
    evaluate,
    kp_lwf,
    train_dgl,
    train_standard,
)


@dataclass(frozen=True)
class DeskSetup:
    generator: str = "er"
    nodes: int = 7
    graph_seed: int = 0
    family: str = "bar"
    classes: int = 4
    timesteps: int = 4
    size: int = 16
    samples_per_class: int = 100
    data_seed: int = 0
    channels: int = 8
    epochs: int = 20
    lr: float = 0.05
    batch_size: int = 8
    momentum: float = 0.9

    def graph(self):
        return generate_graph(RandomGraphSpec(self.generator, self.nodes, seed=self.graph_seed))

    def task(self, family: str | None = None, classes: int | None = None, seed: int | None = None):
        spec = SyntheticTaskSpec(
            class_count=classes or self.classes, timesteps=self.timesteps,
            height=self.size, width=self.size, family=family or self.family,
            samples_per_class=self.samples_per_class,
            seed=self.data_seed if seed is None else seed,
        )
        return generate_synthetic(spec)

    def model(self, dag, seed: int, num_classes: int | None = None):
        cfg = ModelConfig(in_channels=2, input_size=self.size, channels=self.channels,
                          num_classes=num_classes or self.classes, seed=seed)
        return build_model(dag, cfg)

    def train_config(self, seed: int, epochs: int | None = None) -> TrainConfig:
        epochs = epochs or self.epochs
        return TrainConfig(epochs=epochs, batch_size=self.batch_size, lr=self.lr,
                           momentum=self.momentum, t_max=epochs, seed=seed)


def parallel_map(fn, items, jobs: int = 1) -> list:
    items = list(items)
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


@lru_cache(maxsize=16)
def train_model(setup: DeskSetup, method: str, seed: int):
    """Train one model with ``method`` in {"standard", "dgl"}; returns (model, log, train, test).

    Results are cached per process so drivers sharing a setup train once.
    Callers must treat the returned model as read-only.
    """
    dag = setup.graph()
    train, test = setup.task()
    model = setup.model(dag, seed)
    cfg = setup.train_config(seed)
    if method == "dgl":
        log = train_dgl(model, train, cfg, rank_pathways(dag), test)
    elif method == "standard":
        log = train_standard(model, train, cfg, test)
    else:
        raise ValueError(f"unknown method {method!r}")
    return model, log, train, test


# single-task learning ---------------------------------------------------------


def learning_run(setup: DeskSetup = DeskSetup(), seed: int = 0) -> dict:
    model, log, train, test = train_model(setup, "standard", seed)
    return {
        "seed": seed,
        "epochs": setup.epochs,
        "train_accuracy": evaluate(model, train)[1],
        "test_accuracy": evaluate(model, test)[1],
        "metrics_csv": log.to_csv(),
    }


# robustness ----------------------------------------------------------------


def _robustness_job(job) -> list[dict]:
    setup, method, seed, kinds, rhos, perturb_seed = job
    model, _, _, test = train_model(setup, method, seed)
    rows = []
    for kind in kinds:
        for rho in rhos:
            pert = PerturbationSpec(kind, rho, perturb_seed)
            loss, acc = evaluate(model, test, perturbation=pert)
            rows.append(dict(method=method, seed=seed, kind=kind, rho=rho, loss=loss, accuracy=acc))
    return rows


def robustness_trend(setup: DeskSetup = DeskSetup(), seeds=(0, 1, 2), kinds=("salt_pepper", "frame_loss"),
                     rhos=(0, 6, 8), perturb_seed: int = 0, jobs: int = 1) -> list[dict]:
    """Accuracy of standard and growth-trained models under test-time perturbations."""
    jobs_ = [(setup, m, s, tuple(kinds), tuple(rhos), perturb_seed) for m in ("standard", "dgl") for s in seeds]
    return [row for rows in parallel_map(_robustness_job, jobs_, jobs) for row in rows]


# timestep flexibility ----------------------------------------------------------


def _timestep_job(job) -> list[dict]:
    setup, method, seed, steps = job
    model, _, _, test = train_model(setup, method, seed)
    rows = []
    for t in steps:
        loss, acc = evaluate(model, test, timesteps=t)
        rows.append(dict(method=method, seed=seed, timesteps=t, loss=loss, accuracy=acc))
    return rows


def timestep_trend(setup: DeskSetup = DeskSetup(timesteps=8), seeds=(0, 1, 2), steps=(1, 2, 4, 8),
                   jobs: int = 1) -> list[dict]:
    """Accuracy when inference runs fewer timesteps than training."""
    jobs_ = [(setup, m, s, tuple(steps)) for m in ("standard", "dgl") for s in seeds]
    return [row for rows in parallel_map(_timestep_job, jobs_, jobs) for row in rows]


# continual learning ----------------------------------------------------------


@dataclass(frozen=True)
class ContinualSetup:
    desk: DeskSetup = DeskSetup()
    new_family: str = "checker"
    new_data_seed: int = 1
    old_epochs: int = 20
    new_epochs: int = 20
    new_lr: float = 0.005  # a tenth of the training rate, as usual for fine-tuning
    k: int = 1
    lam: float = 1.0
    temperature: float = 2.0
    reg_coeff: float = 1e-4


def _continual_job(job) -> dict:
    cs, scenario, seed = job
    desk = cs.desk
    dag = desk.graph()
    old, _, _, old_test = train_model(replace(desk, epochs=cs.old_epochs), "standard", seed)
    new_train, new_test = desk.task(family=cs.new_family, seed=cs.new_data_seed)
    old_before = evaluate(old, old_test)[1]

    sel = select_key_pathways(rank_pathways(dag), cs.k, scenario)
    ccfg = ContinualConfig(lam=cs.lam, temperature=cs.temperature, reg_coeff=cs.reg_coeff,
                           scenario=scenario, k=cs.k)
    cfg = replace(desk.train_config(seed, cs.new_epochs), lr=cs.new_lr)
    new, log = kp_lwf(old, new_train, ccfg, sel, cfg, new_test, old_test)

    mask = FreezeMask.from_selection(new, sel)
    before, after = old.state_dict(), new.state_dict()
    frozen_same = all(before[n].tobytes() == after[n].tobytes() for n, ok in mask.trainable.items() if not ok)
    return dict(
        scenario=scenario, seed=seed, k=cs.k,
        pathway=str(sel.selected[0]),
        trainable_params=sum(new.named_parameters()[n].size for n, ok in mask.trainable.items() if ok),
        frozen_identical=frozen_same,
        old_before=old_before,
        old_after=evaluate(new, old_test, head="head")[1],
        new_accuracy=evaluate(new, new_test, head="head_new")[1],
        chance=1.0 / new_train.class_count,
        metrics_csv=log.to_csv(),
    )


def continual_trend(cs: ContinualSetup = ContinualSetup(), scenarios=("similar", "dissimilar"),
                    seeds=(0,), jobs: int = 1) -> list[dict]:
    """Train an old task, then KP-LwF onto a new one for each scenario."""
    jobs_ = [(cs, sc, s) for sc in scenarios for s in seeds]
    return parallel_map(_continual_job, jobs_, jobs)


# reporting -------------------------------------------------------------------


def mean_by(rows: list[dict], keys: tuple[str, ...], value: str = "accuracy") -> dict[tuple, float]:
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r[value])
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


def write_rows(path, rows: list[dict], columns: list[str]) -> None:
    def fmt(v):
        return f"{v:.6f}" if isinstance(v, float) else str(v)

    lines = [",".join(columns)] + [",".join(fmt(r[c]) for c in columns) for r in rows]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")
