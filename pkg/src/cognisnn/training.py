"""Optimiser, LR schedules, BPTT training, dynamic growth and KP-LwF."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .data import EventTensorDataset, PerturbationSpec
from .errors import ConfigError, EmptySelection, HeadMismatch, ShapeMismatch
from .graph import KeyPathwaySelection, NodeActivityMask, PathwayRanking, build_growth_schedule
from .network import CogniSNNModel
from .tensor import Tape, Tensor, add_n, backward, no_grad, scale


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 8
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0
    schedule: str = "cosine"
    t_max: int = 64
    step_every: int = 64
    step_factor: float = 0.1
    seed: int = 0
    eval_batch_size: int = 64

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.lr < 0:
            raise ConfigError("epochs and batch size must be positive, lr non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.schedule not in ("cosine", "step", "constant"):
            raise ConfigError(f"unknown lr schedule {self.schedule!r}")


@dataclass(frozen=True)
class ContinualConfig:
    lam: float = 1.0
    temperature: float = 2.0
    reg_coeff: float = 1e-4
    scenario: str = "similar"
    k: int = 1
    new_weight: float = 1.0
    max_old_drop: float | None = None  # early stop once old-task accuracy falls this much
    # "frozen": trainable BN layers normalise with the old task's running
    # statistics (affine terms still learn); "batch": batch statistics as in
    # ordinary fine-tuning, which also overwrites the shared running averages
    bn_stats: str = "frozen"

    def validate(self) -> None:
        if self.lam < 0 or self.temperature <= 0 or self.reg_coeff < 0 or self.new_weight < 0:
            raise ConfigError("need lambda >= 0, temperature > 0, reg >= 0, new_weight >= 0")
        if self.bn_stats not in ("frozen", "batch"):
            raise ConfigError(f"bn_stats must be 'frozen' or 'batch', got {self.bn_stats!r}")


def sgd_momentum_step(params: dict[str, Tensor], state: dict[str, np.ndarray], lr: float,
                      momentum: float = 0.9, weight_decay: float = 0.0,
                      frozen: frozenset[str] = frozenset()) -> None:
    """``v <- momentum*v + g (+ wd*p)``; ``p <- p - lr*v``. Frozen names are skipped."""
    for name, p in params.items():
        if name in frozen or p.grad is None:
            continue
        if p.grad.shape != p.shape:
            raise ShapeMismatch(f"gradient of {name} has shape {p.grad.shape}, parameter {p.shape}")
        g = p.grad + weight_decay * p.data if weight_decay else p.grad
        v = state.get(name)
        v = g.copy() if v is None else momentum * v + g
        state[name] = v
        p.data = p.data - lr * v


class SGD:
    def __init__(self, params: dict[str, Tensor], momentum=0.9, weight_decay=0.0, frozen=frozenset()):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.frozen = frozenset(frozen)
        self.state: dict[str, np.ndarray] = {}

    def step(self, lr: float) -> None:
        sgd_momentum_step(self.params, self.state, lr, self.momentum, self.weight_decay, self.frozen)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for 0-based ``epoch``."""
    if cfg.schedule == "cosine":
        return cfg.lr * (1.0 + math.cos(math.pi * epoch / cfg.t_max)) / 2.0
    if cfg.schedule == "step":
        return cfg.lr * cfg.step_factor ** (epoch // cfg.step_every)
    return cfg.lr


@dataclass(frozen=True)
class FreezeMask:
    trainable: dict[str, bool]

    @property
    def frozen(self) -> frozenset[str]:
        return frozenset(n for n, ok in self.trainable.items() if not ok)

    @classmethod
    def from_selection(cls, model: CogniSNNModel, selection: KeyPathwaySelection,
                       heads=("head_new",)) -> "FreezeMask":
        node_prefixes = tuple(f"node{v}." for v in sorted(selection.trainable_nodes))
        edge_names = {f"edge{u}_{v}.weight" for u, v in selection.trainable_edges}
        head_prefixes = tuple(f"{h}." for h in heads)
        flags = {}
        for name in model.named_parameters():
            flags[name] = name.startswith(node_prefixes) or name in edge_names or name.startswith(head_prefixes)
        return cls(flags)


@dataclass
class MetricsLog:
    rows: list[dict] = field(default_factory=list)

    def add(self, epoch: int, split: str, task: str, loss: float, accuracy: float) -> None:
        self.rows.append(dict(epoch=epoch, split=split, task=task, loss=float(loss), accuracy=float(accuracy)))

    def last(self, split: str, task: str) -> dict:
        return [r for r in self.rows if r["split"] == split and r["task"] == task][-1]

    def to_csv(self) -> str:
        lines = ["epoch,split,task,loss,accuracy"]
        for r in self.rows:
            lines.append(f"{r['epoch']},{r['split']},{r['task']},{r['loss']:.8f},{r['accuracy']:.6f}")
        return "\n".join(lines) + "\n"


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def evaluate(model: CogniSNNModel, dataset: EventTensorDataset, timesteps: int | None = None,
             perturbation: PerturbationSpec | None = None, head: str = "head",
             batch_size: int = 64) -> tuple[float, float]:
    """Eval-mode loss and accuracy on the full graph.

    ``timesteps`` truncates each sequence to its first T' frames. The
    perturbation, if any, is applied to the whole split with its own seed.
    """
    dataset.require_nonempty()
    x = dataset.x
    if perturbation is not None:
        x = perturbation.apply(x)
    if timesteps is not None:
        if not 1 <= timesteps <= x.shape[1]:
            raise ConfigError(f"inference timesteps {timesteps} outside [1, {x.shape[1]}]")
        x = x[:, :timesteps]
    was_training = model.training
    model.eval()
    total_loss, correct = 0.0, 0
    try:
        with no_grad():
            for idx in _batches(len(dataset), batch_size, np.arange(len(dataset))):
                logits = model.forward_sequence(x[idx], head=head)
                yb = dataset.y[idx]
                total_loss += F.softmax_cross_entropy(logits, yb).item() * len(idx)
                correct += int((logits.data.argmax(axis=1) == yb).sum())
    finally:
        model.train(was_training)
        model.reset_state()
    return total_loss / len(dataset), correct / len(dataset)


def recalibrate_bn(model: CogniSNNModel, dataset: EventTensorDataset, batch_size: int = 64) -> None:
    """Replace BN running statistics by the plain average of full-graph batch statistics.

    Parameters are untouched. Used after growth training, where the running
    averages were collected on masked subgraphs that inference never runs.
    """
    trips = [t for _, t in model.triplets()]
    saved = [t.momentum for t in trips]
    for t in trips:
        t.running_mean[...] = 0.0
        t.running_var[...] = 1.0
    was_training = model.training
    model.train()
    calls = 0
    x = dataset.x.astype(np.float64)
    try:
        with no_grad():
            for idx in _batches(len(dataset), batch_size, np.arange(len(dataset))):
                model.reset_state()
                for step in range(x.shape[1]):
                    calls += 1
                    for t in trips:
                        t.momentum = 1.0 / calls
                    model.features_timestep(x[idx, step])
    finally:
        for t, m in zip(trips, saved):
            t.momentum = m
        model.train(was_training)
        model.reset_state()


def train_standard(model: CogniSNNModel, dataset: EventTensorDataset, cfg: TrainConfig,
                   test: EventTensorDataset | None = None, schedule=None,
                   log: MetricsLog | None = None, task: str = "single",
                   recalibrate: bool = False) -> MetricsLog:
    """BPTT training on mean-over-time logits; ``schedule`` masks each timestep.

    With ``recalibrate`` the BN running statistics are recomputed on the
    full graph after every epoch (see :func:`recalibrate_bn`).
    """
    cfg.validate()
    dataset.require_nonempty()
    log = MetricsLog() if log is None else log
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(model.named_parameters(), cfg.momentum, cfg.weight_decay)
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        model.train()
        total_loss, correct = 0.0, 0
        for idx in _batches(len(dataset), cfg.batch_size, rng.permutation(len(dataset))):
            xb, yb = dataset.x[idx], dataset.y[idx]
            model.zero_grad()
            with Tape() as tape:
                logits = model.forward_sequence(xb, schedule)
                loss = F.softmax_cross_entropy(logits, yb)
            backward(loss, tape)
            opt.step(lr)
            total_loss += loss.item() * len(idx)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
        model.reset_state()
        if recalibrate:
            recalibrate_bn(model, dataset, cfg.eval_batch_size)
        log.add(epoch + 1, "train", task, total_loss / len(dataset), correct / len(dataset))
        if test is not None and len(test):
            log.add(epoch + 1, "test", task, *evaluate(model, test, batch_size=cfg.eval_batch_size))
    return log


def train_dgl(model: CogniSNNModel, dataset: EventTensorDataset, cfg: TrainConfig, ranking: PathwayRanking,
              test: EventTensorDataset | None = None, log: MetricsLog | None = None) -> MetricsLog:
    """Dynamic growth: timestep t trains only the top-q(t) pathways.

    Inference (``evaluate``) always runs the full graph, so once any step
    was masked the BN statistics are recalibrated on the full graph each
    epoch. A schedule of full masks is plain training, bit for bit.
    """
    schedule = build_growth_schedule(ranking, dataset.timesteps)
    full = NodeActivityMask.full(model.dag)
    grows = any(m != full for m in schedule.masks)
    return train_standard(model, dataset, cfg, test, schedule=schedule, log=log, recalibrate=grows)


def _set_trainable_bn(model: CogniSNNModel, selection: KeyPathwaySelection, batch_stats: bool = True) -> None:
    # frozen layers keep their running statistics untouched
    model.eval()
    if not batch_stats:
        return
    for v in selection.trainable_nodes:
        model.nodes[v].triplet1.training = True
        model.nodes[v].triplet2.training = True


def kp_lwf(old_model: CogniSNNModel, new_data: EventTensorDataset, ccfg: ContinualConfig,
           selection: KeyPathwaySelection, cfg: TrainConfig,
           new_test: EventTensorDataset | None = None, old_test: EventTensorDataset | None = None,
           log: MetricsLog | None = None) -> tuple[CogniSNNModel, MetricsLog]:
    """Fine-tune the key pathways and a new head with distillation on the old head."""
    ccfg.validate()
    cfg.validate()
    new_data.require_nonempty()
    if not selection.selected:
        raise EmptySelection("no key pathway selected")
    if "head" not in old_model.heads:
        raise HeadMismatch("old model has no task head to distil from")
    unknown = selection.trainable_nodes - set(old_model.dag.nodes)
    if unknown:
        raise HeadMismatch(f"selection references nodes {sorted(unknown)} outside the model graph")
    log = MetricsLog() if log is None else log

    old_model.eval()
    model = old_model.clone()
    model.add_head("head_new", new_data.class_count, seed=cfg.seed + 104729)
    params = model.named_parameters()
    mask = FreezeMask.from_selection(model, selection)
    trainable = {n: p for n, p in params.items() if mask.trainable[n]}
    anchors = {n: p.data.copy() for n, p in trainable.items()}
    opt = SGD(params, cfg.momentum, cfg.weight_decay, frozen=mask.frozen)
    rng = np.random.default_rng(cfg.seed)

    base_old_acc = None
    if old_test is not None and len(old_test):
        base_old_acc = evaluate(old_model, old_test, batch_size=cfg.eval_batch_size)[1]

    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        total_loss, correct = 0.0, 0
        for idx in _batches(len(new_data), cfg.batch_size, rng.permutation(len(new_data))):
            xb, yb = new_data.x[idx], new_data.y[idx]
            with no_grad():
                target = old_model.forward_sequence(xb).data
            _set_trainable_bn(model, selection, ccfg.bn_stats == "batch")
            model.zero_grad()
            with Tape() as tape:
                model.reset_state()
                feats = model.run_features(xb)
                y_old = model.readout(feats, "head")
                y_new = model.readout(feats, "head_new")
                terms = [scale(F.softmax_cross_entropy(y_new, yb), ccfg.new_weight)]
                if ccfg.lam:
                    terms.insert(0, scale(F.soft_cross_entropy(y_old, target, ccfg.temperature), ccfg.lam))
                if ccfg.reg_coeff:
                    reg = add_n([F.squared_distance(p, anchors[n]) for n, p in trainable.items()])
                    terms.append(scale(reg, ccfg.reg_coeff))
                loss = add_n(terms)
            backward(loss, tape)
            opt.step(lr)
            total_loss += loss.item() * len(idx)
            correct += int((y_new.data.argmax(axis=1) == yb).sum())
        model.reset_state()
        log.add(epoch + 1, "train", "new", total_loss / len(new_data), correct / len(new_data))
        if new_test is not None and len(new_test):
            log.add(epoch + 1, "test", "new", *evaluate(model, new_test, head="head_new", batch_size=cfg.eval_batch_size))
        if old_test is not None and len(old_test):
            old_loss, old_acc = evaluate(model, old_test, head="head", batch_size=cfg.eval_batch_size)
            log.add(epoch + 1, "test", "old", old_loss, old_acc)
            if ccfg.max_old_drop is not None and base_old_acc - old_acc >= ccfg.max_old_drop:
                break
    model.eval()
    return model, log
