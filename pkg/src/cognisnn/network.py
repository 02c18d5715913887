"""Full CogniSNN model: stem, random-graph backbone of ResNodes, classifier.

The backbone is executed one timestep at a time in topological order. Each
node's input current is the sigmoid-gated sum of its (pooled) predecessor
spikes; input nodes receive the stem spikes directly.
"""

from __future__ import annotations

import copy
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .errors import ConfigError, NoActiveInput
from .functional import SurrogateConfig
from .graph import DirectedAcyclicGraph, GrowthSchedule, NodeActivityMask
from .spiking import (
    ConvBNSNTriplet,
    LIFParams,
    PoolingPolicy,
    ResNode,
    adaptive_pool,
    standard_pool,
)
from .tensor import Tensor, add_n, mul, no_grad, scale


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 2
    input_size: int = 16
    channels: int = 8
    num_classes: int = 4
    stem_pools: int = 1
    pool_depths: tuple[int, ...] = (1,)
    tau: float = 0.5
    u_th: float = 1.0
    alpha: float = 4.0
    eta: int = 1
    kappa: int = 2
    gate: str = "or"
    relaxed_forward: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.channels < 1 or self.in_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.input_size < 1 or self.stem_pools < 0:
            raise ConfigError("bad input size or stem pool count")
        if self.gate not in ("or", "add"):
            raise ConfigError(f"unknown residual gate {self.gate!r}")
        if not 0.0 < self.tau <= 1.0 or self.u_th <= 0.0 or self.alpha <= 0.0:
            raise ConfigError("LIF constants out of range")

    @property
    def lif(self) -> LIFParams:
        return LIFParams(self.tau, self.u_th, SurrogateConfig(self.alpha, self.relaxed_forward))

    @property
    def pooling(self) -> PoolingPolicy:
        return PoolingPolicy(self.eta, self.kappa)


class LinearHead:
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(out_features, in_features)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class OpProfiler:
    """Collects operation counts during a profiling forward pass."""

    def __init__(self):
        self.counts: dict[tuple[str, str], int] = defaultdict(int)

    def add(self, node: str, op_type: str, count: int) -> None:
        self.counts[(node, op_type)] += int(count)

    def total(self, op_type: str) -> int:
        return sum(c for (_, op), c in self.counts.items() if op == op_type)

    def rows(self) -> list[tuple[str, str, int]]:
        return [(n, op, c) for (n, op), c in sorted(self.counts.items())]


def is_binary(a: np.ndarray) -> bool:
    return bool(np.all((a == 0.0) | (a == 1.0)))


def accumulate_count(a: np.ndarray) -> int:
    """ACs to sum ``a``: one per spike if binary, one per element otherwise."""
    return int(a.sum()) if is_binary(a) else int(a.size)


def count_conv_ops(x: np.ndarray, out_channels: int, kernel: int, stride: int = 1, padding: int = 0,
                   dense: bool = False) -> tuple[int, int]:
    """(MAC, AC) count of a convolution over ``x``.

    Binary inputs are event driven: each active input inside a window costs
    one accumulation per output channel. Real inputs cost one MAC per
    nonzero input inside a window, or every window entry when ``dense``.
    """
    n, c, h, w = x.shape
    if dense:
        ho = F.conv_output_size(h, kernel, stride, padding)
        wo = F.conv_output_size(w, kernel, stride, padding)
        return n * out_channels * ho * wo * c * kernel * kernel, 0
    active = int(round(F.conv_windows((x != 0).astype(np.float64), kernel, stride, padding).sum()))
    if is_binary(x):
        return 0, active * out_channels
    return active * out_channels, 0


class CogniSNNModel:
    def __init__(self, dag: DirectedAcyclicGraph, config: ModelConfig = ModelConfig()):
        config.validate()
        self.dag = dag
        self.config = config
        rng = np.random.default_rng(config.seed)
        lif = config.lif
        c = config.channels
        self.stem = ConvBNSNTriplet(config.in_channels, c, rng, lif)
        self.nodes = [ResNode(c, c, rng, lif, config.gate) for _ in dag.nodes]
        self.edge_weights = {e: Tensor(np.zeros(()), requires_grad=True) for e in dag.edges}
        self.heads: dict[str, LinearHead] = {"head": LinearHead(c, config.num_classes, rng)}
        self.depths = dag.depths()
        self.pool_depths = frozenset(config.pool_depths)
        self.last_order: list[int] = []
        self.last_outputs: dict[int, Tensor] = {}
        self.last_currents: dict[int, Tensor] = {}

    # registry ----------------------------------------------------------

    def triplets(self):
        """(prefix, triplet) pairs for the stem and every node."""
        return list(self._triplets())

    def _triplets(self):
        yield "stem", self.stem
        for v, node in enumerate(self.nodes):
            for tag, trip in node.triplets():
                yield f"node{v}.{tag}", trip

    def named_parameters(self) -> dict[str, Tensor]:
        params = {}
        for prefix, trip in self._triplets():
            for name, t in trip.parameters().items():
                params[f"{prefix}.{name}"] = t
        for (u, v), w in self.edge_weights.items():
            params[f"edge{u}_{v}.weight"] = w
        for hname, head in self.heads.items():
            for name, t in head.parameters().items():
                params[f"{hname}.{name}"] = t
        return params

    def named_buffers(self) -> dict[str, np.ndarray]:
        bufs = {}
        for prefix, trip in self._triplets():
            for name, arr in trip.buffers().items():
                bufs[f"{prefix}.{name}"] = arr
        return bufs

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: t.data.copy() for k, t in self.named_parameters().items()}
        state.update({k: a.copy() for k, a in self.named_buffers().items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name in state:
            if name.startswith("head") and not name.startswith("head."):
                hname = name.split(".")[0]
                if hname not in self.heads:
                    w = state[f"{hname}.weight"]
                    self.add_head(hname, w.shape[0])
        params, bufs = self.named_parameters(), self.named_buffers()
        missing = (set(params) | set(bufs)) - set(state)
        if missing:
            raise ConfigError(f"checkpoint lacks {sorted(missing)[:3]}...")
        for name, t in params.items():
            if state[name].shape != t.shape:
                raise ConfigError(f"shape mismatch for {name}: {state[name].shape} vs {t.shape}")
            t.data = np.array(state[name], dtype=np.float64)
        for name, arr in bufs.items():
            arr[...] = state[name]

    def add_head(self, name: str, num_classes: int, seed: int | None = None) -> LinearHead:
        rng = np.random.default_rng(self.config.seed + 7919 if seed is None else seed)
        head = LinearHead(self.config.channels, num_classes, rng)
        self.heads[name] = head
        return head

    def clone(self) -> "CogniSNNModel":
        self.reset_state()
        return copy.deepcopy(self)

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.grad = None

    def reset_state(self) -> None:
        self.stem.reset_state()
        for node in self.nodes:
            node.reset_state()
        self.last_outputs = {}
        self.last_currents = {}

    def train(self, mode: bool = True) -> "CogniSNNModel":
        for _, trip in self._triplets():
            trip.training = mode
        return self

    def eval(self) -> "CogniSNNModel":
        return self.train(False)

    @property
    def training(self) -> bool:
        return self.stem.training

    # execution -----------------------------------------------------------

    def stem_forward(self, x_t: Tensor, profiler: OpProfiler | None = None) -> Tensor:
        if profiler is not None:
            # the encoding layer is always costed as dense MACs
            mac, _ = count_conv_ops(x_t.data, self.config.channels, self.stem.kernel, 1, self.stem.padding, dense=True)
            profiler.add("stem", "mac", mac)
        s = self.stem(x_t)
        if profiler is not None and not self.stem.training:
            profiler.add("stem", "mac", s.size)
        for _ in range(self.config.stem_pools):
            s = self._pool(s, "stem", profiler)
        return s

    def _pool(self, x: Tensor, label: str, profiler) -> Tensor:
        out = standard_pool(x, self.config.pooling)
        if profiler is not None and out is not x:
            profiler.add(label, "ac", accumulate_count(x.data))
        return out

    def aggregate_inputs(self, j: int, fed: dict[int, Tensor], mask: NodeActivityMask | None = None,
                         profiler: OpProfiler | None = None) -> Tensor:
        """Gated weighted sum of the pooled outputs of active predecessors."""
        preds = [
            i for i in self.dag.predecessors(j)
            if i in fed and (mask is None or (i, j) in mask.edges)
        ]
        if not preds:
            raise NoActiveInput(f"node {j} has no active incoming edge")
        aligned = adaptive_pool([fed[i] for i in preds])
        terms = []
        for i, x in zip(preds, aligned):
            if profiler is not None:
                if x is not fed[i]:
                    profiler.add(f"node{j}", "ac", accumulate_count(fed[i].data))
                profiler.add(f"node{j}", "mac", x.size)
            terms.append(mul(x, F.sigmoid(self.edge_weights[(i, j)])))
        return add_n(terms)

    def _triplet_profiled(self, label: str, trip: ConvBNSNTriplet, x: Tensor, profiler) -> Tensor:
        if profiler is not None:
            mac, ac = count_conv_ops(x.data, trip.out_channels, trip.kernel, 1, trip.padding)
            profiler.add(label, "mac", mac)
            profiler.add(label, "ac", ac)
            if not trip.training:
                profiler.add(label, "mac", x.shape[0] * trip.out_channels * x.shape[2] * x.shape[3])
        return trip(x)

    def _node_forward(self, v: int, x: Tensor, profiler) -> Tensor:
        node = self.nodes[v]
        if profiler is None:
            return node(x)
        o1 = self._triplet_profiled(f"node{v}", node.triplet1, x, profiler)
        o2 = self._triplet_profiled(f"node{v}", node.triplet2, o1, profiler)
        if node.gate == "add":
            profiler.add(f"node{v}", "ac", accumulate_count(o1.data))
            return F.add_combine(o2, o1)
        return F.or_combine(o2, o1)

    def features_timestep(self, x_t, mask: NodeActivityMask | None = None,
                          profiler: OpProfiler | None = None) -> Tensor:
        """Backbone pass for one frame; returns (N, C) readout features."""
        x_t = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
        s = self.stem_forward(x_t, profiler)
        fed: dict[int, Tensor] = {}
        order, outputs, currents = [], {}, {}
        for v in self.dag.nodes:
            if mask is not None and v not in mask.nodes:
                continue
            if self.dag.predecessors(v):
                inp = self.aggregate_inputs(v, fed, mask, profiler)
                currents[v] = inp
            else:
                inp = s
            o = self._node_forward(v, inp, profiler)
            order.append(v)
            outputs[v] = o
            fed[v] = self._pool(o, f"node{v}", profiler) if self.depths[v] in self.pool_depths else o
        self.last_order, self.last_outputs, self.last_currents = order, outputs, currents
        readout = [outputs[v] for v in self.dag.output_nodes if v in outputs]
        pooled = [F.global_avg_pool(o) for o in readout]
        feats = add_n(pooled)
        if len(pooled) > 1:
            feats = scale(feats, 1.0 / len(pooled))
        if profiler is not None:
            profiler.add("readout", "ac", sum(accumulate_count(o.data) for o in readout))
        return feats

    def head_forward(self, feats: Tensor, head: str = "head", profiler: OpProfiler | None = None) -> Tensor:
        h = self.heads[head]
        if profiler is not None:
            profiler.add(head, "mac", feats.shape[0] * h.weight.size)
        return h(feats)

    def forward_timestep(self, x_t, mask: NodeActivityMask | None = None, head: str = "head") -> Tensor:
        return self.head_forward(self.features_timestep(x_t, mask), head)

    def run_features(self, x, schedule: GrowthSchedule | None = None,
                     profiler: OpProfiler | None = None) -> list[Tensor]:
        """Per-timestep features for a (N, T, C, H, W) batch."""
        x = np.asarray(x, dtype=np.float64)
        steps = x.shape[1]
        if schedule is not None and schedule.timesteps != steps:
            raise ConfigError(f"schedule has {schedule.timesteps} steps, input has {steps}")
        feats = []
        for t in range(steps):
            mask = schedule.mask(t + 1) if schedule is not None else None
            feats.append(self.features_timestep(x[:, t], mask, profiler))
        return feats

    def readout(self, feats: list[Tensor], head: str = "head", profiler: OpProfiler | None = None) -> Tensor:
        """Mean over timesteps of the per-timestep logits."""
        logits = [self.head_forward(f, head, profiler) for f in feats]
        return scale(add_n(logits), 1.0 / len(logits))

    def forward_sequence(self, x, schedule: GrowthSchedule | None = None, head: str = "head") -> Tensor:
        self.reset_state()
        return self.readout(self.run_features(x, schedule), head)


def build_model(dag: DirectedAcyclicGraph, config: ModelConfig = ModelConfig()) -> CogniSNNModel:
    return CogniSNNModel(dag, config)


@dataclass(frozen=True)
class EnergyModel:
    mac_pj: float = 4.6
    ac_pj: float = 0.9

    def energy_pj(self, n_mac: int, n_ac: int) -> float:
        return n_mac * self.mac_pj + n_ac * self.ac_pj

    def energy_mj(self, n_mac: int, n_ac: int) -> float:
        return self.energy_pj(n_mac, n_ac) * 1e-9


@dataclass
class EnergyReport:
    n_mac: int
    n_ac: int
    energy_mj: float
    rows: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.n_mac, self.n_ac, self.energy_mj))


def profile_ops(model: CogniSNNModel, x, schedule: GrowthSchedule | None = None) -> OpProfiler:
    """Inference-mode forward pass that tallies MAC/AC operations."""
    was_training = model.training
    profiler = OpProfiler()
    model.eval()
    try:
        with no_grad():
            model.reset_state()
            model.readout(model.run_features(x, schedule, profiler), "head", profiler)
    finally:
        model.train(was_training)
        model.reset_state()
    return profiler


def count_ops_and_energy(model: CogniSNNModel, x, energy: EnergyModel = EnergyModel()) -> EnergyReport:
    prof = profile_ops(model, x)
    n_mac, n_ac = prof.total("mac"), prof.total("ac")
    return EnergyReport(n_mac, n_ac, energy.energy_mj(n_mac, n_ac), prof.rows())
