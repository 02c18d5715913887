"""LIF neurons, ConvBNSN triplets, OR-gated residual nodes and pooling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .errors import IncompatibleDimensions, ShapeMismatch
from .functional import SurrogateConfig
from .tensor import Tensor


@dataclass(frozen=True)
class LIFParams:
    tau: float = 0.5
    u_th: float = 1.0
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.u_th <= 0.0:
            raise ValueError("u_th must be positive")


@dataclass
class LIFState:
    u: Tensor | None = None
    s_prev: Tensor | None = None

    def reset(self) -> None:
        self.u = None
        self.s_prev = None


def lif_step(state: LIFState, params: LIFParams, current: Tensor) -> Tensor:
    """Advance one timestep: integrate, fire, remember the spike.

    A fresh state behaves as zero membrane and zero previous spike.
    """
    if state.u is not None and state.u.shape != current.shape:
        raise ShapeMismatch(f"state {state.u.shape} vs input {current.shape}")
    u = F.lif_membrane(state.u, current, state.s_prev, params.tau, params.u_th)
    spike = F.heaviside_surrogate(u, params.u_th, params.surrogate)
    state.u, state.s_prev = u, spike
    return spike


def kaiming_normal(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class ConvBNSNTriplet:
    """SN(BN(Conv(x))) with a 3x3, stride-1, pad-1, bias-free convolution."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 lif: LIFParams = LIFParams(), kernel: int = 3):
        self.kernel = kernel
        self.padding = kernel // 2
        self.weight = Tensor(kaiming_normal(rng, (out_channels, in_channels, kernel, kernel)), requires_grad=True)
        self.gamma = Tensor(np.ones(out_channels), requires_grad=True)
        self.beta = Tensor(np.zeros(out_channels), requires_grad=True)
        self.running_mean = np.zeros(out_channels)
        self.running_var = np.ones(out_channels)
        self.lif = lif
        self.state = LIFState()
        self.training = True
        self.eps = 1e-5
        self.momentum = 0.1

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        return {"conv.weight": self.weight, "bn.gamma": self.gamma, "bn.beta": self.beta}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"bn.running_mean": self.running_mean, "bn.running_var": self.running_var}

    def zero_bn(self) -> None:
        self.gamma.data[:] = 0.0
        self.beta.data[:] = 0.0

    def reset_state(self) -> None:
        self.state.reset()

    def conv_bn(self, x: Tensor) -> Tensor:
        y = F.conv2d(x, self.weight, None, stride=1, padding=self.padding)
        return F.batchnorm2d(y, self.gamma, self.beta, self.running_mean, self.running_var,
                             training=self.training, eps=self.eps, momentum=self.momentum)

    def __call__(self, x: Tensor) -> Tensor:
        return lif_step(self.state, self.lif, self.conv_bn(x))


def triplet_forward(triplet: ConvBNSNTriplet, x: Tensor) -> Tensor:
    return triplet(x)


class ResNode:
    """Two triplets whose spikes are merged by an OR gate.

    ``gate="add"`` swaps in the arithmetic residual for ablations; its
    output is no longer binary.
    """

    def __init__(self, in_channels: int, channels: int, rng: np.random.Generator,
                 lif: LIFParams = LIFParams(), gate: str = "or"):
        if gate not in ("or", "add"):
            raise ValueError(f"unknown residual gate {gate!r}")
        self.triplet1 = ConvBNSNTriplet(in_channels, channels, rng, lif)
        self.triplet2 = ConvBNSNTriplet(channels, channels, rng, lif)
        self.gate = gate
        self.last_branches: tuple[Tensor, Tensor] | None = None

    def triplets(self):
        return (("t1", self.triplet1), ("t2", self.triplet2))

    def reset_state(self) -> None:
        self.triplet1.reset_state()
        self.triplet2.reset_state()

    def __call__(self, x: Tensor) -> Tensor:
        o1 = self.triplet1(x)
        o2 = self.triplet2(o1)
        self.last_branches = (o1, o2)
        combine = F.or_combine if self.gate == "or" else F.add_combine
        return combine(o2, o1)


def resnode_forward(node: ResNode, x: Tensor) -> Tensor:
    return node(x)


@dataclass(frozen=True)
class PoolingPolicy:
    eta: int = 1
    kappa: int = 2

    def __post_init__(self):
        if self.eta < 1 or self.kappa < 1:
            raise ValueError("eta and kappa must be >= 1")


def spatial_dim(x: Tensor) -> int:
    return x.shape[2]


def standard_pool(x: Tensor, policy: PoolingPolicy = PoolingPolicy()) -> Tensor:
    """Downsample by kappa unless that would drop below eta."""
    if spatial_dim(x) / policy.kappa >= policy.eta:
        return F.avg_pool2d(x, policy.kappa)
    return x


def adaptive_pool(outputs: list[Tensor]) -> list[Tensor]:
    """Pool every input down to the smallest incoming spatial size."""
    if not outputs:
        return []
    lead = outputs[0].shape[:2]
    for o in outputs:
        if o.shape[:2] != lead:
            raise ShapeMismatch(f"batch/channel dims differ: {o.shape[:2]} vs {lead}")
    target = min(spatial_dim(o) for o in outputs)
    pooled = [F.avg_pool2d(o, spatial_dim(o) // target) for o in outputs]
    shape = pooled[0].shape
    for p in pooled:
        if p.shape != shape:
            raise IncompatibleDimensions(f"adaptive pooling produced {p.shape} and {shape}")
    return pooled


def adaptive_kernels(dims) -> list[int]:
    target = min(dims)
    return [d // target for d in dims]
