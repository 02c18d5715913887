"""Synthetic event streams, event-file persistence and test-time perturbations."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, CorruptFile, DataEmpty, InvalidSpec, RhoTooLarge

EVENT_MAGIC = b"EVTS"
EVENT_VERSION = 1


@dataclass
class EventTensorDataset:
    x: np.ndarray  # (N, T, C, H, W) uint8 in {0, 1}
    y: np.ndarray  # (N,) int64
    class_count: int
    split: str = "train"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.uint8)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 5:
            raise InvalidSpec(f"events must be (N, T, C, H, W), got {self.x.shape}")
        if len(self.x) != len(self.y):
            raise InvalidSpec("sample and label counts differ")
        if self.x.size and self.x.max() > 1:
            raise InvalidSpec("event tensors must be binary")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.class_count):
            raise InvalidSpec("label outside [0, class_count)")

    def __len__(self):
        return len(self.y)

    @property
    def timesteps(self) -> int:
        return self.x.shape[1]

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return self.x.shape[2:]

    def subset(self, idx) -> "EventTensorDataset":
        return EventTensorDataset(self.x[idx], self.y[idx], self.class_count, self.split)

    def require_nonempty(self) -> None:
        if len(self) == 0:
            raise DataEmpty(f"{self.split} split is empty")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    class_count: int = 4
    timesteps: int = 4
    height: int = 16
    width: int = 16
    channels: int = 2
    family: str = "bar"
    spike_prob_fg: float = 0.9
    spike_prob_bg: float = 0.02
    samples_per_class: int = 50
    seed: int = 0

    def validate(self) -> None:
        if self.family not in PATTERNS:
            raise InvalidSpec(f"unknown pattern family {self.family!r}")
        if not 1 <= self.class_count <= 8:
            raise InvalidSpec("synthetic tasks support 1..8 classes")
        # fg == bg is allowed as an information-free control
        if not 0.0 <= self.spike_prob_bg <= self.spike_prob_fg <= 1.0:
            raise InvalidSpec("need 0 <= bg <= fg <= 1")
        if self.timesteps < 1 or self.samples_per_class < 1:
            raise InvalidSpec("timesteps and samples_per_class must be positive")
        if self.channels not in (1, 2) or min(self.height, self.width) < 8:
            raise InvalidSpec("need 1-2 channels and frames of at least 8x8")


def _bar(cls: int, spec: SyntheticTaskSpec, rng: np.random.Generator) -> np.ndarray:
    t_, h, w = spec.timesteps, spec.height, spec.width
    direction, speed = cls % 4, 1 + cls // 4
    axis_len = w if direction < 2 else h
    step = speed * max(1, axis_len // (2 * t_))
    sign = 1 if direction in (0, 2) else -1
    start = int(rng.integers(axis_len))
    span = max(2, (h if direction < 2 else w) // 2)
    lo = int(rng.integers(0, (h if direction < 2 else w) - span + 1))
    out = np.zeros((t_, 2, h, w), dtype=bool)
    for t in range(t_):
        for ch, lag in ((0, 0), (1, 1)):
            pos = (start + sign * step * (t - lag)) % axis_len
            cols = [pos, (pos + 1) % axis_len]
            if direction < 2:
                out[t, ch, lo:lo + span, cols] = True
            else:
                out[t, ch, cols, lo:lo + span] = True
    return out


def _rotation(cls: int, spec: SyntheticTaskSpec, rng: np.random.Generator) -> np.ndarray:
    t_, h, w = spec.timesteps, spec.height, spec.width
    spin = 1 if cls % 2 == 0 else -1
    phase = (cls // 2) * np.pi / 2 + rng.uniform(-np.pi / 8, np.pi / 8)
    radius = rng.uniform(min(h, w) / 5, min(h, w) / 3)
    omega = spin * np.pi / max(2, t_)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    out = np.zeros((t_, 2, h, w), dtype=bool)
    for t in range(t_):
        for ch, lag in ((0, 0), (1, 1)):
            ang = phase + omega * (t - lag)
            y, x = int(round(cy + radius * np.sin(ang))), int(round(cx + radius * np.cos(ang)))
            out[t, ch, max(0, y - 1):y + 1, max(0, x - 1):x + 1] = True
    return out


def _checker(cls: int, spec: SyntheticTaskSpec, rng: np.random.Generator) -> np.ndarray:
    t_, h, w = spec.timesteps, spec.height, spec.width
    cell = (1, 2, 4, 8)[cls % 4]
    flicker = cls // 4 == 1
    dy, dx = rng.integers(0, 2 * cell, size=2)
    yy, xx = np.mgrid[0:h, 0:w]
    base = (((yy + dy) // cell + (xx + dx) // cell) % 2).astype(bool)
    out = np.zeros((t_, 2, h, w), dtype=bool)
    for t in range(t_):
        frame = ~base if flicker and t % 2 else base
        out[t, 0] = frame
        out[t, 1] = np.roll(frame, cell, axis=1)
    return out


PATTERNS = {"bar": _bar, "rotation": _rotation, "checker": _checker}


def generate_synthetic(spec: SyntheticTaskSpec) -> tuple[EventTensorDataset, EventTensorDataset]:
    """Deterministic train/test pair split 9:1 within each class."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    pattern = PATTERNS[spec.family]
    train_x, train_y, test_x, test_y = [], [], [], []
    n_test = spec.samples_per_class // 10
    for cls in range(spec.class_count):
        for i in range(spec.samples_per_class):
            fg = pattern(cls, spec, rng)[:, :spec.channels]
            prob = np.where(fg, spec.spike_prob_fg, spec.spike_prob_bg)
            sample = (rng.random(prob.shape) < prob).astype(np.uint8)
            if i < spec.samples_per_class - n_test:
                train_x.append(sample)
                train_y.append(cls)
            else:
                test_x.append(sample)
                test_y.append(cls)
    shape = (0, spec.timesteps, spec.channels, spec.height, spec.width)

    def pack(xs, ys, split):
        x = np.stack(xs) if xs else np.zeros(shape, dtype=np.uint8)
        y = np.asarray(ys, dtype=np.int64)
        order = rng.permutation(len(y))
        return EventTensorDataset(x[order], y[order], spec.class_count, split)

    return pack(train_x, train_y, "train"), pack(test_x, test_y, "test")


# perturbations -------------------------------------------------------


def _check_fraction(value: float, what: str) -> float:
    value = round(value, 12)
    if value > 1.0:
        raise RhoTooLarge(f"{what} {value} exceeds 1")
    if value < 0.0:
        raise ValueError("rho must be non-negative")
    return value


def apply_salt_pepper(x: np.ndarray, rho: float, seed: int = 0) -> np.ndarray:
    """Overwrite ``rho * 0.02`` of each H x W frame with noise.

    Half of the chosen pixels become 1 and half 0; an odd count favours salt.
    """
    frac = _check_fraction(rho * 0.02, "salt-and-pepper fraction")
    x = np.asarray(x)
    if frac == 0.0:
        return x.copy()
    h, w = x.shape[-2:]
    n_noisy = int(round(frac * h * w))
    n_salt = (n_noisy + 1) // 2
    planes = x.reshape(-1, h * w).copy()
    rng = np.random.default_rng(seed)
    picks = np.argsort(rng.random(planes.shape), axis=1, kind="stable")[:, :n_noisy]
    rows = np.arange(planes.shape[0])[:, None]
    planes[rows, picks[:, :n_salt]] = 1
    planes[rows, picks[:, n_salt:]] = 0
    return planes.reshape(x.shape)


def apply_poisson_noise(x: np.ndarray, rho: float, seed: int = 0, base_rate: float = 0.01) -> np.ndarray:
    """OR Poisson(rho * base_rate) background events onto ``x``."""
    if rho < 0:
        raise ValueError("rho must be non-negative")
    x = np.asarray(x)
    if rho == 0:
        return x.copy()
    rng = np.random.default_rng(seed)
    extra = rng.poisson(rho * base_rate, size=x.shape) > 0
    return (x.astype(bool) | extra).astype(x.dtype)


def apply_frame_loss(x: np.ndarray, rho: float, seed: int = 0) -> np.ndarray:
    """Zero whole (C, H, W) frames independently with probability ``rho * 0.05``."""
    p = _check_fraction(rho * 0.05, "frame drop probability")
    x = np.asarray(x)
    out = x.copy()
    if p == 0.0:
        return out
    rng = np.random.default_rng(seed)
    dropped = rng.random(x.shape[:-3]) < p
    out[dropped] = 0
    return out


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    rho: float = 0.0
    seed: int = 0
    poisson_base: float = 0.01

    def __post_init__(self):
        if self.kind not in PERTURBATIONS:
            raise InvalidSpec(f"unknown perturbation {self.kind!r}")
        if self.rho < 0:
            raise InvalidSpec("rho must be >= 0")

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "poisson":
            return apply_poisson_noise(x, self.rho, self.seed, self.poisson_base)
        return PERTURBATIONS[self.kind](x, self.rho, self.seed)


PERTURBATIONS = {
    "salt_pepper": apply_salt_pepper,
    "poisson": apply_poisson_noise,
    "frame_loss": apply_frame_loss,
}


# persistence -----------------------------------------------------------


def dumps_events(dataset: EventTensorDataset) -> bytes:
    n, t, c, h, w = dataset.x.shape
    header = EVENT_MAGIC + struct.pack("<6I", EVENT_VERSION, n, t, c, h, w)
    labels = dataset.y.astype("<u2").tobytes()
    return header + labels + dataset.x.astype(np.uint8).tobytes(order="C")


def loads_events(blob: bytes, split: str = "train") -> EventTensorDataset:
    if len(blob) < 4 or blob[:4] != EVENT_MAGIC:
        raise BadMagic(f"expected {EVENT_MAGIC!r}")
    if len(blob) < 28:
        raise CorruptFile("event header truncated")
    version, n, t, c, h, w = struct.unpack_from("<6I", blob, 4)
    if version != EVENT_VERSION:
        raise CorruptFile(f"unsupported event file version {version}")
    pos = 28
    need = pos + 2 * n + n * t * c * h * w
    if len(blob) != need:
        raise CorruptFile(f"expected {need} bytes, found {len(blob)}")
    labels = np.frombuffer(blob, dtype="<u2", count=n, offset=pos).astype(np.int64)
    pos += 2 * n
    x = np.frombuffer(blob, dtype=np.uint8, offset=pos).reshape(n, t, c, h, w).copy()
    if x.size and x.max() > 1:
        raise CorruptFile("spike bytes must be 0 or 1")
    class_count = int(labels.max()) + 1 if n else 0
    return EventTensorDataset(x, labels, class_count, split)


def save_events(path, dataset: EventTensorDataset) -> None:
    Path(path).write_bytes(dumps_events(dataset))


def load_events(path, split: str = "train") -> EventTensorDataset:
    return loads_events(Path(path).read_bytes(), split)
