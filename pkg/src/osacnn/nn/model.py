from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from ..rng import SplitMix64
from .layers import Conv1d, Dense, Dropout, Flatten, Layer, MaxPool1d, ShapeError, softmax, softmax_cross_entropy


@dataclass(frozen=True)
class ConvBlock:
    filters: int
    kernel: int
    stride: int
    pool_kernel: int
    pool_stride: int


@dataclass(frozen=True)
class Architecture:
    blocks: tuple[ConvBlock, ...]
    hidden: int = 100
    keep: float = 0.5
    num_classes: int = 4

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> Architecture:
        blocks = tuple(ConvBlock(**b) for b in data["blocks"])
        return cls(blocks=blocks, hidden=data["hidden"], keep=data["keep"], num_classes=data["num_classes"])

    def replace(self, **changes) -> Architecture:
        data = {**asdict(self), **changes}
        data["blocks"] = [b if isinstance(b, dict) else asdict(b) for b in data["blocks"]]
        return Architecture.from_dict(data)


# Conv 46/10/2, pool 10/2; conv 92/10/2, pool 10/2; conv 184/20/2, pool 20/5; no padding, ReLU
FULL = Architecture(
    blocks=(
        ConvBlock(46, 10, 2, 10, 2),
        ConvBlock(92, 10, 2, 10, 2),
        ConvBlock(184, 20, 2, 20, 5),
    ),
    hidden=100,
)

# Same topology scaled for 10 s windows at 64 Hz (640 samples).
DESK = Architecture(
    blocks=(
        ConvBlock(8, 10, 2, 4, 2),
        ConvBlock(16, 5, 2, 4, 2),
        ConvBlock(16, 5, 1, 4, 2),
    ),
    hidden=32,
)

PRESETS = {"full": FULL, "desk": DESK}


@dataclass
class Model:
    layers: list[Layer]
    seq_len: int
    in_channels: int
    arch: Architecture
    seed: int = 0
    shapes: list[tuple[int, ...]] = field(default_factory=list)

    def __post_init__(self) -> None:
        shape: tuple[int, ...] = (self.seq_len, self.in_channels)
        self.shapes = [shape]
        for layer in self.layers:
            shape = layer.output_shape(shape)
            self.shapes.append(shape)
        if shape != (self.arch.num_classes,):
            raise ShapeError(f"model output shape {shape}, expected ({self.arch.num_classes},)")

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    @property
    def flatten_width(self) -> int:
        for layer, shape in zip(self.layers, self.shapes[1:]):
            if isinstance(layer, Flatten):
                return shape[0]
        raise ValueError("model has no flatten layer")

    @property
    def dropout(self) -> Dropout | None:
        return next((layer for layer in self.layers if isinstance(layer, Dropout)), None)

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != 3:
            raise ShapeError(f"input: expected (batch, length, channels), got shape {x.shape}")
        if x.shape[2] != self.in_channels:
            raise ShapeError(
                f"{self.layers[0].name}: expected {self.in_channels} input channels, got {x.shape[2]}"
            )
        if x.shape[1] != self.seq_len:
            raise ShapeError(f"{self.layers[0].name}: expected sequence length {self.seq_len}, got {x.shape[1]}")

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Logits for a batch."""
        self._check_input(x)
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, grad_logits: np.ndarray) -> None:
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g)

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray, train: bool = True) -> float:
        logits = self.forward(x, train=train)
        loss, grad = softmax_cross_entropy(logits, labels)
        self.backward(grad.astype(logits.dtype, copy=False))
        return loss

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        out = [softmax(self.forward(x[i : i + batch_size])) for i in range(0, len(x), batch_size)]
        if not out:
            return np.zeros((0, self.num_classes))
        return np.concatenate(out)

    def params(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed ``layer.param``."""
        return {f"{layer.name}.{k}": v for layer in self.layers for k, v in layer.params.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {f"{layer.name}.{k}": v for layer in self.layers for k, v in layer.grads.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.params()
        if params.keys() != state.keys():
            raise KeyError(f"state keys differ from model parameters: {sorted(params.keys() ^ state.keys())}")
        for key, value in state.items():
            if value.shape != params[key].shape:
                raise ShapeError(f"{key}: stored shape {value.shape} != model shape {params[key].shape}")
            params[key][...] = value

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for key, value in self.params().items():
            h.update(key.encode())
            h.update(np.ascontiguousarray(value).tobytes())
        return h.hexdigest()

    def describe(self) -> list[dict]:
        return [layer.describe() for layer in self.layers]

    def summary(self) -> str:
        lines = [f"{'layer':<10} {'output':>14} {'params':>10}", f"{'input':<10} {str(self.shapes[0]):>14}"]
        for layer, shape in zip(self.layers, self.shapes[1:]):
            n = sum(v.size for v in layer.params.values())
            lines.append(f"{layer.name:<10} {str(shape):>14} {n:>10}")
        return "\n".join(lines)


def build_model(
    seq_len: int,
    in_channels: int,
    arch: Architecture | str = "full",
    seed: int = 0,
    dtype=np.float32,
) -> Model:
    """Conv/pool blocks, flatten, dense(ReLU), dropout, dense logits.

    Weights are drawn uniformly from +-sqrt(6 / fan_in); biases start at zero.
    Raises :class:`ShapeError` when ``seq_len`` is too short for the chain.
    """
    if isinstance(arch, str):
        arch = PRESETS[arch]
    rng = SplitMix64(seed)
    layers: list[Layer] = []
    channels = in_channels
    for i, block in enumerate(arch.blocks, start=1):
        layers.append(Conv1d(channels, block.filters, block.kernel, block.stride, name=f"conv{i}", dtype=dtype))
        layers.append(MaxPool1d(block.pool_kernel, block.pool_stride, name=f"pool{i}"))
        channels = block.filters

    # walk the conv stack to size the dense head
    shape: tuple[int, ...] = (seq_len, in_channels)
    for layer in layers:
        try:
            shape = layer.output_shape(shape)
        except ShapeError as exc:
            raise ShapeError(f"seq_len {seq_len} too short for this architecture: {exc}") from None
    flat = int(np.prod(shape))
    layers += [
        Flatten(),
        Dense(flat, arch.hidden, relu=True, name="fc1", dtype=dtype),
        Dropout(arch.keep, rng=rng.spawn("dropout")),
        Dense(arch.hidden, arch.num_classes, name="fc2", dtype=dtype),
    ]
    for layer in layers:
        if isinstance(layer, (Conv1d, Dense)):
            limit = np.sqrt(6.0 / layer.fan_in)
            w = layer.params["W"]
            w[...] = rng.spawn(layer.name).uniform(w.shape, -limit, limit)
    return Model(layers, seq_len, in_channels, arch, seed)
