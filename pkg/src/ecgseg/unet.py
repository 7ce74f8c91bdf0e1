"""UNet-like 1-D segmentation network and its checkpoint format.

Four encoder blocks (two conv-bn-relu each) joined by 2x max pooling, a
bottleneck block, four decoder levels (stride-2 transposed conv, zero-pad
concat with the mirrored skip, two conv-bn-relu), and a 1x1 head to the
four class scores. Inputs of any length are right-padded to a multiple of
16 and the scores cropped back, so the output is always (4, l).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import (
    BatchNormState,
    Parameter,
    ShapeError,
    Tensor,
    batchnorm1d,
    conv1d,
    convtranspose1d,
    crop_right,
    fan_in_uniform,
    maxpool1d,
    pad_right,
    relu,
    zero_pad_concat,
)

N_CLASSES = 4
_POOL_FACTOR = 16  # four halvings


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture parameters; four encoder levels are fixed."""

    encoder_widths: tuple[int, int, int, int] = (16, 32, 64, 128)
    bottleneck_width: int = 256
    kernel_size: int = 9
    padding: int = 4
    up_kernel_size: int = 8
    up_stride: int = 2
    up_padding: int = 3
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "encoder_widths", tuple(self.encoder_widths))
        if len(self.encoder_widths) != 4:
            raise ShapeError(f"exactly 4 encoder widths required, got {self.encoder_widths}")
        if any(w < 1 for w in self.encoder_widths) or self.bottleneck_width < 1:
            raise ShapeError("channel widths must be >= 1")


def tiny_config(seed: int = 0) -> ModelConfig:
    """Small preset for tests and the desk-scale overfit drill."""
    return ModelConfig(encoder_widths=(4, 8, 16, 32), bottleneck_width=64, seed=seed)


class _ConvBnRelu:
    def __init__(self, rng, in_ch: int, out_ch: int, cfg: ModelConfig, name: str):
        k = cfg.kernel_size
        self.w = Parameter(fan_in_uniform(rng, (out_ch, in_ch, k), in_ch * k), f"{name}.weight")
        self.b = Parameter(np.zeros(out_ch), f"{name}.bias")
        self.bn = BatchNormState.create(out_ch, f"{name}.bn", eps=cfg.bn_eps, momentum=cfg.bn_momentum)
        self.padding = cfg.padding

    def __call__(self, x: Tensor) -> Tensor:
        return relu(batchnorm1d(conv1d(x, self.w, self.b, self.padding), self.bn))

    def parameters(self):
        return [self.w, self.b, self.bn.gamma, self.bn.beta]


class _Block:
    """Two conv-bn-relu layers."""

    def __init__(self, rng, in_ch: int, out_ch: int, cfg: ModelConfig, name: str):
        self.conv1 = _ConvBnRelu(rng, in_ch, out_ch, cfg, f"{name}.conv1")
        self.conv2 = _ConvBnRelu(rng, out_ch, out_ch, cfg, f"{name}.conv2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(self.conv1(x))

    def parameters(self):
        return self.conv1.parameters() + self.conv2.parameters()

    def bn_states(self):
        return [self.conv1.bn, self.conv2.bn]


class _Up:
    def __init__(self, rng, in_ch: int, out_ch: int, cfg: ModelConfig, name: str):
        k = cfg.up_kernel_size
        self.w = Parameter(fan_in_uniform(rng, (in_ch, out_ch, k), in_ch * k), f"{name}.weight")
        self.b = Parameter(np.zeros(out_ch), f"{name}.bias")
        self.stride = cfg.up_stride
        self.padding = cfg.up_padding

    def __call__(self, x: Tensor) -> Tensor:
        return convtranspose1d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def parameters(self):
        return [self.w, self.b]


class SegmentationModel:
    """The wired network; owns parameters, batch-norm state, and a step counter."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        widths = config.encoder_widths
        self.encoder = []
        in_ch = 1
        for i, w in enumerate(widths, start=1):
            self.encoder.append(_Block(rng, in_ch, w, config, f"enc{i}"))
            in_ch = w
        self.bottleneck = _Block(rng, widths[-1], config.bottleneck_width, config, "bottleneck")
        self.ups = []
        self.decoder = []
        prev = config.bottleneck_width
        for i in range(4, 0, -1):
            w = widths[i - 1]
            self.ups.append(_Up(rng, prev, w, config, f"up{i}"))
            self.decoder.append(_Block(rng, 2 * w, w, config, f"dec{i}"))
            prev = w
        self.head_w = Parameter(
            fan_in_uniform(rng, (N_CLASSES, widths[0], 1), widths[0]), "head.weight"
        )
        self.head_b = Parameter(np.zeros(N_CLASSES), "head.bias")
        self.step_count = 0
        self.training = True

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for block in self.encoder:
            params += block.parameters()
        params += self.bottleneck.parameters()
        for up, block in zip(self.ups, self.decoder):
            params += up.parameters() + block.parameters()
        params += [self.head_w, self.head_b]
        return params

    def bn_states(self) -> list[BatchNormState]:
        states = []
        for block in self.encoder:
            states += block.bn_states()
        states += self.bottleneck.bn_states()
        for block in self.decoder:
            states += block.bn_states()
        return states

    def train(self) -> "SegmentationModel":
        self.training = True
        for state in self.bn_states():
            state.training = True
        return self

    def eval(self) -> "SegmentationModel":
        self.training = False
        for state in self.bn_states():
            state.training = False
        return self

    def forward(self, x) -> Tensor:
        """Scores of shape (batch, 4, l) for inputs of shape (batch, 1, l)."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.data.ndim != 3 or x.shape[1] != 1:
            raise ShapeError(f"forward expects (batch, 1, length), got {x.shape}")
        length = x.shape[2]
        padded = -(-length // _POOL_FACTOR) * _POOL_FACTOR
        h = pad_right(x, padded - length)
        skips = []
        for block in self.encoder:
            h = block(h)
            skips.append(h)
            h, _ = maxpool1d(h)
        h = self.bottleneck(h)
        for up, block, skip in zip(self.ups, self.decoder, reversed(skips)):
            h = block(zero_pad_concat(up(h), skip))
        h = conv1d(h, self.head_w, self.head_b, padding=0)
        return crop_right(h, length)

    def scores(self, signal: np.ndarray) -> np.ndarray:
        """Inference on a single lead: (l,) -> (4, l) numpy scores."""
        return self.forward(np.asarray(signal, dtype=np.float64)[None, None, :]).data[0]


def build(config: ModelConfig) -> SegmentationModel:
    return SegmentationModel(config)


# ---------------------------------------------------------------------------
# Checkpoint container: magic, version, JSON header, named float64 blobs.

_MAGIC = b"ECG1DSEG"
_VERSION = 1


def save_container(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    chunks = [_MAGIC, struct.pack("<I", _VERSION)]
    header_bytes = json.dumps(header).encode("utf-8")
    chunks.append(struct.pack("<Q", len(header_bytes)))
    chunks.append(header_bytes)
    chunks.append(struct.pack("<Q", len(arrays)))
    for name, arr in arrays.items():
        name_bytes = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float64)
        chunks.append(struct.pack("<Q", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<Q", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(len(_MAGIC))) != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    (version,) = struct.unpack("<I", take(4))
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack("<Q", take(8))
    header = json.loads(bytes(take(header_len)).decode("utf-8"))
    (n_arrays,) = struct.unpack("<Q", take(8))
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack("<Q", take(8))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<Q", take(8))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim)) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).copy()
    return header, arrays


def _model_arrays(model: SegmentationModel) -> dict[str, np.ndarray]:
    arrays = {p.name: p.data for p in model.parameters()}
    for state in model.bn_states():
        prefix = state.gamma.name.rsplit(".", 1)[0]
        arrays[f"{prefix}.running_mean"] = state.running_mean
        arrays[f"{prefix}.running_var"] = state.running_var
    return arrays


def save_weights(model: SegmentationModel, path, extra_header: dict | None = None,
                 extra_arrays: dict[str, np.ndarray] | None = None) -> None:
    """Write parameters, running stats, config, and the step counter.

    ``extra_*`` lets the trainer piggyback optimizer slots and RNG state
    in the same container.
    """
    header = {
        "kind": "segmentation-model",
        "config": asdict(model.config),
        "step_count": model.step_count,
    }
    if extra_header:
        header.update(extra_header)
    arrays = _model_arrays(model)
    if extra_arrays:
        arrays.update(extra_arrays)
    save_container(path, header, arrays)


def load_weights(path, model: SegmentationModel | None = None) -> SegmentationModel:
    """Rebuild (or populate) a model from a checkpoint.

    With an explicit ``model``, every stored array must match the model's
    shape for that layer path; the first mismatch is reported by name.
    """
    header, arrays = load_container(path)
    if header.get("kind") != "segmentation-model":
        raise CheckpointError(f"{path}: container holds {header.get('kind')!r}, not a model")
    if model is None:
        config = ModelConfig(**{
            k: tuple(v) if isinstance(v, list) else v for k, v in header["config"].items()
        })
        model = SegmentationModel(config)
    expected = _model_arrays(model)
    for name, target in expected.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: checkpoint is missing array {name!r}")
        if arrays[name].shape != target.shape:
            raise CheckpointError(
                f"{path}: shape mismatch at {name!r}: "
                f"checkpoint {arrays[name].shape} vs model {target.shape}"
            )
    for p in model.parameters():
        p.data = arrays[p.name].copy()
    for state in model.bn_states():
        prefix = state.gamma.name.rsplit(".", 1)[0]
        state.gamma.data = arrays[f"{prefix}.gamma"].copy()
        state.beta.data = arrays[f"{prefix}.beta"].copy()
        state.running_mean = arrays[f"{prefix}.running_mean"].copy()
        state.running_var = arrays[f"{prefix}.running_var"].copy()
    model.step_count = int(header["step_count"])
    return model
