"""Small MLP/conv classifiers and capacity-ordered ladders of them."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import FormatError, LadderError, ShapeError, SpecError
from .tensor import Tensor, conv2d, matmul, no_grad, relu

_CKPT_MAGIC = b"ORCKPT01"


@dataclass(frozen=True)
class NetSpec:
    kind: str
    depth: int
    width: int
    num_classes: int
    input_shape: Tuple[int, ...]
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if self.kind not in ("mlp", "conv"):
            raise SpecError(f"unknown net kind {self.kind!r}")
        if self.depth < 1:
            raise SpecError(f"depth must be >= 1, got {self.depth}")
        if self.width < 1:
            raise SpecError(f"width must be >= 1, got {self.width}")
        if self.num_classes < 2:
            raise SpecError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.kind == "mlp" and len(self.input_shape) != 1:
            raise SpecError(f"mlp input_shape must be (D,), got {self.input_shape}")
        if self.kind == "conv" and len(self.input_shape) != 3:
            raise SpecError(f"conv input_shape must be (C,H,W), got {self.input_shape}")


def _layer_shapes(spec: NetSpec) -> List[Tuple[str, Tuple[int, ...]]]:
    """Ordered (name, shape) of every parameter implied by ``spec``."""
    shapes = []
    if spec.kind == "mlp":
        # depth counts linear layers; depth-1 hidden layers of ``width`` units
        dims = [spec.input_shape[0]] + [spec.width] * (spec.depth - 1) + [spec.num_classes]
        for i in range(spec.depth):
            shapes.append((f"fc{i}.weight", (dims[i], dims[i + 1])))
            shapes.append((f"fc{i}.bias", (dims[i + 1],)))
    else:
        # depth 3x3 conv layers; channels double at every second layer, then GAP + linear head
        in_ch = spec.input_shape[0]
        for i in range(spec.depth):
            out_ch = spec.width * (2 ** (i // 2))
            shapes.append((f"conv{i}.weight", (out_ch, in_ch, 3, 3)))
            shapes.append((f"conv{i}.bias", (out_ch,)))
            in_ch = out_ch
        shapes.append(("head.weight", (in_ch, spec.num_classes)))
        shapes.append(("head.bias", (spec.num_classes,)))
    return shapes


def param_count_of(spec: NetSpec) -> int:
    return int(sum(np.prod(s) for _, s in _layer_shapes(spec)))


def _conv_stride(i: int) -> int:
    return 2 if i % 2 == 1 else 1


class Network:
    """A classifier whose parameters are leaf Tensors, in a fixed named order."""

    def __init__(self, spec: NetSpec, params: Dict[str, Tensor]):
        self.spec = spec
        self.params = params
        self.mode = "train"

    @property
    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def train(self) -> "Network":
        self.mode = "train"
        return self

    def eval(self) -> "Network":
        self.mode = "eval"
        return self

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def __call__(self, batch) -> Tensor:
        return forward(self, batch)

    def state_bytes(self) -> bytes:
        return b"".join(p.data.astype("<f8").tobytes() for p in self.params.values())


def build(spec: NetSpec) -> Network:
    """He-uniform weights (bound sqrt(6 / fan_in)) drawn from ``spec.init_seed``; zero biases."""
    rng = np.random.default_rng(spec.init_seed)
    params = {}
    for name, shape in _layer_shapes(spec):
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return Network(spec, params)


def forward(net: Network, batch) -> Tensor:
    """Logits ``[B, num_classes]``; records a graph only in train mode."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if tuple(x.shape[1:]) != net.spec.input_shape:
        raise ShapeError(f"batch shape {x.shape} does not match input_shape {net.spec.input_shape}")
    if net.mode == "eval":
        with no_grad():
            return _forward(net, x)
    return _forward(net, x)


def _forward(net: Network, x: Tensor) -> Tensor:
    p = net.params
    spec = net.spec
    if spec.kind == "mlp":
        h = x
        for i in range(spec.depth):
            h = matmul(h, p[f"fc{i}.weight"]) + p[f"fc{i}.bias"]
            if i < spec.depth - 1:
                h = relu(h)
        return h
    h = x
    for i in range(spec.depth):
        w = p[f"conv{i}.weight"]
        h = conv2d(h, w, stride=_conv_stride(i), padding=1)
        h = relu(h + p[f"conv{i}.bias"].reshape(1, -1, 1, 1))
    h = h.mean(axis=(2, 3))
    return matmul(h, p["head.weight"]) + p["head.bias"]


@dataclass
class NetworkLadder:
    pivot: Network
    pool: List[Network] = field(default_factory=list)

    @property
    def networks(self) -> List[Network]:
        """Pivot first, then the pool from largest to smallest; list index is the network id."""
        return [self.pivot] + list(self.pool)

    def __len__(self) -> int:
        return 1 + len(self.pool)


def make_ladder(specs: Sequence[NetSpec]) -> NetworkLadder:
    if len(specs) < 2:
        raise LadderError("a ladder needs a pivot and at least one pool network")
    counts = [param_count_of(s) for s in specs]
    if counts[0] < counts[1]:
        raise LadderError(f"pivot has fewer parameters ({counts[0]}) than pool[0] ({counts[1]})")
    for a, b in zip(counts[1:], counts[2:]):
        if not a > b:
            raise LadderError(f"pool capacities must strictly decrease, got {counts[1:]}")
    nets = [build(s) for s in specs]
    return NetworkLadder(pivot=nets[0], pool=nets[1:])


# -- checkpoints ---------------------------------------------------------
# layout: 8-byte magic, u64 LE header length, UTF-8 JSON header, raw '<f8' payload

def save_checkpoint(net: Network, path) -> None:
    header = {
        "dtype": "float64",
        "byteorder": "little",
        "spec": asdict(net.spec),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in net.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(net.state_bytes())


def load_checkpoint(path) -> Network:
    raw = Path(path).read_bytes()
    if raw[:8] != _CKPT_MAGIC or len(raw) < 16:
        raise FormatError(f"{path}: not an orckd checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad header ({exc})") from None
    spec_d = header["spec"]
    spec = NetSpec(**{**spec_d, "input_shape": tuple(spec_d["input_shape"])})
    payload = np.frombuffer(raw[16 + hlen:], dtype="<f8")
    params, offset = {}, 0
    for entry in header["params"]:
        n = int(np.prod(entry["shape"]))
        if offset + n > payload.size:
            raise FormatError(f"{path}: payload truncated at {entry['name']}")
        data = payload[offset:offset + n].reshape(entry["shape"]).astype(np.float64)
        params[entry["name"]] = Tensor(data, requires_grad=True, name=entry["name"])
        offset += n
    if offset != payload.size:
        raise FormatError(f"{path}: {payload.size - offset} trailing values")
    return Network(spec, params)


def copy_params(src: Network, dst: Network) -> None:
    for name, p in src.params.items():
        dst.params[name].data = p.data.copy()
