"""Small dense feed-forward models with hand-rolled reverse-mode gradients.

Parameters live in a single flat float64 vector (ParamSet.theta) together
with a filter partition: each output row of a dense layer is one
"weight-filter" slice and each bias vector is one "bias" slice. The noise
model scales its perturbations per slice, so the partition is the contract
between this module and perturb.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensorcore import NumericError, RngStream

ACTIVATIONS = ("relu", "tanh")

CHECKPOINT_MAGIC = b"NTCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden: tuple[int, ...]
    num_classes: int
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.input_dim < 1 or self.num_classes < 2:
            raise ValueError("input_dim >= 1 and num_classes >= 2 required")
        if any(w < 1 for w in self.hidden):
            raise ValueError("hidden widths must be >= 1")

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(out, in) per dense layer, ordered input to output."""
        widths = [self.input_dim, *self.hidden, self.num_classes]
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]

    def num_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes())

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "num_classes": self.num_classes,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["input_dim"], tuple(d["hidden"]), d["num_classes"], d["activation"])


@dataclass(frozen=True)
class FilterSlice:
    offset: int
    length: int
    kind: str  # "weight-filter" | "bias"


@dataclass
class ParamSet:
    theta: np.ndarray
    partition: list[FilterSlice] = field(default_factory=list)

    def copy(self) -> "ParamSet":
        return ParamSet(self.theta.copy(), self.partition)


@dataclass
class Batch:
    inputs: np.ndarray  # [m, d]
    labels: np.ndarray  # [m] ints


def build_partition(spec: ModelSpec) -> list[FilterSlice]:
    """One weight-filter slice per output row, one bias slice per layer."""
    slices = []
    off = 0
    for out, inp in spec.layer_shapes():
        for _ in range(out):
            slices.append(FilterSlice(off, inp, "weight-filter"))
            off += inp
        slices.append(FilterSlice(off, out, "bias"))
        off += out
    return slices


def init_params(spec: ModelSpec, rng: RngStream) -> ParamSet:
    """He-uniform weights, zero biases. Frozen scheme for reproducibility."""
    theta = np.zeros(spec.num_params())
    off = 0
    for out, inp in spec.layer_shapes():
        limit = np.sqrt(6.0 / inp)
        n = out * inp
        theta[off:off + n] = (2.0 * rng.uniform(n) - 1.0) * limit
        off += n + out  # biases stay zero
    return ParamSet(theta, build_partition(spec))


def unpack(spec: ModelSpec, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of theta as per-layer (W [out,in], b [out]) pairs."""
    layers = []
    off = 0
    for out, inp in spec.layer_shapes():
        w = theta[off:off + out * inp].reshape(out, inp)
        off += out * inp
        b = theta[off:off + out]
        off += out
        layers.append((w, b))
    return layers


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


def _forward(spec: ModelSpec, theta: np.ndarray, x: np.ndarray):
    """Returns (logits, cache of pre/post activations per layer)."""
    layers = unpack(spec, theta)
    a = x
    cache = []
    for li, (w, b) in enumerate(layers):
        z = a @ w.T + b
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite activations at layer {li}")
        if li < len(layers) - 1:
            act = _activate(z, spec.activation)
            cache.append((a, z, act))
            a = act
        else:
            cache.append((a, z, z))
    return cache[-1][1], cache


def _smoothed_targets(labels: np.ndarray, num_classes: int, smoothing: float) -> np.ndarray:
    m = labels.shape[0]
    t = np.full((m, num_classes), smoothing / num_classes)
    t[np.arange(m), labels] += 1.0 - smoothing
    return t


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward_loss(spec: ModelSpec, params: ParamSet, batch: Batch, smoothing: float = 0.0) -> float:
    if not 0.0 <= smoothing < 1.0:
        raise ValueError("smoothing must be in [0, 1)")
    logits, _ = _forward(spec, params.theta, batch.inputs)
    targets = _smoothed_targets(batch.labels, spec.num_classes, smoothing)
    return float(-np.sum(targets * _log_softmax(logits)) / batch.inputs.shape[0])


def forward_backward(spec: ModelSpec, params: ParamSet, batch: Batch,
                     smoothing: float = 0.0) -> tuple[float, np.ndarray]:
    """Loss and its exact gradient w.r.t. theta, in one pass."""
    if not 0.0 <= smoothing < 1.0:
        raise ValueError("smoothing must be in [0, 1)")
    theta = params.theta
    m = batch.inputs.shape[0]
    logits, cache = _forward(spec, theta, batch.inputs)
    targets = _smoothed_targets(batch.labels, spec.num_classes, smoothing)
    logp = _log_softmax(logits)
    loss = float(-np.sum(targets * logp) / m)

    grad = np.zeros_like(theta)
    layers = unpack(spec, theta)
    offsets = []
    off = 0
    for out, inp in spec.layer_shapes():
        offsets.append(off)
        off += out * inp + out

    delta = (np.exp(logp) - targets) / m  # dL/dlogits
    for li in range(len(layers) - 1, -1, -1):
        a_in, z, a_out = cache[li]
        w, _ = layers[li]
        out, inp = w.shape
        o = offsets[li]
        grad[o:o + out * inp] = (delta.T @ a_in).ravel()
        grad[o + out * inp:o + out * inp + out] = delta.sum(axis=0)
        if li > 0:
            da = delta @ w
            _, z_prev, a_prev = cache[li - 1]
            delta = da * _activate_grad(z_prev, a_prev, spec.activation)
    return loss, grad


def grad(spec: ModelSpec, params: ParamSet, batch: Batch, smoothing: float = 0.0) -> np.ndarray:
    return forward_backward(spec, params, batch, smoothing)[1]


def filter_max_abs(params: ParamSet, sl: FilterSlice) -> float:
    seg = params.theta[sl.offset:sl.offset + sl.length]
    return float(np.max(np.abs(seg)))


def predict(spec: ModelSpec, params: ParamSet, inputs: np.ndarray) -> np.ndarray:
    logits, _ = _forward(spec, params.theta, inputs)
    # argmax ties break toward the lowest class index
    return np.argmax(logits, axis=1)


def accuracy(spec: ModelSpec, params: ParamSet, batches) -> float:
    correct = 0
    total = 0
    for batch in batches:
        pred = predict(spec, params, batch.inputs)
        correct += int(np.sum(pred == batch.labels))
        total += batch.labels.shape[0]
    if total == 0:
        raise ValueError("accuracy over an empty dataset is undefined")
    return correct / total


def save_checkpoint(path, spec: ModelSpec, params: ParamSet, meta: dict | None = None) -> None:
    """Binary payload: magic, version u32 LE, count u64 LE, float64 LE theta.
    A JSON sidecar (<path>.json) carries the ModelSpec, partition and meta."""
    path = str(path)
    theta = np.ascontiguousarray(params.theta, dtype="<f8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQ", CHECKPOINT_VERSION, theta.size))
        f.write(theta.tobytes())
    sidecar = {
        "model": spec.to_dict(),
        "partition": [[s.offset, s.length, s.kind] for s in params.partition],
        "meta": meta or {},
    }
    with open(path + ".json", "w") as f:
        json.dump(sidecar, f, indent=1)


def load_checkpoint(path) -> tuple[ModelSpec, ParamSet, dict]:
    path = str(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic in {path}")
        version, count = struct.unpack("<IQ", f.read(12))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        payload = f.read(count * 8)
        if len(payload) != count * 8:
            raise ValueError(f"truncated checkpoint {path}")
        theta = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    with open(path + ".json") as f:
        sidecar = json.load(f)
    spec = ModelSpec.from_dict(sidecar["model"])
    partition = [FilterSlice(o, l, k) for o, l, k in sidecar["partition"]]
    return spec, ParamSet(theta, partition), sidecar.get("meta", {})
