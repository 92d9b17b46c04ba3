"""
The shared classifier, written directly in numpy.

Two architectures are supported:

* ``conv``: conv(8 filters, 3x3, valid) -> ReLU -> 2x2 max-pool -> dense(10)
* ``dense``: 784 -> 64 -> ReLU -> 10

Parameters travel as one flat float64 vector; :class:`ModelArch` knows how
to slice it into layer tensors.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, InvalidInputError, InvalidParameterError, NumericalDivergenceError

PROB_FLOOR = 1e-12
_EVAL_CHUNK = 512


@dataclass(frozen=True)
class ModelArch:
    kind: str = "conv"
    input_shape: tuple[int, int, int] = (28, 28, 1)
    conv_filters: int = 8
    kernel: int = 3
    pool: int = 2
    hidden: int = 64
    class_count: int = 10

    def __post_init__(self):
        if self.kind not in ("conv", "dense"):
            raise InvalidParameterError(f"unknown architecture kind {self.kind!r}")
        h, w, c = self.input_shape
        if min(h, w, c, self.class_count) < 1:
            raise InvalidParameterError("input and class dimensions must be positive")
        if self.kind == "conv":
            if c != 1:
                raise InvalidParameterError("conv architecture expects a single input channel")
            if (h - self.kernel + 1) % self.pool or (w - self.kernel + 1) % self.pool:
                raise InvalidParameterError("conv output must tile evenly into pooling windows")

    @property
    def input_size(self) -> int:
        h, w, c = self.input_shape
        return h * w * c

    @property
    def pooled_shape(self) -> tuple[int, int, int]:
        h, w, _ = self.input_shape
        k, p = self.kernel, self.pool
        return (h - k + 1) // p, (w - k + 1) // p, self.conv_filters

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        if self.kind == "conv":
            k, f = self.kernel, self.conv_filters
            flat = int(np.prod(self.pooled_shape))
            return [("conv_w", (k * k, f)), ("conv_b", (f,)),
                    ("out_w", (flat, self.class_count)), ("out_b", (self.class_count,))]
        return [("hidden_w", (self.input_size, self.hidden)), ("hidden_b", (self.hidden,)),
                ("out_w", (self.hidden, self.class_count)), ("out_b", (self.class_count,))]

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layer_shapes())

    def unpack(self, values: np.ndarray) -> dict[str, np.ndarray]:
        """Views into ``values`` keyed by layer tensor name."""
        out, start = {}, 0
        for name, shape in self.layer_shapes():
            size = int(np.prod(shape))
            out[name] = values[start:start + size].reshape(shape)
            start += size
        return out

    def fans(self, name: str) -> tuple[int, int]:
        if name == "conv_w":
            return self.kernel**2 * self.input_shape[2], self.kernel**2 * self.conv_filters
        shape = dict(self.layer_shapes())[name]
        return shape[0], shape[1]

    def to_string(self) -> str:
        h, w, c = self.input_shape
        return (f"kind={self.kind};input={h}x{w}x{c};filters={self.conv_filters};kernel={self.kernel};"
                f"pool={self.pool};hidden={self.hidden};classes={self.class_count}")

    @classmethod
    def from_string(cls, text: str) -> "ModelArch":
        try:
            fields = dict(item.split("=", 1) for item in text.split(";"))
            h, w, c = (int(v) for v in fields["input"].split("x"))
            return cls(kind=fields["kind"], input_shape=(h, w, c), conv_filters=int(fields["filters"]),
                       kernel=int(fields["kernel"]), pool=int(fields["pool"]),
                       hidden=int(fields["hidden"]), class_count=int(fields["classes"]))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"unparseable architecture string {text!r}") from exc


@dataclass(frozen=True)
class ModelParams:
    values: np.ndarray
    arch: ModelArch

    def __post_init__(self):
        if self.values.shape != (self.arch.param_count,):
            raise InvalidInputError(
                f"parameter vector has shape {self.values.shape}, arch needs ({self.arch.param_count},)"
            )

    def replace_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(np.asarray(values, dtype=np.float64), self.arch)


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.05
    batch_size: int = 20

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidParameterError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise InvalidParameterError("batch_size must be >= 1")

    def local_steps(self, sample_count: int) -> int:
        return max(1, sample_count // self.batch_size)


@dataclass(frozen=True)
class LocalUpdate:
    node_id: int
    params: ModelParams
    gradient: np.ndarray
    sample_count: int


class EvalMetrics(NamedTuple):
    loss: float
    accuracy: float


def init_model(arch: ModelArch, rng_seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(rng_seed)
    values = np.zeros(arch.param_count)
    layers = arch.unpack(values)
    for name, tensor in layers.items():
        if name.endswith("_w"):
            fan_in, fan_out = arch.fans(name)
            s = math.sqrt(6.0 / (fan_in + fan_out))
            tensor[...] = rng.uniform(-s, s, size=tensor.shape)
    return ModelParams(values, arch)


def _as_images(arch: ModelArch, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    h, w, c = arch.input_shape
    if x.ndim >= 1 and x.shape[1:] in ((h, w), (h, w, c), (h * w * c,)):
        return x.reshape(len(x), h, w, c)
    raise InvalidInputError(f"input batch of shape {x.shape} does not match {arch.input_shape}")


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(params: ModelParams, x: np.ndarray):
    """Returns (probabilities, cache for backprop)."""
    arch, layers = params.arch, params.arch.unpack(params.values)
    n = len(x)
    if arch.kind == "conv":
        k, p = arch.kernel, arch.pool
        patches = sliding_window_view(x[..., 0], (k, k), axis=(1, 2))  # (n, oh, ow, k, k)
        oh, ow = patches.shape[1:3]
        cols = patches.reshape(n * oh * ow, k * k)
        pre = (cols @ layers["conv_w"] + layers["conv_b"]).reshape(n, oh, ow, -1)
        act = np.maximum(pre, 0.0)
        ph, pw, f = arch.pooled_shape
        windows = act.reshape(n, ph, p, pw, p, f).transpose(0, 1, 3, 5, 2, 4).reshape(n, ph, pw, f, p * p)
        arg = windows.argmax(axis=-1)
        pooled = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
        flat = pooled.reshape(n, -1)
        logits = flat @ layers["out_w"] + layers["out_b"]
        cache = (cols, pre, arg, flat)
    else:
        flat_in = x.reshape(n, -1)
        pre = flat_in @ layers["hidden_w"] + layers["hidden_b"]
        hidden = np.maximum(pre, 0.0)
        logits = hidden @ layers["out_w"] + layers["out_b"]
        cache = (flat_in, pre, hidden)
    return _softmax(logits), cache


def _infer(params: ModelParams, x: np.ndarray) -> np.ndarray:
    arch = params.arch
    if arch.kind != "conv":
        return _forward(params, x)[0]
    layers = arch.unpack(params.values)
    n, k, p = len(x), arch.kernel, arch.pool
    patches = sliding_window_view(x[..., 0], (k, k), axis=(1, 2))
    oh, ow = patches.shape[1:3]
    pre = (patches.reshape(n * oh * ow, k * k) @ layers["conv_w"]).reshape(n, oh, ow, -1)
    # max-pool commutes with the per-filter bias and with ReLU, so pool first
    pooled = pre[:, 0::p, 0::p]
    for i in range(p):
        for j in range(p):
            if i or j:
                pooled = np.maximum(pooled, pre[:, i::p, j::p])
    pooled = np.maximum(pooled + layers["conv_b"], 0.0)
    return _softmax(pooled.reshape(n, -1) @ layers["out_w"] + layers["out_b"])


def forward(params: ModelParams, inputs) -> np.ndarray:
    """Class probabilities for a batch of images with pixels in [0, 1]."""
    x = _as_images(params.arch, inputs)
    if len(x) <= _EVAL_CHUNK:
        return _infer(params, x)
    return np.concatenate([_infer(params, x[i:i + _EVAL_CHUNK]) for i in range(0, len(x), _EVAL_CHUNK)])


def cross_entropy_loss(probs, labels) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def loss_and_gradient(params: ModelParams, inputs, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its exact gradient."""
    arch = params.arch
    x = _as_images(arch, inputs)
    labels = np.asarray(labels, dtype=np.int64)
    if len(x) == 0:
        raise InvalidInputError("gradient needs a non-empty batch")
    n = len(x)
    probs, cache = _forward(params, x)
    loss = cross_entropy_loss(probs, labels)
    layers = arch.unpack(params.values)
    grad = np.zeros_like(params.values)
    g = arch.unpack(grad)

    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    # the clamp in the loss is flat below PROB_FLOOR
    clamped = probs[np.arange(n), labels] < PROB_FLOOR
    if np.any(clamped):
        dlogits[clamped] = 0.0

    if arch.kind == "conv":
        cols, pre, arg, flat = cache
        g["out_w"][...] = flat.T @ dlogits
        g["out_b"][...] = dlogits.sum(axis=0)
        ph, pw, f = arch.pooled_shape
        p = arch.pool
        dpooled = (dlogits @ layers["out_w"].T).reshape(n, ph, pw, f)
        dwin = np.zeros((n, ph, pw, f, p * p))
        np.put_along_axis(dwin, arg[..., None], dpooled[..., None], axis=-1)
        dact = dwin.reshape(n, ph, pw, f, p, p).transpose(0, 1, 4, 2, 5, 3).reshape(pre.shape)
        dpre = (dact * (pre > 0)).reshape(-1, f)
        g["conv_w"][...] = cols.T @ dpre
        g["conv_b"][...] = dpre.sum(axis=0)
    else:
        flat_in, pre, hidden = cache
        g["out_w"][...] = hidden.T @ dlogits
        g["out_b"][...] = dlogits.sum(axis=0)
        dpre = (dlogits @ layers["out_w"].T) * (pre > 0)
        g["hidden_w"][...] = flat_in.T @ dpre
        g["hidden_b"][...] = dpre.sum(axis=0)
    return loss, grad


def gradient(params: ModelParams, inputs, labels) -> np.ndarray:
    return loss_and_gradient(params, inputs, labels)[1]


def sgd_step(params: ModelParams, grad: np.ndarray, learning_rate: float) -> ModelParams:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape:
        raise InvalidInputError("gradient and parameter lengths differ")
    if not np.all(np.isfinite(grad)):
        raise NumericalDivergenceError("non-finite gradient entry")
    return params.replace_values(params.values - learning_rate * grad)


def local_train(params: ModelParams, inputs, labels, cfg: SgdConfig, rng: np.random.Generator,
                node_id: int = -1) -> LocalUpdate:
    """One shuffled pass of minibatch SGD over the local data.

    Runs M = floor(n / B) steps (a single full-set step when n < B), then
    reports the full-set gradient at the final parameters.
    """
    x = _as_images(params.arch, inputs)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(x)
    if n == 0:
        raise InvalidInputError("local dataset is empty")
    steps = cfg.local_steps(n)
    batch = min(cfg.batch_size, n)
    order = rng.permutation(n)
    current = params
    for m in range(steps):
        idx = order[m * batch:(m + 1) * batch]
        _, grad = loss_and_gradient(current, x[idx], labels[idx])
        current = sgd_step(current, grad, cfg.learning_rate)
    _, full_grad = loss_and_gradient(current, x, labels)
    return LocalUpdate(node_id=node_id, params=current, gradient=full_grad, sample_count=n)


def evaluate(params: ModelParams, inputs, labels) -> EvalMetrics:
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise InvalidInputError("evaluation set is empty")
    probs = forward(params, inputs)
    accuracy = float(np.mean(probs.argmax(axis=1) == labels))
    return EvalMetrics(cross_entropy_loss(probs, labels), accuracy)


# -- checkpoints ---------------------------------------------------------------------

CHECKPOINT_MAGIC = b"FLCC"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: ModelParams, path) -> None:
    """Header: magic, u32 version, u64 count, u32 arch length + UTF-8 arch; then <f8 values."""
    arch = params.arch.to_string().encode("utf-8")
    header = CHECKPOINT_MAGIC + struct.pack("<IQI", CHECKPOINT_VERSION, params.arch.param_count, len(arch))
    Path(path).write_bytes(header + arch + params.values.astype("<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 20:
        raise FormatError(f"{path}: truncated header")
    version, count, arch_len = struct.unpack("<IQI", raw[4:20])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    arch = ModelArch.from_string(raw[20:20 + arch_len].decode("utf-8"))
    if arch.param_count != count:
        raise FormatError(f"{path}: param_count {count} disagrees with architecture ({arch.param_count})")
    body = raw[20 + arch_len:]
    if len(body) != 8 * count:
        raise FormatError(f"{path}: expected {8 * count} payload bytes, found {len(body)}")
    return ModelParams(np.frombuffer(body, dtype="<f8").astype(np.float64), arch)
