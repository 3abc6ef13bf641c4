"""Small fully connected feature extractor with hand-written backprop.

Hidden layers use tanh, the output layer is linear. The raw output is
L2-normalized before it meets the fixed cosine head; the raw norm is kept
around because the OOD score scales by it.

Every function accepts a single sample (1-D input) or a batch (2-D input,
one sample per row) and mirrors that shape in its outputs.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError
from .prototypes import PrototypeSet

DEGENERATE_NORM = 1e-12
CHECKPOINT_MAGIC = "# popood-checkpoint v1"


@dataclass
class FeatureExtractor:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]  # weights[l] has shape (layer_dims[l+1], layer_dims[l])
    biases: list[np.ndarray]
    seed: int | None = None

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise InvalidArgumentError("parameter count does not match layer_dims")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[l + 1], self.layer_dims[l]) or b.shape != (self.layer_dims[l + 1],):
                raise InvalidArgumentError(f"layer {l} parameter shapes {w.shape}, {b.shape} do not match layer_dims")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list in the order ``W0, b0, W1, b1, ...``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "FeatureExtractor":
        return copy.deepcopy(self)


@dataclass
class ForwardRecord:
    raw_feature: np.ndarray
    feature_norm: np.ndarray
    unit_feature: np.ndarray
    logits: np.ndarray
    activations: list[np.ndarray] = field(repr=False)  # layer inputs, then raw output
    degenerate: np.ndarray = field(repr=False)
    single: bool = field(default=False, repr=False)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_params(layer_dims, seed: int) -> FeatureExtractor:
    dims = list(layer_dims) if layer_dims is not None else []
    if len(dims) < 2 or any(isinstance(d, bool) or int(d) != d or d < 1 for d in dims):
        raise InvalidArgumentError(f"layer_dims needs at least two positive integers, got {layer_dims!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((int(fan_out), int(fan_in))) / np.sqrt(fan_in))
        biases.append(np.zeros(int(fan_out)))
    return FeatureExtractor(tuple(dims), weights, biases, seed)


def raw_forward(net: FeatureExtractor, inputs) -> tuple[np.ndarray, list[np.ndarray]]:
    """Raw (pre-normalization) output for a batch; also returns each layer's input."""
    a = np.asarray(inputs, dtype=np.float64)
    acts = [a]
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = a @ w.T + b
        if l < last:
            a = np.tanh(a)
        acts.append(a)
    return a, acts


def normalize(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise unit features; degenerate rows become ``e_1`` with norm 0."""
    norm = np.linalg.norm(raw, axis=1)
    degenerate = norm < DEGENERATE_NORM
    safe = np.where(degenerate, 1.0, norm)
    unit = raw / safe[:, None]
    if np.any(degenerate):
        unit[degenerate] = 0.0
        unit[degenerate, 0] = 1.0
        norm = np.where(degenerate, 0.0, norm)
    return unit, norm, degenerate


def forward(net: FeatureExtractor, protos: PrototypeSet, inputs) -> ForwardRecord:
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise InvalidArgumentError(f"input length {x.shape[-1]} != network input dim {net.input_dim}")
    if net.output_dim != protos.dim:
        raise InvalidArgumentError(f"network output dim {net.output_dim} != prototype dim {protos.dim}")
    raw, acts = raw_forward(net, x)
    unit, norm, degenerate = normalize(raw)
    logits = unit @ protos.weights
    if single:
        return ForwardRecord(raw[0], norm[0], unit[0], logits[0], acts, degenerate, True)
    return ForwardRecord(raw, norm, unit, logits, acts, degenerate, False)


def raw_backward(net: FeatureExtractor, activations: list[np.ndarray], raw_grad: np.ndarray) -> Gradients:
    """Backprop a gradient w.r.t. the raw output through all layers (summed over the batch)."""
    if len(activations) != len(net.weights) + 1:
        raise InvalidArgumentError("activation record does not match the network depth")
    delta = np.atleast_2d(raw_grad)
    gw = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        a_in = activations[l]
        gw[l] = delta.T @ a_in
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l]) * (1.0 - a_in**2)
    return Gradients(gw, gb)


def feature_grad(protos: PrototypeSet, record: ForwardRecord, logit_grad) -> np.ndarray:
    """Map dL/dz to dL/d(raw feature) through the head and the normalization Jacobian."""
    g = np.atleast_2d(np.asarray(logit_grad, dtype=np.float64))
    unit = np.atleast_2d(record.unit_feature)
    norm = np.atleast_1d(record.feature_norm)
    du = g @ protos.weights.T
    radial = np.sum(du * unit, axis=1, keepdims=True)
    safe = np.where(record.degenerate, 1.0, norm)[:, None]
    draw = (du - radial * unit) / safe
    draw[record.degenerate] = 0.0
    return draw


def backward(net: FeatureExtractor, protos: PrototypeSet, record: ForwardRecord, logit_grad) -> Gradients:
    """Gradient of ``sum(logit_grad * logits)`` w.r.t. every parameter of ``net``."""
    g = np.atleast_2d(np.asarray(logit_grad, dtype=np.float64))
    logits = np.atleast_2d(record.logits)
    if g.shape != logits.shape:
        raise InvalidArgumentError(f"logit_grad shape {g.shape} != logits shape {logits.shape}")
    if record.activations[0].shape[1] != net.input_dim or np.atleast_2d(record.raw_feature).shape[1] != net.output_dim:
        raise InvalidArgumentError("forward record was produced by a different network")
    return raw_backward(net, record.activations, feature_grad(protos, record, g))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, net: FeatureExtractor, epoch: int = 0) -> None:
    fmt = lambda v: format(float(v), ".17g")  # noqa: E731
    out = [
        CHECKPOINT_MAGIC,
        "# layer_dims " + " ".join(str(d) for d in net.layer_dims),
        f"# seed {'-' if net.seed is None else net.seed}",
        f"# epoch {epoch}",
    ]
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        out.append(f"# weight {l} {w.shape[0]} {w.shape[1]}")
        out.extend(",".join(fmt(v) for v in row) for row in w)
        out.append(f"# bias {l} {b.shape[0]}")
        out.append(",".join(fmt(v) for v in b))
    Path(path).write_text("\n".join(out) + "\n")


def load_checkpoint(path: str | Path) -> tuple[FeatureExtractor, int]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(path, f"cannot read checkpoint: {exc.strerror}") from exc
    if not lines or lines[0].strip() != CHECKPOINT_MAGIC:
        raise FormatError(path, "not a popood checkpoint (bad version header)", 1)
    try:
        dims = tuple(int(t) for t in lines[1].split()[2:])
        seed_tok = lines[2].split()[2]
        seed = None if seed_tok == "-" else int(seed_tok)
        epoch = int(lines[3].split()[2])
    except (IndexError, ValueError):
        raise FormatError(path, "malformed checkpoint header", 2) from None

    pos = 4
    weights, biases = [], []

    def read_rows(count, width):
        nonlocal pos
        rows = []
        for _ in range(count):
            if pos >= len(lines):
                raise FormatError(path, "unexpected end of file", pos)
            cells = lines[pos].split(",")
            if len(cells) != width:
                raise FormatError(path, f"expected {width} values, found {len(cells)}", pos + 1)
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise FormatError(path, "non-numeric value", pos + 1) from None
            pos += 1
        return np.array(rows, dtype=np.float64).reshape(count, width)

    for l in range(len(dims) - 1):
        try:
            _, kind, idx, rows, cols = lines[pos].split()
            assert kind == "weight" and int(idx) == l
        except (ValueError, AssertionError, IndexError):
            raise FormatError(path, f"expected '# weight {l} rows cols'", pos + 1) from None
        pos += 1
        weights.append(read_rows(int(rows), int(cols)))
        try:
            _, kind, idx, n = lines[pos].split()
            assert kind == "bias" and int(idx) == l
        except (ValueError, AssertionError, IndexError):
            raise FormatError(path, f"expected '# bias {l} n'", pos + 1) from None
        pos += 1
        biases.append(read_rows(1, int(n))[0])
    try:
        net = FeatureExtractor(dims, weights, biases, seed)
    except InvalidArgumentError as exc:
        raise FormatError(path, str(exc)) from exc
    return net, epoch
