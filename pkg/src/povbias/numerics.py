"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the operators the GRU/attention classifiers need are provided. Forward
operations record a node on the active :class:`Tape` (if any); calling
:meth:`Tape.gradient` walks the nodes in reverse and accumulates gradients.

Shapes are strict: apart from adding a bias vector to the last axis of a
matrix, mismatched shapes raise :class:`ShapeError`.
"""

from __future__ import annotations

import contextvars
import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"BLC1"
CHECKPOINT_VERSION = 1

MASK_FILL = -1e30
BCE_EPS = 1e-7


class ShapeError(ValueError):
    pass


class BoundsError(IndexError):
    pass


class NumericFault(FloatingPointError):
    pass


class TapeStateError(RuntimeError):
    pass


class CheckpointFormatError(ValueError):
    pass


class CheckpointIntegrityError(ValueError):
    pass


class Tensor:
    """A float64 array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if type(data) is not np.ndarray or data.dtype != np.float64:
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray, "_Accumulator"], None]


_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "povbias_active_tape", default=None
)


class Tape:
    """Records forward operations; owned by a single training step.

    Use as a context manager::

        with Tape() as tape:
            loss = ...
        grads = tape.gradient(loss, params)
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._token = None
        self._used = False

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def gradient(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` with respect to each of ``params``."""
        if not self.nodes:
            raise TapeStateError("backward called before any forward operation was recorded")
        if self._used:
            raise TapeStateError("tape has already been consumed by a backward pass")
        if loss.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        producers = {id(n.output) for n in self.nodes}
        if id(loss) not in producers:
            raise TapeStateError("loss was not produced on this tape")
        self._used = True
        acc = _Accumulator()
        acc.add(loss, np.ones_like(loss.data))
        for node in reversed(self.nodes):
            g = acc.grads.pop(id(node.output), None)
            if g is None:
                continue
            node.backward(g, acc)
        return [
            acc.grads.get(id(p), np.zeros_like(p.data)) for p in params
        ]


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    return tape.gradient(loss, params)


class _Accumulator:
    def __init__(self):
        self.grads: dict[int, np.ndarray] = {}

    def _slot(self, t: Tensor) -> np.ndarray:
        g = self.grads.get(id(t))
        if g is None:
            g = np.zeros_like(t.data)
            self.grads[id(t)] = g
        return g

    def add(self, t: Tensor, g: np.ndarray) -> None:
        if not _tracks(t):
            return
        slot = self.grads.get(id(t))
        if slot is None:
            self.grads[id(t)] = np.array(g, dtype=np.float64, copy=True)
        else:
            slot += g

    def add_at(self, t: Tensor, index, g: np.ndarray) -> None:
        if not _tracks(t):
            return
        np.add.at(self._slot(t), index, g)


def _tracks(t: Tensor) -> bool:
    return t.requires_grad


def _record(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray, bwd) -> Tensor:
    if not np.isfinite(out_data).all():
        raise NumericFault(f"{op}: non-finite value in forward output")
    tape = _ACTIVE_TAPE.get()
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs and tape is not None)
    if tape is not None and needs:
        tape.record(Node(op, inputs, out, bwd))
    return out


def _shape_error(op: str, *tensors: Tensor) -> ShapeError:
    shapes = " and ".join(str(t.shape) for t in tensors)
    return ShapeError(f"{op}: incompatible shapes {shapes}")


def _bias_compatible(a: Tensor, b: Tensor) -> bool:
    if a.shape == b.shape:
        return True
    return b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]


def _reduce_bias(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.reshape(-1, shape[0]).sum(axis=0)


# ---------------------------------------------------------------------------
# forward primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` where ``b`` is a matrix or a vector contracting ``a``'s last axis."""
    if b.data.ndim not in (1, 2) or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    out = a.data @ b.data
    k = a.shape[-1]

    def bwd(g, acc):
        if b.data.ndim == 2:
            acc.add(a, g @ b.data.T)
            acc.add(b, a.data.reshape(-1, k).T @ g.reshape(-1, b.shape[1]))
        else:
            acc.add(a, g[..., None] * b.data)
            acc.add(b, a.data.reshape(-1, k).T @ np.reshape(g, -1))

    return _record("matmul", (a, b), out, bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise _shape_error("transpose", a)

    def bwd(g, acc):
        acc.add(a, g.T)

    return _record("transpose", (a,), a.data.T.copy(), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a bias vector over ``a``'s last axis."""
    if not _bias_compatible(a, b):
        raise _shape_error("add", a, b)

    def bwd(g, acc):
        acc.add(a, g)
        acc.add(b, _reduce_bias(g, b.shape))

    return _record("add", (a, b), a.data + b.data, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_error("sub", a, b)

    def bwd(g, acc):
        acc.add(a, g)
        acc.add(b, -g)

    return _record("sub", (a, b), a.data - b.data, bwd)


def one_minus(a: Tensor) -> Tensor:
    def bwd(g, acc):
        acc.add(a, -g)

    return _record("one_minus", (a,), 1.0 - a.data, bwd)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_error("hadamard", a, b)

    def bwd(g, acc):
        acc.add(a, g * b.data)
        acc.add(b, g * a.data)

    return _record("hadamard", (a, b), a.data * b.data, bwd)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    ndim = tensors[0].data.ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise _shape_error("concat", *tensors)
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bwd(g, acc):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * ndim
            idx[ax] = slice(lo, hi)
            acc.add(t, g[tuple(idx)])

    return _record("concat", tuple(tensors), np.concatenate([t.data for t in tensors], axis=ax), bwd)


def stack(tensors: Sequence[Tensor], axis: int = -2) -> Tensor:
    """Stack equally shaped tensors along a new axis (default: before the last)."""
    if not tensors:
        raise ShapeError("stack: nothing to stack")
    first = tensors[0].shape
    if any(t.shape != first for t in tensors):
        raise _shape_error("stack", *tensors)
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def bwd(g, acc):
        for i, t in enumerate(tensors):
            acc.add(t, np.take(g, i, axis=ax))

    return _record("stack", tuple(tensors), out, bwd)


def take(a: Tensor, index: int, axis: int) -> Tensor:
    """Select one position along ``axis`` (the axis is removed)."""
    ax = axis % a.data.ndim
    if not 0 <= index < a.shape[ax]:
        raise BoundsError(f"take: index {index} out of range for axis of size {a.shape[ax]}")
    sel = [slice(None)] * a.data.ndim
    sel[ax] = index
    sel = tuple(sel)

    def bwd(g, acc):
        if a.requires_grad:
            acc._slot(a)[sel] += g

    return _record("take", (a,), a.data[sel].copy(), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(g, acc):
        acc.add(a, g.reshape(a.shape))

    return _record("reshape", (a,), out.copy(), bwd)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bwd(g, acc):
        acc.add(a, g * (1.0 - y * y))

    return _record("tanh", (a,), y, bwd)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument never overflows
    ex = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))


def sigmoid(a: Tensor) -> Tensor:
    y = _stable_sigmoid(a.data)

    def bwd(g, acc):
        acc.add(a, g * y * (1.0 - y))

    return _record("sigmoid", (a,), y, bwd)


def gru_cell(xz: Tensor, xr: Tensor, xh: Tensor, h: Tensor, Uz: Tensor, Ur: Tensor, Uh: Tensor, b_h: Tensor) -> Tensor:
    """Fused GRU update given precomputed input projections.

    ``x*`` and ``h`` are ``(..., H)``; recurrent weights ``U*`` are ``(H, H)``
    stored out x in; ``b_h`` sits inside the reset gate.
    """
    H = h.shape[-1]
    if any(t.shape != h.shape for t in (xz, xr, xh)) or any(U.shape != (H, H) for U in (Uz, Ur, Uh)) or b_h.shape != (H,):
        raise _shape_error("gru_cell", xz, h, Uz, b_h)
    hd = h.data
    z = _stable_sigmoid(xz.data + hd @ Uz.data.T)
    r = _stable_sigmoid(xr.data + hd @ Ur.data.T)
    c = hd @ Uh.data.T + b_h.data
    ht = np.tanh(xh.data + r * c)
    out = hd + z * (ht - hd)

    def bwd(g, acc):
        daz = g * (ht - hd) * z * (1.0 - z)
        dah = g * z * (1.0 - ht * ht)
        dc = dah * r
        dar = dah * c * r * (1.0 - r)
        acc.add(xz, daz)
        acc.add(xr, dar)
        acc.add(xh, dah)
        acc.add(h, g * (1.0 - z) + daz @ Uz.data + dar @ Ur.data + dc @ Uh.data)
        h2 = hd.reshape(-1, H)
        acc.add(Uz, daz.reshape(-1, H).T @ h2)
        acc.add(Ur, dar.reshape(-1, H).T @ h2)
        acc.add(Uh, dc.reshape(-1, H).T @ h2)
        acc.add(b_h, dc.reshape(-1, H).sum(axis=0))

    return _record("gru_cell", (xz, xr, xh, h, Uz, Ur, Uh, b_h), out, bwd)


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; positions where ``mask`` is false get exactly 0."""
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"softmax: mask shape {mask.shape} does not match {x.shape}")
        x = x + np.where(mask, 0.0, MASK_FILL)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g, acc):
        acc.add(a, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _record("softmax", (a,), y, bwd)


def gather(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise _shape_error("gather", table)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise BoundsError(
            f"gather: ids must lie in [0, {table.shape[0]}), got range [{ids.min()}, {ids.max()}]"
        )

    def bwd(g, acc):
        acc.add_at(table, ids.reshape(-1), g.reshape(-1, table.shape[1]))

    return _record("gather", (table,), table.data[ids], bwd)


def where(mask, a: Tensor, b: Tensor) -> Tensor:
    """Pick ``a`` where ``mask`` holds and ``b`` elsewhere; mask covers leading axes."""
    if a.shape != b.shape:
        raise _shape_error("where", a, b)
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape[: m.ndim]:
        raise ShapeError(f"where: mask shape {m.shape} does not prefix {a.shape}")
    m = m.reshape(m.shape + (1,) * (a.data.ndim - m.ndim))
    out = np.where(m, a.data, b.data)

    def bwd(g, acc):
        acc.add(a, np.where(m, g, 0.0))
        acc.add(b, np.where(m, 0.0, g))

    return _record("where", (a, b), out, bwd)


def weighted_sum(weights: Tensor, values: Tensor) -> Tensor:
    """Sum of ``values[..., t, :]`` weighted by ``weights[..., t]``."""
    if values.data.ndim != weights.data.ndim + 1 or values.shape[:-1] != weights.shape:
        raise _shape_error("weighted_sum", weights, values)
    out = np.einsum("...t,...th->...h", weights.data, values.data)

    def bwd(g, acc):
        acc.add(weights, np.einsum("...th,...h->...t", values.data, g))
        acc.add(values, weights.data[..., None] * g[..., None, :])

    return _record("weighted_sum", (weights, values), out, bwd)


def total(a: Tensor) -> Tensor:
    def bwd(g, acc):
        acc.add(a, np.broadcast_to(g, a.shape))

    return _record("sum", (a,), np.asarray(a.data.sum()), bwd)


def bce_loss(prediction: Tensor, target) -> Tensor:
    """Mean binary cross-entropy of probabilities against 0/1 targets."""
    y = np.asarray(target, dtype=np.float64)
    if y.shape != prediction.shape:
        raise _shape_error("bce_loss", prediction, Tensor(y))
    p_raw = prediction.data
    p = np.clip(p_raw, BCE_EPS, 1.0 - BCE_EPS)
    n = max(p.size, 1)
    losses = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    inside = (p_raw > BCE_EPS) & (p_raw < 1.0 - BCE_EPS)

    def bwd(g, acc):
        d = (-y / p + (1.0 - y) / (1.0 - p)) / n
        acc.add(prediction, np.where(inside, g * d, 0.0))

    return _record("bce", (prediction,), np.asarray(losses.sum() / n), bwd)


def bce_values(prediction, target) -> np.ndarray:
    """Per-example BCE terms, no tape involvement."""
    p = np.clip(np.asarray(prediction, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(target, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """In-place Adam update with bias correction. Returns ``state`` for chaining."""
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"adam_step: parameter {p.shape} vs gradient {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericFault(f"adam_step: non-finite gradient for {p.name or 'parameter'}")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    elif len(state.first_moment) != len(params) or any(
        m.shape != p.shape for m, p in zip(state.first_moment, params)
    ):
        raise ShapeError("adam_step: optimizer state does not match parameters")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return state


# ---------------------------------------------------------------------------
# checkpoint container


def write_container(path, tensors: Iterable[tuple[str, np.ndarray]], meta: dict | None = None) -> None:
    """Write named float64 arrays plus JSON metadata to the ``BLC1`` container."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors:
        arr = np.asarray(arr, dtype="<f8")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "tensors": entries,
        "data_bytes": offset,
        "meta": meta or {},
    }
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(text)))
        fh.write(text)
        for raw in blobs:
            fh.write(raw)


def read_container(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes {blob[:4]!r}")
    if len(blob) < 12:
        raise CheckpointIntegrityError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", blob[4:12])
    if len(blob) < 12 + n:
        raise CheckpointIntegrityError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[12 : 12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"{path}: unreadable manifest ({exc})") from exc
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"{path}: unsupported format version {manifest.get('format_version')!r}"
        )
    data = blob[12 + n :]
    if len(data) != manifest["data_bytes"]:
        raise CheckpointIntegrityError(
            f"{path}: expected {manifest['data_bytes']} data bytes, found {len(data)}"
        )
    arrays = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 8 * count
        if end > len(data):
            raise CheckpointIntegrityError(f"{path}: tensor {entry['name']} overruns data")
        arrays[entry["name"]] = np.frombuffer(data[start:end], dtype="<f8").reshape(shape).astype(np.float64)
    return arrays, manifest["meta"]
