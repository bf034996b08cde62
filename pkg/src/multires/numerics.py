"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and
a closure computing the vector-Jacobian product.  :func:`backward` walks the
resulting graph once in reverse topological order.
"""
from __future__ import annotations

import contextlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit as _sigmoid

DTYPE = np.float64

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when an operation receives incompatible operand shapes."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "op", "_vjp")
    # make ndarray <op> Tensor dispatch to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.op = "leaf"
        self._vjp: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data, parents: Sequence[Tensor], vjp, op: str) -> Tensor:
    out = Tensor(out_data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary(op: str, fn, a: Tensor, b: Tensor) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(_binary("add", np.add, a, b), (a, b),
                   lambda g: (_unbroadcast(g, a.shape) if a.requires_grad else None,
                              _unbroadcast(g, b.shape) if b.requires_grad else None), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(_binary("sub", np.subtract, a, b), (a, b),
                   lambda g: (_unbroadcast(g, a.shape) if a.requires_grad else None,
                              _unbroadcast(-g, b.shape) if b.requires_grad else None), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(_binary("mul", np.multiply, a, b), (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(g * a.data, b.shape) if b.requires_grad else None), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary("div", np.divide, a, b)
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)), "div")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _record(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return _record(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _record(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


# ------------------------------------------------------------------- linear

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions differ, {a.shape} @ {b.shape}") from None

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        if not b.requires_grad:
            return ga, None
        if a.ndim > 2 and b.ndim == 2:
            # shared weight: fold the batch axes into one GEMM
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _record(out, (a, b), vjp, "matmul")


# ------------------------------------------------------------ fused kernels

def gru_step(xz: Tensor, xr: Tensor, xh: Tensor, h: Tensor,
             Uz: Tensor, Ur: Tensor, Uh: Tensor) -> Tensor:
    """One GRU update given input-side pre-activations (bias already added).

    z = sig(xz + h Uz), r = sig(xr + h Ur), c = tanh(xh + (r*h) Uh),
    h' = (1 - z) * h + z * c.
    """
    hd = h.data
    z = _sigmoid(xz.data + hd @ Uz.data)
    r = _sigmoid(xr.data + hd @ Ur.data)
    rh = r * hd
    c = np.tanh(xh.data + rh @ Uh.data)
    out = hd + z * (c - hd)

    def vjp(g):
        dc = g * z * (1.0 - c * c)
        dz = g * (c - hd) * z * (1.0 - z)
        drh = dc @ Uh.data.T
        dr = drh * hd * r * (1.0 - r)
        dh = g * (1.0 - z) + drh * r + dz @ Uz.data.T + dr @ Ur.data.T
        return (dz, dr, dc, dh,
                hd.T @ dz if Uz.requires_grad else None,
                hd.T @ dr if Ur.requires_grad else None,
                rh.T @ dc if Uh.requires_grad else None)

    return _record(out, (xz, xr, xh, h, Uz, Ur, Uh), vjp, "gru_step")


def additive_scores(keys_proj: Tensor, query_proj: Tensor, v: Tensor) -> Tensor:
    """``tanh(keys_proj[b, t] + query_proj[b]) . v`` for every batch row and key."""
    e = np.tanh(keys_proj.data + query_proj.data[:, None, :])
    out = e @ v.data

    def vjp(g):
        dpre = (g[:, :, None] * v.data) * (1.0 - e * e)
        return dpre, dpre.sum(axis=1), np.einsum("bta,bt->a", e, g)

    return _record(out, (keys_proj, query_proj, v), vjp, "additive_scores")


def attention_pool(weights: Tensor, values: Tensor) -> Tensor:
    """``sum_t weights[b, t] * values[b, t]`` -> (B, K)."""
    out = np.einsum("bt,btk->bk", weights.data, values.data)

    def vjp(g):
        return (np.einsum("bk,btk->bt", g, values.data),
                weights.data[:, :, None] * g[:, None, :])

    return _record(out, (weights, values), vjp, "attention_pool")


# --------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(out, (x,), vjp, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), vjp, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), vjp, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm: width {x.shape[-1]} vs gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    n = x.shape[-1]

    def vjp(g):
        gx_hat = g * gain.data
        gx = inv / n * (n * gx_hat - gx_hat.sum(-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        ggain = (g * xhat).reshape(-1, n).sum(0)
        gbias = g.reshape(-1, n).sum(0)
        return gx, ggain, gbias

    return _record(out, (x, gain, bias), vjp, "layer_norm")


# ------------------------------------------------------------------- shaping

def reshape(x: Tensor, shape) -> Tensor:
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inverse = np.argsort(axes)
    return _record(np.transpose(x.data, axes), (x,),
                   lambda g: (np.transpose(g, inverse),), "transpose")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]} on axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return _record(out, xs, lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    if len({t.shape for t in xs}) != 1:
        raise ShapeError(f"stack: shapes differ {[t.shape for t in xs]}")
    out = np.stack([t.data for t in xs], axis=axis)
    return _record(out, xs,
                   lambda g: tuple(np.moveaxis(g, axis, 0)), "stack")


def _is_fancy(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (np.ndarray, list)) for p in parts)


def getitem(x: Tensor, index) -> Tensor:
    fancy = _is_fancy(index)

    def vjp(g):
        full = np.zeros_like(x.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _record(x.data[index], (x,), vjp, "slice")


def embedding_lookup(weights: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weights.shape[0]):
        raise IndexError(f"embedding: id out of range [0, {weights.shape[0]})")

    def vjp(g):
        full = np.zeros_like(weights.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weights.shape[1]))
        return (full,)

    return _record(weights.data[ids], (weights,), vjp, "embedding")


def take_last(x: Tensor, ids) -> Tensor:
    """Pick ``x[..., ids[...]]`` along the last axis (one entry per row)."""
    ids = np.asarray(ids, dtype=np.int64)
    lead = np.indices(ids.shape)
    index = tuple(lead) + (ids,)
    return getitem(x, index)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return _record(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def where_mask(x: Tensor, keep: np.ndarray, fill: float) -> Tensor:
    """Replace entries where ``keep`` is false with a constant."""
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), x.shape)
    return _record(np.where(keep, x.data, fill), (x,), lambda g: (g * keep,), "mask")


# ------------------------------------------------------------------ backward

@dataclass
class Graph:
    """Nodes reachable from an output, in topological order (inputs first)."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack_: list[tuple[Tensor, bool]] = [(out, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node.parents:
                if id(p) not in seen and p.requires_grad:
                    stack_.append((p, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    graph = Graph.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = set()  # buffers created here, safe to update in place
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key not in grads:
                grads[key] = pg
            elif key in owned:
                grads[key] += pg
            else:
                grads[key] = grads[key] + pg
                owned.add(key)


# ---------------------------------------------------------------- parameters

def parameter(shape, fan_in: int | None, rng: np.random.Generator) -> Tensor:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); zeros when ``fan_in`` is None."""
    if fan_in is None:
        return Tensor(np.zeros(shape), requires_grad=True)
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0 or not (0 < self.beta1 < 1) or not (0 < self.beta2 < 1):
            raise ValueError("AdamState needs lr > 0 and betas in (0, 1)")

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kw) -> "AdamState":
        st = cls(**kw)
        st.m = [np.zeros_like(p.data) for p in params]
        st.v = [np.zeros_like(p.data) for p in params]
        return st


def adam_step(params: Sequence[Tensor], state: AdamState, names: Sequence[str] | None = None) -> None:
    """One bias-corrected Adam update in place; gradients are left untouched."""
    if len(state.m) != len(params):
        raise ValueError(f"AdamState tracks {len(state.m)} params, got {len(params)}")
    for i, p in enumerate(params):
        if p.grad is None:
            name = names[i] if names else f"#{i}"
            raise ValueError(f"adam_step: parameter {name} has no gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_schedule(initial_lr: float, epoch: int, half_period: int) -> float:
    """Step decay: halve the rate every ``half_period`` epochs."""
    if half_period <= 0 or epoch < 0:
        raise ValueError("lr_schedule needs half_period > 0 and epoch >= 0")
    return initial_lr * 0.5 ** (epoch // half_period)


# --------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"MRCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``{name: array}`` as: magic+version line, JSON index line, raw float64 LE."""
    names = sorted(params)
    index, offset = [], 0
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = json.dumps({"params": index, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + f" {CHECKPOINT_VERSION}\n".encode())
        fh.write(header + b"\n")
        for name in names:
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        first = fh.readline()
        if not first.startswith(CHECKPOINT_MAGIC):
            raise ValueError(f"{path}: not a checkpoint file")
        version = int(first.split()[1])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.readline())
        flat = np.frombuffer(fh.read(), dtype="<f8")
    out = {}
    for entry in header["params"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        out[entry["name"]] = flat[start:start + n].reshape(entry["shape"]).astype(DTYPE)
    return out, header["meta"]


# ------------------------------------------------------------ gradient check

def numerical_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5) -> float:
    """Largest relative error between backprop and finite differences over ``params``."""
    params = list(params)
    for p in params:
        p.grad = None
    backward(loss_fn())
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = numerical_grad(lambda: loss_fn().item(), p.data, h)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst
