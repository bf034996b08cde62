"""Neural building blocks on top of :mod:`multires.numerics`.

Shapes use a leading batch axis: sequences are ``(B, T, D)``, hidden states
``(B, H)``.  Weight matrices are stored ``(in, out)`` so that a layer computes
``x @ W + b``.
"""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import numerics as nx
from .numerics import ShapeError, Tensor


class Module:
    """Container that discovers parameters and sub-modules from its attributes."""

    training = False
    rng: np.random.Generator | None = None

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, sub in enumerate(value):
                    yield from sub.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for sub in value:
                    yield from sub.modules()

    def train(self, mode: bool = True, rng: np.random.Generator | None = None) -> "Module":
        for m in self.modules():
            m.training = mode
            if rng is not None:
                m.rng = rng
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=nx.DTYPE)


class Dropout(Module):
    def __init__(self, rate: float):
        self.rate = rate

    def __call__(self, x: Tensor) -> Tensor:
        return nx.dropout(x, self.rate, self.rng, self.training)


class Embedding(Module):
    """Token table; rows are initialised as if each id were a one-hot input (fan-in 1)."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        self.vocab_size = vocab_size
        self.dim = dim
        self.weights = nx.parameter((vocab_size, dim), 1, rng)

    def __call__(self, ids) -> Tensor:
        return embed(ids, self)


def embed(ids, table: Embedding) -> Tensor:
    return nx.embedding_lookup(table.weights, ids)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.W = nx.parameter((n_in, n_out), n_in, rng)
        self.b = nx.parameter((n_out,), None, rng) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.W.shape[0]:
            raise ShapeError(f"linear: input width {x.shape[-1]} != {self.W.shape[0]}")
        y = x @ self.W
        return y + self.b if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.gain, self.bias)


# ------------------------------------------------------------------------ GRU

class GRUCell(Module):
    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        # fan-in is the hidden size for every gate matrix, as in common recurrent layers
        for gate in "zrh":
            setattr(self, f"W_{gate}", nx.parameter((input_dim, hidden_dim), hidden_dim, rng))
            setattr(self, f"U_{gate}", nx.parameter((hidden_dim, hidden_dim), hidden_dim, rng))
            setattr(self, f"b_{gate}", nx.parameter((hidden_dim,), None, rng))

    def project_inputs(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Input-side gate pre-activations ``(x W_z + b_z, x W_r + b_r, x W_h + b_h)``."""
        if x.shape[-1] != self.input_dim:
            raise ShapeError(f"gru: input width {x.shape[-1]} != {self.input_dim}")
        return x @ self.W_z + self.b_z, x @ self.W_r + self.b_r, x @ self.W_h + self.b_h

    def step(self, xz: Tensor, xr: Tensor, xh: Tensor, h: Tensor) -> Tensor:
        return nx.gru_step(xz, xr, xh, h, self.U_z, self.U_r, self.U_h)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        if h.shape[-1] != self.hidden_dim:
            raise ShapeError(f"gru: hidden width {h.shape[-1]} != {self.hidden_dim}")
        return self.step(*self.project_inputs(x), h)


def gru_cell(x: Tensor, h_prev: Tensor, p: GRUCell) -> Tensor:
    """h' = (1 - z) * h + z * tanh(W_h x + U_h (r * h) + b_h)."""
    return p(x, h_prev)


def _run_direction(cell: GRUCell, x: Tensor, mask: np.ndarray | None, reverse: bool) -> list[Tensor]:
    B, T, _ = x.shape
    xz, xr, xh = cell.project_inputs(x)
    h = Tensor(np.zeros((B, cell.hidden_dim)))
    out: list[Tensor | None] = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        h_new = cell.step(xz[:, t], xr[:, t], xh[:, t], h)
        if mask is not None:
            m = mask[:, t:t + 1]
            h_new = h + (h_new - h) * m
        h = h_new
        out[t] = h
    return out


class BiGRU(Module):
    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.fwd = GRUCell(input_dim, hidden_dim, rng)
        self.bwd = GRUCell(input_dim, hidden_dim, rng)

    @property
    def output_dim(self) -> int:
        return 2 * self.fwd.hidden_dim

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        return bigru_encode(x, self.fwd, self.bwd, mask)


def bigru_encode(x_seq: Tensor, fwd: GRUCell, bwd: GRUCell,
                 mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Run both directions from zero state.

    ``x_seq`` is ``(B, T, D)``; ``mask`` (optional, ``(B, T)``) marks valid
    prefix positions.  Padded steps carry the previous state, so the forward
    state at ``T - 1`` is the state at the last valid token.  Returns outputs
    ``(B, T, 2H)`` and the context ``concat(h_fwd[T-1], h_bwd[0])``.
    """
    if x_seq.ndim != 3 or x_seq.shape[1] == 0:
        raise ValueError("bigru_encode: empty sequence")
    if mask is not None:
        mask = np.asarray(mask, dtype=nx.DTYPE)
        if mask.all():
            mask = None
    hf = _run_direction(fwd, x_seq, mask, reverse=False)
    hb = _run_direction(bwd, x_seq, mask, reverse=True)
    outputs = nx.concat([nx.stack(hf, axis=1), nx.stack(hb, axis=1)], axis=-1)
    context = nx.concat([hf[-1], hb[0]], axis=-1)
    return outputs, context


# ------------------------------------------------------------------ attention

class BahdanauAttention(Module):
    """Additive attention: score_k = v . tanh(W q + U key_k + b)."""

    def __init__(self, query_dim: int, key_dim: int, attn_dim: int, rng: np.random.Generator):
        self.W = nx.parameter((query_dim, attn_dim), query_dim, rng)
        self.U = nx.parameter((key_dim, attn_dim), key_dim, rng)
        self.b = nx.parameter((attn_dim,), None, rng)
        self.v = nx.parameter((attn_dim,), attn_dim, rng)

    def project_keys(self, keys: Tensor) -> Tensor:
        return keys @ self.U + self.b

    def attend(self, query: Tensor, keys: Tensor, projected: Tensor,
               mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        scores = nx.additive_scores(projected, query @ self.W, self.v)
        if mask is not None and not np.all(mask):
            scores = nx.where_mask(scores, mask, -1e30)
        weights = nx.softmax(scores, axis=-1)
        return nx.attention_pool(weights, keys), weights

    def __call__(self, query: Tensor, keys: Tensor, mask=None) -> tuple[Tensor, Tensor]:
        return self.attend(query, keys, self.project_keys(keys), mask)


def bahdanau_attend(query: Tensor, keys_values: Tensor, p: BahdanauAttention,
                    mask=None) -> tuple[Tensor, Tensor]:
    if keys_values.shape[1] == 0:
        raise ValueError("bahdanau_attend: no keys")
    return p(query, keys_values, mask)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"{heads} heads do not divide model width {dim}")
        self.dim, self.heads = dim, heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.o = Linear(dim, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        return nx.transpose(nx.reshape(x, (B, T, self.heads, -1)), (0, 2, 1, 3))

    def __call__(self, query: Tensor, memory: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """``query`` (B, L, d) attends over ``memory`` (B, T, d); ``mask`` (B, T) marks valid keys."""
        B, L, _ = query.shape
        q, k, v = self._split(self.q(query)), self._split(self.k(memory)), self._split(self.v(memory))
        scores = (q @ nx.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.dim // self.heads))
        if mask is not None:
            scores = nx.where_mask(scores, np.asarray(mask, bool)[:, None, None, :], -1e30)
        attn = nx.softmax(scores, axis=-1)
        out = nx.reshape(nx.transpose(attn @ v, (0, 2, 1, 3)), (B, L, self.dim))
        return self.o(out)


class TransformerDecoderLayer(Module):
    """Pre-norm block: self-attention, cross-attention, feed-forward, each residual."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 ffn_mult: int = 4, dropout: float = 0.0):
        self.dim = dim
        self.norm_self = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.norm_cross = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, rng)
        self.norm_ffn = LayerNorm(dim)
        self.ffn_in = Linear(dim, ffn_mult * dim, rng)
        self.ffn_out = Linear(ffn_mult * dim, dim, rng)
        self.drop = Dropout(dropout)

    def __call__(self, labels: Tensor, features: Tensor, mask=None) -> Tensor:
        return transformer_decoder_layer(labels, features, self, mask)


def transformer_decoder_layer(labels: Tensor, features: Tensor, p: TransformerDecoderLayer,
                              mask=None) -> Tensor:
    if labels.shape[-2] == 0:
        raise ValueError("transformer_decoder_layer: no label queries")
    if labels.shape[-1] != p.dim or features.shape[-1] != p.dim:
        raise ShapeError(f"decoder layer width {p.dim}: labels {labels.shape}, features {features.shape}")
    x = labels
    h = p.norm_self(x)
    x = x + p.drop(p.self_attn(h, h))
    x = x + p.drop(p.cross_attn(p.norm_cross(x), features, mask))
    x = x + p.drop(p.ffn_out(nx.relu(p.ffn_in(p.norm_ffn(x)))))
    return x
