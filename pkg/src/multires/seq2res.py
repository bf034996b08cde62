"""Generative resident separation.

A BiGRU encoder reads the mixed window; a GRU decoder with additive
attention emits ``resident-1 events, EOS, SOS, resident-2 events, EOS``.
The decoder starts from the encoder context and never resets its state
between the two segments.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .data import EOS, PAD, SOS, validate_separation_target
from .layers import BahdanauAttention, BiGRU, Dropout, Embedding, GRUCell, Linear, Module
from .numerics import Tensor


@dataclass
class Seq2ResConfig:
    enc_embed: int = 128
    enc_hidden: int = 128
    dec_embed: int = 256
    enc_dropout: float = 0.1
    dec_dropout: float = 0.4

    @property
    def dec_hidden(self) -> int:
        return 2 * self.enc_hidden


class Seq2ResModel(Module):
    def __init__(self, vocab_size: int, config: Seq2ResConfig | None = None,
                 rng: np.random.Generator | None = None):
        config = config or Seq2ResConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.vocab_size = vocab_size
        H = config.dec_hidden
        self.enc_embed = Embedding(vocab_size, config.enc_embed, rng)
        self.enc_drop = Dropout(config.enc_dropout)
        self.encoder = BiGRU(config.enc_embed, config.enc_hidden, rng)
        self.dec_embed = Embedding(vocab_size, config.dec_embed, rng)
        self.dec_drop = Dropout(config.dec_dropout)
        self.attention = BahdanauAttention(H, self.encoder.output_dim, H, rng)
        self.decoder = GRUCell(config.dec_embed + self.encoder.output_dim, H, rng)
        self.out = Linear(H, vocab_size, rng)

    def encode(self, input_ids: np.ndarray):
        ids = np.asarray(input_ids)
        mask = ids != PAD
        x = self.enc_drop(self.enc_embed(ids))
        outputs, context = self.encoder(x, mask)
        return outputs, context, self.attention.project_keys(outputs), mask

    def decode_step(self, tokens: np.ndarray, h: Tensor, enc_out: Tensor, projected: Tensor,
                    mask: np.ndarray) -> tuple[Tensor, Tensor]:
        ctx, _ = self.attention.attend(h, enc_out, projected, mask)
        x = nx.concat([self.dec_drop(self.dec_embed(tokens)), ctx], axis=-1)
        h = self.decoder(x, h)
        return self.out(h), h


def teacher_forced_logits(model: Seq2ResModel, input_ids: np.ndarray, targets: np.ndarray) -> Tensor:
    """Logits ``(B, S, V)`` when the decoder is fed SOS followed by the gold prefix."""
    targets = np.asarray(targets)
    B, S = targets.shape
    enc_out, h, projected, mask = model.encode(input_ids)
    dec_in = np.concatenate([np.full((B, 1), SOS), targets[:, :-1]], axis=1)
    steps = []
    for t in range(S):
        logits, h = model.decode_step(dec_in[:, t], h, enc_out, projected, mask)
        steps.append(logits)
    return nx.stack(steps, axis=1)


def sequence_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean token cross entropy over non-PAD targets."""
    targets = np.asarray(targets)
    keep = (targets != PAD).astype(nx.DTYPE)
    n = keep.sum()
    if n == 0:
        raise ValueError("no non-PAD target tokens")
    picked = nx.take_last(nx.log_softmax(logits, axis=-1), targets)
    return nx.sum(picked * keep) * (-1.0 / n)


def forward_teacher_batch(model: Seq2ResModel, input_ids: np.ndarray, targets: np.ndarray):
    logits = teacher_forced_logits(model, input_ids, targets)
    return logits, sequence_cross_entropy(logits, targets)


def seq2res_forward_teacher(model: Seq2ResModel, input_ids, target) -> tuple[Tensor, Tensor]:
    """Single pair: logits ``(T, V)`` and mean cross entropy."""
    validate_separation_target(target)
    logits, loss = forward_teacher_batch(model, np.asarray([input_ids]), np.asarray([target]))
    return logits[0], loss


def token_accuracy(model: Seq2ResModel, input_ids: np.ndarray, targets: np.ndarray) -> float:
    """Teacher-forced argmax accuracy over non-PAD positions (eval mode)."""
    was_training = model.training
    model.eval()
    with nx.no_grad():
        logits = teacher_forced_logits(model, input_ids, targets).data
    model.train(was_training)
    keep = np.asarray(targets) != PAD
    return float((logits.argmax(-1) == targets)[keep].mean())


@dataclass
class Generation:
    tokens: list[int]
    probs: np.ndarray  # (len(tokens), V), one distribution per emitted token
    truncated: bool


def generate_batch(model: Seq2ResModel, input_ids: np.ndarray, max_len: int | None = None) -> list[Generation]:
    """Greedy decoding.  After the first EOS an SOS is forced (one-hot row);
    decoding stops at the second EOS or after ``max_len`` emitted tokens."""
    input_ids = np.asarray(input_ids)
    B, W = input_ids.shape
    max_len = W + 3 if max_len is None else max_len
    if max_len < 3:
        raise ValueError("max_len must be at least 3")
    V = model.vocab_size
    was_training = model.training
    model.eval()
    tokens = [[] for _ in range(B)]
    probs = [[] for _ in range(B)]
    eos_seen = np.zeros(B, dtype=int)
    done = np.zeros(B, dtype=bool)
    with nx.no_grad():
        enc_out, h, projected, mask = model.encode(input_ids)
        prev = np.full(B, SOS)
        for _ in range(max_len):
            logits, h = model.decode_step(prev, h, enc_out, projected, mask)
            p = nx.softmax(logits, axis=-1).data
            nxt = p.argmax(-1)  # lowest id wins ties
            for b in range(B):
                if done[b]:
                    continue
                if eos_seen[b] == 1 and tokens[b][-1] == EOS:
                    nxt[b] = SOS
                    row = np.zeros(V)
                    row[SOS] = 1.0
                else:
                    row = p[b]
                tokens[b].append(int(nxt[b]))
                probs[b].append(row)
                if nxt[b] == EOS:
                    eos_seen[b] += 1
                    done[b] = eos_seen[b] == 2
            prev = nxt
            if done.all():
                break
    model.train(was_training)
    return [Generation(tokens[b], np.array(probs[b]), not done[b]) for b in range(B)]


def seq2res_generate(model: Seq2ResModel, input_ids, max_len: int | None = None) -> Generation:
    return generate_batch(model, np.asarray([input_ids]), max_len)[0]


def format_generation(tokens, itos) -> str:
    """Decoded event names, one instance per line; segments read ``... EOS SOS ...``."""
    return " ".join(itos[t] for t in tokens)
