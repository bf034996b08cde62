"""Multi-label activity classifiers over BiGRU features.

Two heads share the extractor: binary relevance on the time-averaged
feature ("bn"), and Query2Label ("q2l") where learned label queries pass
through transformer decoder layers attending over the BiGRU outputs.
Inputs are either hard token ids or per-step distributions over the same
vocabulary (expected embeddings), which is how Seq2Res output is consumed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .data import PAD
from .layers import BiGRU, Dropout, Embedding, LayerNorm, Linear, Module, TransformerDecoderLayer
from .numerics import Tensor
from .seq2res import Generation, Seq2ResModel, seq2res_generate

HEADS = ("bn", "q2l")


@dataclass
class ClassifierConfig:
    head: str = "q2l"
    embed: int = 128
    hidden: int = 128
    layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    dropout: float = 0.3
    threshold: float = 0.7

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")


@dataclass
class LabelPrediction:
    probs: np.ndarray
    predicted_set: frozenset[int]

    @classmethod
    def from_probs(cls, probs: np.ndarray, threshold: float) -> "LabelPrediction":
        probs = np.asarray(probs)
        return cls(probs, frozenset(int(i) for i in np.flatnonzero(probs > threshold)))


class ClassifierModel(Module):
    def __init__(self, vocab_size: int, n_labels: int, config: ClassifierConfig | None = None,
                 rng: np.random.Generator | None = None):
        config = config or ClassifierConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.vocab_size, self.n_labels = vocab_size, n_labels
        self.embed = Embedding(vocab_size, config.embed, rng)
        self.drop = Dropout(config.dropout)
        self.encoder = BiGRU(config.embed, config.hidden, rng)
        d = self.encoder.output_dim
        if config.head == "bn":
            self.head = Linear(d, n_labels, rng)
        else:
            self.label_embed = nx.parameter((n_labels, d), 1, rng)
            self.decoder = [TransformerDecoderLayer(d, config.heads, rng, config.ffn_mult, config.dropout)
                            for _ in range(config.layers)]
            self.final_norm = LayerNorm(d)
            self.label_W = nx.parameter((n_labels, d), d, rng)
            self.label_b = nx.parameter((n_labels,), None, rng)

    def features(self, x: Tensor, mask: np.ndarray | None) -> Tensor:
        outputs, _ = self.encoder(self.drop(x), mask)
        return outputs

    def logits_from_embedded(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        feats = self.features(x, mask)
        B, T, d = feats.shape
        if self.config.head == "bn":
            if mask is None:
                pooled = nx.mean(feats, axis=1)
            else:
                m = np.asarray(mask, dtype=nx.DTYPE)
                pooled = nx.sum(feats * m[:, :, None], axis=1) * (1.0 / m.sum(1, keepdims=True))
            return self.head(self.drop(pooled))
        q = nx.add(Tensor(np.zeros((B, 1, 1))), self.label_embed)
        for layer in self.decoder:
            q = layer(q, feats, mask)
        q = self.final_norm(q)
        return nx.sum(q * self.label_W, axis=-1) + self.label_b

    def logits(self, ids: np.ndarray | None = None, soft: np.ndarray | None = None,
               mask: np.ndarray | None = None) -> Tensor:
        """Exactly one of ``ids`` (B, T) or ``soft`` (B, T, V) must be given."""
        if (ids is None) == (soft is None):
            raise ValueError("pass either token ids or soft distributions")
        if ids is not None:
            ids = np.asarray(ids)
            if ids.shape[1] == 0:
                raise ValueError("empty input sequence")
            if mask is None:
                mask = ids != PAD
            x = self.embed(ids)
        else:
            x = soft_embed(soft, self.embed)
            if x.shape[1] == 0:
                raise ValueError("empty input sequence")
        if mask is not None and np.asarray(mask).all():
            mask = None
        return self.logits_from_embedded(x, mask)

    def probs(self, **kw) -> Tensor:
        return nx.sigmoid(self.logits(**kw))


def _predict(model: ClassifierModel, **kw) -> LabelPrediction:
    was_training = model.training
    model.eval()
    with nx.no_grad():
        p = model.probs(**kw).data[0]
    model.train(was_training)
    return LabelPrediction.from_probs(p, model.config.threshold)


def classify_bn(model: ClassifierModel, token_ids) -> LabelPrediction:
    if model.config.head != "bn":
        raise ValueError("classify_bn needs a binary-relevance model")
    return _predict(model, ids=np.asarray([token_ids]))


def classify_q2l(model: ClassifierModel, token_ids) -> LabelPrediction:
    if model.config.head != "q2l":
        raise ValueError("classify_q2l needs a Query2Label model")
    return _predict(model, ids=np.asarray([token_ids]))


def classify(model: ClassifierModel, token_ids) -> LabelPrediction:
    return _predict(model, ids=np.asarray([token_ids]))


def bce_loss(probs: Tensor, targets, eps: float = 1e-7) -> Tensor:
    """Mean binary cross entropy; probabilities are clamped to [eps, 1 - eps]."""
    probs = nx.as_tensor(probs)
    p = probs.data
    if not np.all((p >= 0.0) & (p <= 1.0)):
        raise ValueError("bce_loss: probabilities must lie in [0, 1]")
    y = np.asarray(targets, dtype=nx.DTYPE)
    pc = nx.clip(probs, eps, 1.0 - eps)
    ll = nx.log(pc) * y + nx.log(1.0 - pc) * (1.0 - y)
    return nx.mean(ll) * -1.0


def soft_embed(prob_vectors, embedding: Embedding) -> Tensor:
    """Expected embedding ``P @ E`` for distributions over the embedding's vocabulary."""
    p = nx.as_tensor(prob_vectors)
    if p.shape[-1] != embedding.vocab_size:
        raise ValueError(f"soft_embed: distributions over {p.shape[-1]} tokens, "
                         f"embedding has {embedding.vocab_size}")
    return p @ embedding.weights


def classifier_rows(gen: Generation) -> np.ndarray:
    """Seq2Res distributions fed to the classifier: everything but the closing EOS."""
    return gen.probs if gen.truncated else gen.probs[:-1]


def pad_soft(rows: list[np.ndarray], vocab_size: int) -> tuple[np.ndarray, np.ndarray]:
    T = max(len(r) for r in rows)
    soft = np.zeros((len(rows), T, vocab_size))
    mask = np.zeros((len(rows), T), dtype=bool)
    for i, r in enumerate(rows):
        soft[i, :len(r)] = r
        mask[i, :len(r)] = True
    return soft, mask


def run_two_stage(sep_model: Seq2ResModel, cls_model: ClassifierModel, token_ids) -> LabelPrediction:
    """Separate with Seq2Res, then classify its distributions as one sequence."""
    if sep_model.vocab_size != cls_model.vocab_size:
        raise ValueError("separation and classifier vocabularies differ")
    gen = seq2res_generate(sep_model, token_ids)
    rows = classifier_rows(gen)
    return _predict(cls_model, soft=rows[None])
