"""Prefix-LM transformer encoder with masked multi-head self-attention,
a shared token-prediction head, and optional question-type infusion.

The question block attends bidirectionally while summary positions decode
left-to-right, all controlled by one additive visibility matrix. Explicit
infusion adds a learned per-type embedding row to every hidden state before
the prediction head; implicit infusion derives a type representation from the
[CLS] state with an auxiliary classification head and folds it back into the
hidden states the same way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import NUM_QUESTION_TYPES

INIT_STD = 0.02
FF_MULT = 4

QTA_MODES = ("none", "explicit", "implicit")


@dataclass
class ModelConfig:
    """Architecture hyperparameters; ``tiny()`` is the preset used by oracles."""

    vocab_size: int
    layers: int = 4
    hidden: int = 384
    heads: int = 12
    max_positions: int = 128
    qta_mode: str = "none"
    dropout: float = 0.0
    num_types: int = NUM_QUESTION_TYPES

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.qta_mode not in QTA_MODES:
            raise ValueError(f"qta_mode must be one of {QTA_MODES}, got {self.qta_mode!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @classmethod
    def tiny(cls, vocab_size: int, **kwargs) -> "ModelConfig":
        kwargs.setdefault("layers", 2)
        kwargs.setdefault("hidden", 8)
        kwargs.setdefault("heads", 2)
        kwargs.setdefault("max_positions", 64)
        return cls(vocab_size=vocab_size, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Fresh parameters: normal(0, 0.02) matrices, zero biases, unit norm gains."""
    d = config.hidden
    params: dict[str, Tensor] = {}

    def matrix(name, rows, cols):
        params[name] = Tensor(rng.normal(0.0, INIT_STD, size=(rows, cols)),
                              requires_grad=True)

    def vector(name, size, value=0.0):
        params[name] = Tensor(np.full(size, value, dtype=np.float64),
                              requires_grad=True)

    matrix("tok_emb", config.vocab_size, d)
    matrix("pos_emb", config.max_positions, d)
    matrix("seg_emb", 2, d)
    for i in range(config.layers):
        prefix = f"layer{i}."
        vector(prefix + "ln1_g", d, 1.0)
        vector(prefix + "ln1_b", d)
        matrix(prefix + "wq", d, d)
        matrix(prefix + "wk", d, d)
        matrix(prefix + "wv", d, d)
        matrix(prefix + "wo", d, d)
        vector(prefix + "bo", d)
        vector(prefix + "ln2_g", d, 1.0)
        vector(prefix + "ln2_b", d)
        matrix(prefix + "ff1_w", d, FF_MULT * d)
        vector(prefix + "ff1_b", FF_MULT * d)
        matrix(prefix + "ff2_w", FF_MULT * d, d)
        vector(prefix + "ff2_b", d)
    vector("lnf_g", d, 1.0)
    vector("lnf_b", d)
    matrix("head_w", d, d)
    vector("head_bt", d)
    matrix("head_u", d, config.vocab_size)
    vector("head_bp", config.vocab_size)
    if config.qta_mode == "explicit":
        matrix("type_emb", config.num_types, d)
    elif config.qta_mode == "implicit":
        matrix("qt_w", d, d)
        vector("qt_bh", d)
        matrix("qt_u", d, config.num_types)
        vector("qt_bc", config.num_types)
    return params


def param_count(params: dict[str, Tensor]) -> int:
    return sum(p.data.size for p in params.values())


def infuse_explicit(h: Tensor, type_emb: Tensor, type_index: int) -> Tensor:
    """Add one type-embedding row to every hidden state and squash with tanh."""
    if not 0 <= type_index < type_emb.data.shape[0]:
        raise IndexError(f"type index {type_index} out of range "
                         f"[0, {type_emb.data.shape[0]})")
    row = ad.slice_rows(type_emb, type_index, type_index + 1)
    return ad.tanh(ad.add(h, row))


def qtype_head(h0: Tensor, w: Tensor, b_h: Tensor, u: Tensor, b_c: Tensor
               ) -> tuple[Tensor, Tensor]:
    """Class distribution over question types from the [CLS] hidden state.

    Returns ``(probabilities, type_hidden)``; the type hidden state is what
    implicit infusion folds back into the sequence.
    """
    hidden = ad.tanh(ad.add(ad.matmul(h0, w), b_h))
    probs = ad.softmax_rows(ad.add(ad.matmul(hidden, u), b_c))
    return probs, hidden


@dataclass
class ForwardResult:
    hidden: Tensor
    logits: Tensor
    qtype_logits: Tensor | None = None


def forward(config: ModelConfig, params: dict[str, Tensor],
            ids: Sequence[int], segments: Sequence[int], mask: np.ndarray,
            qtype: int | None = None,
            dropout_rng: np.random.Generator | None = None,
            attn_out: list[np.ndarray] | None = None) -> ForwardResult:
    """Run the full encoder and prediction head over one packed sequence.

    ``mask`` is the additive visibility matrix shared by every attention head.
    Explicit mode requires ``qtype``; implicit mode also returns pre-softmax
    type logits computed from the [CLS] state. Pass ``attn_out`` to collect
    each head's attention distribution.
    """
    n = len(ids)
    if n > config.max_positions:
        raise ValueError(f"sequence of {n} tokens exceeds max_positions="
                         f"{config.max_positions}")
    if mask.shape != (n, n):
        raise ad.ShapeError(f"mask shape {mask.shape} does not match length {n}")
    if config.qta_mode == "explicit" and qtype is None:
        raise ValueError("explicit question-type mode requires a qtype index")
    if config.qta_mode != "explicit" and qtype is not None:
        raise ValueError(f"qtype given but qta_mode={config.qta_mode!r}")

    mask_t = Tensor(mask)
    d_k = config.head_dim
    inv_sqrt_dk = 1.0 / math.sqrt(d_k)
    drop = config.dropout if dropout_rng is not None else 0.0

    def maybe_dropout(x: Tensor) -> Tensor:
        if drop <= 0.0:
            return x
        keep = (dropout_rng.random(x.data.shape) >= drop) / (1.0 - drop)
        return ad.multiply(x, Tensor(keep))

    x = ad.add(ad.add(ad.embedding(params["tok_emb"], ids),
                      ad.embedding(params["pos_emb"], range(n))),
               ad.embedding(params["seg_emb"], segments))

    for i in range(config.layers):
        p = f"layer{i}."
        h = ad.layer_norm(x, params[p + "ln1_g"], params[p + "ln1_b"])
        q = ad.matmul(h, params[p + "wq"])
        k = ad.matmul(h, params[p + "wk"])
        v = ad.matmul(h, params[p + "wv"])
        head_outputs = []
        for j in range(config.heads):
            lo, hi = j * d_k, (j + 1) * d_k
            qj = ad.slice_cols(q, lo, hi)
            kj = ad.slice_cols(k, lo, hi)
            vj = ad.slice_cols(v, lo, hi)
            scores = ad.add(ad.scale(ad.matmul(qj, ad.transpose(kj)), inv_sqrt_dk),
                            mask_t)
            attn = ad.softmax_rows(scores)
            if attn_out is not None:
                attn_out.append(attn.data)
            head_outputs.append(ad.matmul(attn, vj))
        att = ad.add(ad.matmul(ad.concat_cols(head_outputs), params[p + "wo"]),
                     params[p + "bo"])
        x = ad.add(x, maybe_dropout(att))
        h2 = ad.layer_norm(x, params[p + "ln2_g"], params[p + "ln2_b"])
        ff = ad.add(ad.matmul(ad.gelu(ad.add(ad.matmul(h2, params[p + "ff1_w"]),
                                             params[p + "ff1_b"])),
                              params[p + "ff2_w"]),
                    params[p + "ff2_b"])
        x = ad.add(x, maybe_dropout(ff))

    hidden = ad.layer_norm(x, params["lnf_g"], params["lnf_b"])

    head_input = hidden
    qtype_logits = None
    if config.qta_mode == "explicit":
        head_input = infuse_explicit(hidden, params["type_emb"], qtype)
    elif config.qta_mode == "implicit":
        h0 = ad.slice_rows(hidden, 0, 1)
        type_hidden = ad.tanh(ad.add(ad.matmul(h0, params["qt_w"]),
                                     params["qt_bh"]))
        qtype_logits = ad.add(ad.matmul(type_hidden, params["qt_u"]),
                              params["qt_bc"])
        head_input = ad.tanh(ad.add(hidden, type_hidden))

    t = ad.gelu(ad.add(ad.matmul(head_input, params["head_w"]), params["head_bt"]))
    logits = ad.add(ad.matmul(t, params["head_u"]), params["head_bp"])
    return ForwardResult(hidden=hidden, logits=logits, qtype_logits=qtype_logits)
