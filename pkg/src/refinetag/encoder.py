"""Transformer encoder with relative position representations and the joint heads.

Every input position receives ``token_embedding + tag_embedding``. The tag input is
``O`` everywhere on the first pass; the refinement pass feeds projected B-tags.
There is no absolute position signal: order enters only through clipped relative
offsets added to keys and values inside attention.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from . import crf
from .numerics import cross_entropy, layer_norm, softmax, xavier_init

ACTIVATIONS = {"gelu": torch.nn.functional.gelu, "relu": torch.relu}

PRESETS = {
    "atis": dict(num_layers=2, num_heads=8, hidden_size=64),
    "snips": dict(num_layers=4, num_heads=16, hidden_size=96),
}


@dataclass
class EncoderConfig:
    vocab_size: int
    num_tags: int
    num_intents: int
    num_layers: int = 2
    num_heads: int = 8
    hidden_size: int = 64
    feed_forward_size: int | None = None  # 4 * hidden_size when unset
    relative_clip_distance: int = 8
    relative_values: bool = True
    dropout: float = 0.1
    max_len: int = 128
    activation: str = "gelu"
    crf: bool = False

    def __post_init__(self):
        if self.feed_forward_size is None:
            self.feed_forward_size = 4 * self.hidden_size
        if self.hidden_size % self.num_heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {', '.join(ACTIVATIONS)}")
        if self.relative_clip_distance < 1:
            raise ValueError("relative_clip_distance must be >= 1")

    @classmethod
    def preset(cls, name: str, **kwargs) -> "EncoderConfig":
        return cls(**{**PRESETS[name], **kwargs})

    def to_dict(self) -> dict:
        return asdict(self)


def relative_index(n: int, k: int, device=None) -> torch.Tensor:
    """``(n, n)`` table of ``clip(j - i, -k, k) + k`` for query i and key j."""
    pos = torch.arange(n, device=device)
    return (pos[None, :] - pos[:, None]).clamp(-k, k) + k


class Linear(nn.Module):
    """Affine map with Glorot weights and zero bias, ``y = x W^T + b``."""

    def __init__(self, in_features: int, out_features: int, gen: torch.Generator):
        super().__init__()
        self.weight = nn.Parameter(xavier_init((out_features, in_features), gen))
        self.bias = nn.Parameter(torch.zeros(out_features))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x @ self.weight.T + self.bias


class LayerNorm(nn.Module):
    def __init__(self, size: int):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(size))
        self.bias = nn.Parameter(torch.zeros(size))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return layer_norm(x, self.gain, self.bias)


class RelativeSelfAttentionLayer(nn.Module):
    """Post-norm encoder block: relative multi-head attention, then feed-forward."""

    def __init__(self, config: EncoderConfig, gen: torch.Generator):
        super().__init__()
        h = config.hidden_size
        self.num_heads = config.num_heads
        self.head_size = h // config.num_heads
        self.clip = config.relative_clip_distance
        self.query = Linear(h, h, gen)
        self.key = Linear(h, h, gen)
        self.value = Linear(h, h, gen)
        self.output = Linear(h, h, gen)
        # offset embeddings are shared by all heads of a layer
        self.rel_key = nn.Parameter(xavier_init((2 * self.clip + 1, self.head_size), gen))
        self.rel_value = (
            nn.Parameter(xavier_init((2 * self.clip + 1, self.head_size), gen)) if config.relative_values else None
        )
        self.attn_norm = LayerNorm(h)
        self.ff_in = Linear(h, config.feed_forward_size, gen)
        self.ff_out = Linear(config.feed_forward_size, h, gen)
        self.ff_norm = LayerNorm(h)
        self.activation = ACTIVATIONS[config.activation]
        self.dropout = nn.Dropout(config.dropout)

    def attention_weights(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """``(B, heads, N, N)`` attention distribution; masked keys get zero weight."""
        return self._attend(x, mask)[0]

    def _attend(self, x, mask):
        b, n, _ = x.shape
        q = self.query(x).view(b, n, self.num_heads, self.head_size).transpose(1, 2)
        k = self.key(x).view(b, n, self.num_heads, self.head_size).transpose(1, 2)
        v = self.value(x).view(b, n, self.num_heads, self.head_size).transpose(1, 2)
        idx = relative_index(n, self.clip, x.device)
        rel_k = self.rel_key[idx]  # (N, N, d)
        scores = q @ k.transpose(-1, -2) + torch.einsum("bhid,ijd->bhij", q, rel_k)
        scores = scores / math.sqrt(self.head_size)
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        return softmax(scores), v, idx

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, n, h = x.shape
        weights, v, idx = self._attend(x, mask)
        weights = self.dropout(weights)
        ctx = weights @ v
        if self.rel_value is not None:
            ctx = ctx + torch.einsum("bhij,ijd->bhid", weights, self.rel_value[idx])
        ctx = ctx.transpose(1, 2).reshape(b, n, h)
        x = self.attn_norm(x + self.dropout(self.output(ctx)))
        ff = self.ff_out(self.activation(self.ff_in(x)))
        return self.ff_norm(x + self.dropout(ff))


@dataclass
class HeadOutputs:
    intent_logits: torch.Tensor  # (B, |I|)
    slot_logits: torch.Tensor  # (B, L, |T|), rows past each length are padding
    token_mask: torch.Tensor  # (B, L)
    hidden: torch.Tensor | None = field(default=None, repr=False)  # (B, L+1, h)

    def slot_argmax(self) -> torch.Tensor:
        return self.slot_logits.argmax(-1)


class JointTagger(nn.Module):
    """Shared encoder with an intent head on CLS and a slot head on ``[h_cls ; h_i]``."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        super().__init__()
        self.config = config
        gen = torch.Generator().manual_seed(seed)
        h = config.hidden_size
        self.token_embedding = nn.Parameter(xavier_init((config.vocab_size, h), gen))
        self.tag_embedding = nn.Parameter(xavier_init((config.num_tags, h), gen))
        self.layers = nn.ModuleList(RelativeSelfAttentionLayer(config, gen) for _ in range(config.num_layers))
        self.intent_head = Linear(h, config.num_intents, gen)
        self.slot_head = Linear(2 * h, config.num_tags, gen)
        if config.crf:
            self.transitions = nn.Parameter(torch.zeros(config.num_tags + 2, config.num_tags + 2))
        else:
            self.transitions = None

    def embed_inputs(self, token_ids: torch.Tensor, tag_input_ids: torch.Tensor) -> torch.Tensor:
        if token_ids.shape[-1] > self.config.max_len + 1:
            raise ValueError(f"sequence of {token_ids.shape[-1] - 1} tokens exceeds max_len {self.config.max_len}")
        for name, ids, size in (
            ("token", token_ids, self.config.vocab_size),
            ("tag", tag_input_ids, self.config.num_tags),
        ):
            if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= size):
                raise IndexError(f"{name} id out of range for vocabulary of {size}")
        return self.token_embedding[token_ids] + self.tag_embedding[tag_input_ids]

    def encode(self, token_ids: torch.Tensor, tag_input_ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.embed_inputs(token_ids, tag_input_ids)
        for layer in self.layers:
            x = layer(x, mask)
        return x

    def predict_heads(self, hidden: torch.Tensor, mask: torch.Tensor) -> HeadOutputs:
        cls = hidden[:, 0]
        tokens = hidden[:, 1:]
        joint = torch.cat([cls.unsqueeze(1).expand_as(tokens), tokens], dim=-1)
        return HeadOutputs(
            intent_logits=self.intent_head(cls),
            slot_logits=self.slot_head(joint),
            token_mask=mask[:, 1:],
            hidden=hidden,
        )

    def forward(self, token_ids: torch.Tensor, tag_input_ids: torch.Tensor, mask: torch.Tensor) -> HeadOutputs:
        return self.predict_heads(self.encode(token_ids, tag_input_ids, mask), mask)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def slot_nll(outputs: HeadOutputs, gold_tags: torch.Tensor, transitions: torch.Tensor | None = None) -> torch.Tensor:
    """Per-utterance slot loss ``(B,)``: summed token CE, or the CRF NLL given transitions."""
    if transitions is not None:
        return crf.crf_nll(outputs.slot_logits, transitions, gold_tags, outputs.token_mask)
    ce = cross_entropy(outputs.slot_logits, gold_tags)
    return (ce * outputs.token_mask).sum(-1)


def joint_loss(
    outputs: HeadOutputs,
    gold_intents: torch.Tensor,
    gold_tags: torch.Tensor,
    transitions: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean over utterances of ``CE(intent) + sum_t CE(slot_t)``; padding excluded.

    Passing CRF ``transitions`` swaps the slot term for the sequence NLL.
    """
    if gold_tags.shape != outputs.token_mask.shape:
        raise ValueError(f"gold tags {tuple(gold_tags.shape)} vs slot logits {tuple(outputs.token_mask.shape)}")
    intent = cross_entropy(outputs.intent_logits, gold_intents)
    return (intent + slot_nll(outputs, gold_tags, transitions)).mean()
