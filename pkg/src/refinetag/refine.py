"""Two-pass decoding: draft with all-O tag inputs, re-encode with the drafted B-tags."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch

from . import crf
from .corpus import Batch, Utterance, Vocab, collate
from .encoder import HeadOutputs, JointTagger, joint_loss
from .numerics import DivergenceError, ParamStore, adam_step

MODES = ("one_pass", "two_pass", "one_pass_crf")


@dataclass
class Prediction:
    intent_id: int
    slot_tag_ids: list[int]
    pass1_tag_ids: list[int]
    pass1_logits: torch.Tensor | None = field(default=None, repr=False)
    pass2_logits: torch.Tensor | None = field(default=None, repr=False)

    def tags(self, vocab: Vocab) -> list[str]:
        return [vocab.tags.itos[i] for i in self.slot_tag_ids]

    def intent(self, vocab: Vocab) -> str:
        return vocab.intents.itos[self.intent_id]


@dataclass(frozen=True)
class BTagProjector:
    """Tag-id lookup that keeps B-* ids and sends every other id to O."""

    table: torch.Tensor
    outside_id: int

    @classmethod
    def from_vocab(cls, vocab: Vocab) -> "BTagProjector":
        o = vocab.outside_id
        ids = [i if t.startswith("B-") else o for i, t in enumerate(vocab.tags.itos)]
        return cls(torch.tensor(ids, dtype=torch.long), o)

    def __call__(self, tag_ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Pass-2 tag inputs ``(B, L+1)`` from pass-1 ids ``(B, L)``; CLS and padding stay O."""
        projected = torch.where(mask[:, 1:], self.table[tag_ids], self.outside_id)
        cls = torch.full_like(projected[:, :1], self.outside_id)
        return torch.cat([cls, projected], dim=1)


def _check_mode(mode: str, model: JointTagger) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    if mode == "one_pass_crf" and model.transitions is None:
        raise ValueError("one_pass_crf needs a model trained with a CRF head")


def two_pass_forward(
    model: JointTagger, batch: Batch, project: BTagProjector
) -> tuple[HeadOutputs, HeadOutputs, torch.Tensor]:
    """Return pass-1 outputs, pass-2 outputs and the pass-2 tag inputs.

    The drafted tags are detached ids, so no gradient flows through the projection.
    """
    first = model(batch.token_ids, batch.tag_input_ids, batch.mask)
    draft = first.slot_logits.detach().argmax(-1)
    tag_inputs = project(draft, batch.mask)
    second = model(batch.token_ids, tag_inputs, batch.mask)
    return first, second, tag_inputs


@dataclass
class StepOptions:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-9
    pass1_loss: bool = True
    teacher_forcing: bool = False


def compute_loss(
    model: JointTagger, batch: Batch, mode: str, project: BTagProjector | None = None, options: StepOptions = StepOptions()
) -> dict[str, torch.Tensor]:
    """Loss terms for one batch; ``loss`` is the quantity to minimise."""
    _check_mode(mode, model)
    first = model(batch.token_ids, batch.tag_input_ids, batch.mask)
    pass1 = joint_loss(first, batch.gold_intent_ids, batch.gold_tag_ids, model.transitions)
    if mode != "two_pass":
        return {"loss": pass1, "pass1": pass1}
    if options.teacher_forcing:
        draft = batch.gold_tag_ids
    else:
        draft = first.slot_logits.detach().argmax(-1)
    second = model(batch.token_ids, project(draft, batch.mask), batch.mask)
    pass2 = joint_loss(second, batch.gold_intent_ids, batch.gold_tag_ids, model.transitions)
    total = pass1 + pass2 if options.pass1_loss else pass2
    return {"loss": total, "pass1": pass1, "pass2": pass2}


def train_step(
    model: JointTagger,
    store: ParamStore,
    batch: Batch,
    mode: str,
    project: BTagProjector | None = None,
    options: StepOptions = StepOptions(),
) -> dict[str, float]:
    """One Adam update on the summed loss of the active passes."""
    model.train()
    store.zero_grad()
    terms = compute_loss(model, batch, mode, project, options)
    loss = terms["loss"]
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss.item()}")
    loss.backward()
    adam_step(store, options.lr, options.betas, options.eps)
    return {k: v.item() for k, v in terms.items()}


@torch.inference_mode()
def decode_batch(
    model: JointTagger, batch: Batch, mode: str, project: BTagProjector | None = None, keep_logits: bool = False
) -> list[Prediction]:
    _check_mode(mode, model)
    first = model(batch.token_ids, batch.tag_input_ids, batch.mask)
    lengths = batch.lengths.tolist()
    if mode == "one_pass_crf":
        draft = [crf.viterbi(first.slot_logits[i, :n], model.transitions)[0] for i, n in enumerate(lengths)]
    else:
        draft = first.slot_argmax().tolist()
    final, intents = first, first.intent_logits.argmax(-1).tolist()
    if mode == "two_pass":
        final = model(batch.token_ids, project(first.slot_argmax(), batch.mask), batch.mask)
        intents = final.intent_logits.argmax(-1).tolist()
        slots = final.slot_argmax().tolist()
    else:
        slots = draft
    preds = []
    for i, n in enumerate(lengths):
        preds.append(
            Prediction(
                intent_id=intents[i],
                slot_tag_ids=list(slots[i][:n]),
                pass1_tag_ids=list(draft[i][:n]),
                pass1_logits=first.slot_logits[i, :n].clone() if keep_logits else None,
                pass2_logits=final.slot_logits[i, :n].clone() if keep_logits and mode == "two_pass" else None,
            )
        )
    return preds


def decode(
    model: JointTagger,
    utterances: Sequence[Utterance],
    vocab: Vocab,
    mode: str,
    batch_size: int = 64,
) -> list[Prediction]:
    """Deterministic decoding in eval mode; ``batch_size=1`` gives unbatched decoding."""
    model.eval()
    project = BTagProjector.from_vocab(vocab)
    out: list[Prediction] = []
    for start in range(0, len(utterances), batch_size):
        out.extend(decode_batch(model, collate(utterances[start : start + batch_size], vocab), mode, project))
    return out


def to_strings(preds: Sequence[Prediction], vocab: Vocab) -> tuple[list[list[str]], list[str]]:
    return [p.tags(vocab) for p in preds], [p.intent(vocab) for p in preds]
