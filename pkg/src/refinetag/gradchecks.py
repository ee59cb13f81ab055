"""Finite-difference checks of the full model and the CRF in float64."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .corpus import Batch, Utterance, build_vocab, collate
from .crf import crf_nll
from .encoder import EncoderConfig, JointTagger, joint_loss
from .numerics import GradCheckReport, grad_check
from .refine import BTagProjector

TINY = dict(num_layers=1, num_heads=2, hidden_size=8, dropout=0.0)

_UTTERANCES = [
    Utterance(("fly", "to", "boston"), ("O", "O", "B-city"), "flight"),
    Utterance(("boston", "fare"), ("B-city", "I-city"), "fare"),
    Utterance(("hi", "there", "now"), ("O", "O", "O"), "greet"),
]


@dataclass
class CheckResult:
    name: str
    seed: int
    report: GradCheckReport

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "checked": self.report.checked,
            "max_rel_error": self.report.max_rel_error,
            "failures": len(self.report.failures),
        }


def tiny_model(seed: int, crf: bool = False) -> tuple[JointTagger, Batch, BTagProjector]:
    """|T| = 3 (O, B-city, I-city) plus a 4th unused tag, |I| = 3, utterance length 3."""
    vocab = build_vocab(_UTTERANCES)
    vocab.tags.add("B-date")
    config = EncoderConfig(
        vocab_size=len(vocab.tokens), num_tags=len(vocab.tags), num_intents=len(vocab.intents), crf=crf, **TINY
    )
    model = JointTagger(config, seed=seed).double()
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        # move LayerNorm and bias parameters off their trivial init so every path is exercised
        for name, p in model.named_parameters():
            if name.endswith("bias") or name.endswith("gain") or name == "transitions":
                p.add_(0.1 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return model, collate(_UTTERANCES[:2], vocab), BTagProjector.from_vocab(vocab)


def check_encoder(seed: int, tolerance: float = 1e-4) -> GradCheckReport:
    model, batch, _ = tiny_model(seed)
    params = dict(model.named_parameters())

    def loss():
        out = model(batch.token_ids, batch.tag_input_ids, batch.mask)
        return joint_loss(out, batch.gold_intent_ids, batch.gold_tag_ids)

    return grad_check(loss, params, tolerance, samples_per_param=16, seed=seed)


def check_two_pass(seed: int, tolerance: float = 1e-4) -> GradCheckReport:
    """Summed pass-1 + pass-2 loss with the drafted B-tags frozen."""
    model, batch, project = tiny_model(seed)
    params = dict(model.named_parameters())
    with torch.no_grad():
        draft = model(batch.token_ids, batch.tag_input_ids, batch.mask).slot_argmax()
    # force at least one B-tag into the second pass
    draft[0, 2] = 1
    pass2_inputs = project(draft, batch.mask)

    def loss():
        first = model(batch.token_ids, batch.tag_input_ids, batch.mask)
        second = model(batch.token_ids, pass2_inputs, batch.mask)
        return joint_loss(first, batch.gold_intent_ids, batch.gold_tag_ids) + joint_loss(
            second, batch.gold_intent_ids, batch.gold_tag_ids
        )

    return grad_check(loss, params, tolerance, samples_per_param=24, seed=seed)


def check_crf(seed: int, tolerance: float = 1e-4) -> GradCheckReport:
    """CRF NLL alone on random emissions, then as the slot loss of the tiny model."""
    gen = torch.Generator().manual_seed(seed)
    length, num_tags = 4, 4
    emissions = torch.randn(length, num_tags, generator=gen, dtype=torch.float64, requires_grad=True)
    transitions = torch.randn(num_tags + 2, num_tags + 2, generator=gen, dtype=torch.float64, requires_grad=True)
    gold = torch.randint(num_tags, (length,), generator=gen)
    alone = grad_check(
        lambda: crf_nll(emissions, transitions, gold),
        {"emissions": emissions, "transitions": transitions},
        tolerance,
        samples_per_param=None,
    )

    model, batch, _ = tiny_model(seed, crf=True)

    def loss():
        out = model(batch.token_ids, batch.tag_input_ids, batch.mask)
        return joint_loss(out, batch.gold_intent_ids, batch.gold_tag_ids, model.transitions)

    full = grad_check(loss, dict(model.named_parameters()), tolerance, samples_per_param=12, seed=seed)
    return GradCheckReport(
        alone.checked + full.checked, max(alone.max_rel_error, full.max_rel_error), alone.failures + full.failures
    )


CHECKS = {"encoder": check_encoder, "two_pass": check_two_pass, "crf": check_crf}


def run_all(seeds=range(5), tolerance: float = 1e-4) -> list[CheckResult]:
    return [CheckResult(name, seed, fn(seed, tolerance)) for seed in seeds for name, fn in CHECKS.items()]
