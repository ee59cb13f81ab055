"""IOB tag semantics: chunk recovery, coordination auditing, B-tag projection, metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

from .corpus import OUTSIDE, DataError, Utterance, check_tag


class Chunk(NamedTuple):
    slot_type: str
    start: int
    end: int  # inclusive


class Violation(NamedTuple):
    """Adjacent pair breaking IOB coordination. ``prev_pos`` is -1 at sequence start."""

    prev_pos: int
    pos: int
    prev_tag: str
    tag: str


def split_tag(tag: str) -> tuple[str, str]:
    check_tag(tag)
    if tag == OUTSIDE:
        return OUTSIDE, ""
    return tag[0], tag[2:]


def parse_chunks(tags: Sequence[str]) -> list[Chunk]:
    """Recover chunks with conlleval semantics: an I-t that cannot continue an open
    t-chunk starts a new one."""
    chunks = []
    open_type, open_start = None, 0
    for i, tag in enumerate(tags):
        prefix, kind = split_tag(tag)
        if prefix == "I" and open_type == kind:
            continue
        if open_type is not None:
            chunks.append(Chunk(open_type, open_start, i - 1))
            open_type = None
        if prefix != OUTSIDE:
            open_type, open_start = kind, i
    if open_type is not None:
        chunks.append(Chunk(open_type, open_start, len(tags) - 1))
    return chunks


def render_chunks(chunks: Sequence[Chunk], length: int) -> list[str]:
    tags = [OUTSIDE] * length
    for c in chunks:
        tags[c.start] = "B-" + c.slot_type
        for i in range(c.start + 1, c.end + 1):
            tags[i] = "I-" + c.slot_type
    return tags


def _continues(prev: str, tag: str) -> bool:
    return prev[:1] in ("B", "I") and prev[2:] == tag[2:]


def validate_crf_rules(tags: Sequence[str]) -> list[Violation]:
    """Every I-t must follow B-t or I-t; the sequence start behaves like O."""
    out = []
    prev = OUTSIDE
    for i, tag in enumerate(tags):
        check_tag(tag)
        if tag.startswith("I-") and not _continues(prev, tag):
            out.append(Violation(i - 1, i, prev, tag))
        prev = tag
    return out


def count_uncoordinated(tags: Sequence[str]) -> int:
    n = 0
    for i, tag in enumerate(tags):
        if tag.startswith("I-") and (i == 0 or not _continues(tags[i - 1], tag)):
            n += 1
    return n


def btag_projection(tags: Sequence[str]) -> list[str]:
    return [t if t.startswith("B-") else OUTSIDE for t in tags]


@dataclass
class MetricsReport:
    slot_f1: float
    slot_precision: float
    slot_recall: float
    intent_accuracy: float
    sentence_accuracy: float
    uncoordinated_count: int
    gold_chunks: int
    predicted_chunks: int
    correct_chunks: int
    utterances: int

    def to_dict(self) -> dict:
        return asdict(self)


def prf(correct: int, predicted: int, gold: int) -> tuple[float, float, float]:
    # nothing to find and nothing found counts as perfect agreement
    if predicted == 0 and gold == 0:
        return 1.0, 1.0, 1.0
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def evaluate(
    gold: Sequence[Utterance],
    pred_tags: Sequence[Sequence[str]],
    pred_intents: Sequence[str],
) -> MetricsReport:
    """Score string-level predictions against gold utterances.

    Slot scores count exact (type, start, end) chunk matches. Sentence accuracy
    requires the whole raw tag sequence and the intent to be right.
    """
    if not (len(gold) == len(pred_tags) == len(pred_intents)):
        raise DataError(
            f"{len(gold)} gold utterances but {len(pred_tags)} tag and "
            f"{len(pred_intents)} intent predictions"
        )
    n_gold = n_pred = n_correct = 0
    intent_ok = sent_ok = uncoordinated = 0
    for u, tags, intent in zip(gold, pred_tags, pred_intents):
        if len(tags) != len(u.slot_tags):
            raise DataError(
                f"utterance {u.id}: {len(u.slot_tags)} gold tags but {len(tags)} predicted"
            )
        g = set(parse_chunks(u.slot_tags))
        p = set(parse_chunks(tags))
        n_gold += len(g)
        n_pred += len(p)
        n_correct += len(g & p)
        hit = intent == u.intent
        intent_ok += hit
        sent_ok += hit and tuple(tags) == tuple(u.slot_tags)
        uncoordinated += count_uncoordinated(tags)
    n = len(gold)
    precision, recall, f1 = prf(n_correct, n_pred, n_gold)
    return MetricsReport(
        slot_f1=f1,
        slot_precision=precision,
        slot_recall=recall,
        intent_accuracy=intent_ok / n if n else 0.0,
        sentence_accuracy=sent_ok / n if n else 0.0,
        uncoordinated_count=uncoordinated,
        gold_chunks=n_gold,
        predicted_chunks=n_pred,
        correct_chunks=n_correct,
        utterances=n,
    )
