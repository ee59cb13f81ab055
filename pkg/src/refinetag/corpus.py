"""Loading of the three-file NLU release format, vocabularies and padded batches.

A split directory holds three parallel UTF-8 files, one utterance per line:

    seq.in   space-separated tokens
    seq.out  space-separated IOB slot tags, one per token
    label    the intent label
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import torch

SPLITS = ("train", "dev", "test")

PAD, UNK, CLS = "<pad>", "<unk>", "<cls>"
PAD_ID, UNK_ID, CLS_ID = 0, 1, 2
OUTSIDE = "O"

_TAG_RE = re.compile(r"^(?:O|[BI]-.+)$")


class DataError(ValueError):
    """Malformed or inconsistent corpus data."""


def check_tag(tag: str) -> str:
    if not _TAG_RE.match(tag):
        raise DataError(f"malformed tag {tag!r}: expected O, B-<type> or I-<type>")
    return tag


@dataclass(frozen=True)
class Utterance:
    tokens: tuple[str, ...]
    slot_tags: tuple[str, ...]
    intent: str
    id: int = 0

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise DataError(f"utterance {self.id}: no tokens")
        if len(self.tokens) != len(self.slot_tags):
            raise DataError(
                f"utterance {self.id}: {len(self.tokens)} tokens but {len(self.slot_tags)} tags"
            )
        for tag in self.slot_tags:
            check_tag(tag)

    def __len__(self) -> int:
        return len(self.tokens)


def _read_lines(path: Path) -> list[str]:
    # universal newlines: LF and CRLF both accepted
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    return lines


def load_split(directory: str | Path, split: str) -> list[Utterance]:
    """Read ``<directory>/<split>/{seq.in,seq.out,label}``.

    ``directory`` may also point at the split directory itself.
    """
    if split not in SPLITS:
        raise DataError(f"unknown split {split!r}; expected one of {', '.join(SPLITS)}")
    root = Path(directory)
    split_dir = root / split if (root / split).is_dir() else root
    paths = [split_dir / name for name in ("seq.in", "seq.out", "label")]
    for p in paths:
        if not p.is_file():
            raise DataError(f"missing corpus file {p}")
    seq_in, seq_out, labels = (_read_lines(p) for p in paths)
    if not len(seq_in) == len(seq_out) == len(labels):
        raise DataError(
            "line-count mismatch: "
            + ", ".join(f"{p} has {n}" for p, n in zip(paths, map(len, (seq_in, seq_out, labels))))
        )

    data = []
    for i, (words, tags, intent) in enumerate(zip(seq_in, seq_out, labels)):
        tokens = tuple(w.lower() for w in words.split())
        tag_seq = tuple(tags.split())
        if len(tokens) != len(tag_seq):
            raise DataError(
                f"{split_dir}: line {i + 1}: {len(tokens)} tokens but {len(tag_seq)} tags"
            )
        for tag in tag_seq:
            try:
                check_tag(tag)
            except DataError as e:
                raise DataError(f"{paths[1]}: line {i + 1}: {e}") from None
        data.append(Utterance(tokens, tag_seq, intent.strip(), id=i))
    return data


def write_split(directory: str | Path, data: Iterable[Utterance]) -> Path:
    """Inverse of :func:`load_split` for one split directory."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    data = list(data)
    (d / "seq.in").write_text("".join(" ".join(u.tokens) + "\n" for u in data), encoding="utf-8")
    (d / "seq.out").write_text("".join(" ".join(u.slot_tags) + "\n" for u in data), encoding="utf-8")
    (d / "label").write_text("".join(u.intent + "\n" for u in data), encoding="utf-8")
    return d


class Lookup:
    """Bijective surface <-> id map with insertion order."""

    def __init__(self, items: Iterable[str] = ()):
        self.itos: list[str] = []
        self.stoi: dict[str, int] = {}
        for item in items:
            self.add(item)

    def add(self, item: str) -> int:
        if item not in self.stoi:
            self.stoi[item] = len(self.itos)
            self.itos.append(item)
        return self.stoi[item]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, item: str) -> bool:
        return item in self.stoi

    def __getitem__(self, item: str) -> int:
        return self.stoi[item]

    def __eq__(self, other) -> bool:
        return isinstance(other, Lookup) and self.itos == other.itos


@dataclass
class Vocab:
    tokens: Lookup
    tags: Lookup
    intents: Lookup

    @property
    def outside_id(self) -> int:
        return self.tags[OUTSIDE]

    def token_id(self, token: str) -> int:
        return self.tokens.stoi.get(token, UNK_ID)

    def tag_id(self, tag: str) -> int:
        try:
            return self.tags[tag]
        except KeyError:
            raise DataError(f"tag {tag!r} not in tag vocabulary") from None

    def intent_id(self, intent: str) -> int:
        # unseen intents cannot be predicted; map to -1 so they always count as wrong
        return self.intents.stoi.get(intent, -1)

    def encode_tags(self, tags: Sequence[str]) -> list[int]:
        # tags unseen in training are scored as O at the id level; the string-level
        # metrics always use the gold strings so this only affects the loss
        return [self.tags.stoi.get(t, self.outside_id) for t in tags]

    def decode_tokens(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens.itos[i] for i in ids if i not in (PAD_ID, CLS_ID)]

    def to_dict(self) -> dict:
        return {"tokens": self.tokens.itos, "tags": self.tags.itos, "intents": self.intents.itos}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(Lookup(d["tokens"]), Lookup(d["tags"]), Lookup(d["intents"]))

    def dump(self, path: str | Path) -> None:
        """Write ``<id>\\t<surface>`` lines, one section per map."""
        with open(path, "w", encoding="utf-8") as f:
            for name, lookup in (("tokens", self.tokens), ("tags", self.tags), ("intents", self.intents)):
                f.write(f"# {name}\n")
                for i, s in enumerate(lookup.itos):
                    f.write(f"{i}\t{s}\n")


def build_vocab(train: Sequence[Utterance]) -> Vocab:
    if not train:
        raise DataError("cannot build a vocabulary from an empty training split")
    tokens = Lookup([PAD, UNK, CLS])
    tags = Lookup([OUTSIDE])
    intents = Lookup()
    for u in train:
        for w in u.tokens:
            tokens.add(w)
        for t in u.slot_tags:
            tags.add(t)
            if t.startswith("B-"):
                tags.add("I-" + t[2:])
        intents.add(u.intent)
    return Vocab(tokens, tags, intents)


@dataclass(frozen=True)
class Batch:
    """Padded id tensors for a group of utterances.

    Column 0 of ``token_ids``/``tag_input_ids``/``mask`` is the CLS slot; gold tags
    have no CLS column so ``gold_tag_ids[:, i]`` aligns with ``token_ids[:, i + 1]``.
    """

    token_ids: torch.Tensor  # (B, L+1) long
    tag_input_ids: torch.Tensor  # (B, L+1) long
    gold_tag_ids: torch.Tensor  # (B, L) long, PAD positions hold O
    gold_intent_ids: torch.Tensor  # (B,) long
    mask: torch.Tensor  # (B, L+1) bool
    lengths: torch.Tensor  # (B,) long
    utterances: tuple[Utterance, ...] = field(default=(), compare=False)

    def __len__(self) -> int:
        return self.token_ids.shape[0]

    @property
    def token_mask(self) -> torch.Tensor:
        """(B, L) mask over real tokens, CLS excluded."""
        return self.mask[:, 1:]


def collate(data: Sequence[Utterance], vocab: Vocab) -> Batch:
    n = len(data)
    width = max(len(u) for u in data)
    o = vocab.outside_id
    token_ids = torch.full((n, width + 1), PAD_ID, dtype=torch.long)
    tag_inputs = torch.full((n, width + 1), o, dtype=torch.long)
    gold_tags = torch.full((n, width), o, dtype=torch.long)
    mask = torch.zeros((n, width + 1), dtype=torch.bool)
    lengths = torch.tensor([len(u) for u in data], dtype=torch.long)
    for row, u in enumerate(data):
        k = len(u)
        token_ids[row, 0] = CLS_ID
        token_ids[row, 1 : k + 1] = torch.tensor([vocab.token_id(w) for w in u.tokens])
        gold_tags[row, :k] = torch.tensor(vocab.encode_tags(u.slot_tags))
        mask[row, : k + 1] = True
    intents = torch.tensor([vocab.intent_id(u.intent) for u in data], dtype=torch.long)
    return Batch(token_ids, tag_inputs, gold_tags, intents, mask, lengths, tuple(data))


def make_batches(
    data: Sequence[Utterance],
    vocab: Vocab,
    batch_size: int,
    shuffle_seed: int | None = None,
) -> Iterator[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(range(len(data)))
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(order)
    for start in range(0, len(order), batch_size):
        yield collate([data[i] for i in order[start : start + batch_size]], vocab)
