"""Training loop, model selection, checkpoint sidecars and the uncoordinated-slot curve."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from . import tagcodec
from .corpus import SPLITS, DataError, Utterance, Vocab, build_vocab, load_split, make_batches
from .encoder import PRESETS, EncoderConfig, JointTagger
from .numerics import DivergenceError, ParamStore, load_checkpoint, save_checkpoint
from .refine import MODES, BTagProjector, StepOptions, decode, to_strings, train_step

log = logging.getLogger(__name__)

SELECTION_METRICS = ("sentence_accuracy", "slot_f1", "intent_accuracy")


class CheckpointError(DataError):
    """Checkpoint tensors disagree with the header sidecar."""


@dataclass
class TrainConfig:
    data_dir: str = ""
    output_dir: str = "runs/default"
    preset: str = "atis"
    num_layers: int | None = None
    num_heads: int | None = None
    hidden_size: int | None = None
    feed_forward_size: int | None = None
    relative_clip_distance: int = 8
    relative_values: bool = True
    dropout: float = 0.1
    max_len: int = 128
    activation: str = "gelu"
    mode: str = "two_pass"
    batch_size: int = 32
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    max_epochs: int = 100
    seed: int = 0
    selection_metric: str = "sentence_accuracy"
    pass1_loss: bool = True
    teacher_forcing: bool = False
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {', '.join(PRESETS)}, got {self.preset!r}")
        if self.selection_metric not in SELECTION_METRICS:
            raise ValueError(f"selection_metric must be one of {', '.join(SELECTION_METRICS)}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")

    def encoder_config(self, vocab: Vocab) -> EncoderConfig:
        arch = dict(PRESETS[self.preset])
        for key in ("num_layers", "num_heads", "hidden_size"):
            if getattr(self, key) is not None:
                arch[key] = getattr(self, key)
        return EncoderConfig(
            vocab_size=len(vocab.tokens),
            num_tags=len(vocab.tags),
            num_intents=len(vocab.intents),
            feed_forward_size=self.feed_forward_size,
            relative_clip_distance=self.relative_clip_distance,
            relative_values=self.relative_values,
            dropout=self.dropout,
            max_len=self.max_len,
            activation=self.activation,
            crf=self.mode == "one_pass_crf",
            **arch,
        )

    def step_options(self) -> StepOptions:
        return StepOptions(
            lr=self.lr,
            betas=(self.beta1, self.beta2),
            eps=self.eps,
            pass1_loss=self.pass1_loss,
            teacher_forcing=self.teacher_forcing,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    dev: dict
    test_uncoordinated: int | None
    wall_time: float


@dataclass
class RunResult:
    checkpoint: Path
    report_path: Path
    report: dict
    model: JointTagger = field(repr=False)
    vocab: Vocab = field(repr=False)


def sidecar_path(checkpoint: str | Path) -> Path:
    return Path(checkpoint).with_suffix(".json")


def save_model(path: str | Path, model: JointTagger, vocab: Vocab, extra: dict | None = None) -> Path:
    """Write the ``.slrf`` tensor file plus a JSON header with config and vocabularies."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, dict(model.named_parameters()))
    header = {"encoder": model.config.to_dict(), "vocab": vocab.to_dict(), **(extra or {})}
    sidecar_path(path).write_text(json.dumps(header, indent=1), encoding="utf-8")
    return path


def load_model(path: str | Path) -> tuple[JointTagger, Vocab, dict]:
    path = Path(path)
    side = sidecar_path(path)
    if not path.is_file() or not side.is_file():
        raise CheckpointError(f"checkpoint {path} or its header {side} is missing")
    header = json.loads(side.read_text(encoding="utf-8"))
    vocab = Vocab.from_dict(header["vocab"])
    config = EncoderConfig(**header["encoder"])
    if (config.vocab_size, config.num_tags, config.num_intents) != (
        len(vocab.tokens),
        len(vocab.tags),
        len(vocab.intents),
    ):
        raise CheckpointError(f"{side}: vocabulary sizes disagree with the encoder config")
    model = JointTagger(config)
    tensors = load_checkpoint(path)
    expected = {n: tuple(p.shape) for n, p in model.named_parameters()}
    found = {n: tuple(t.shape) for n, t in tensors.items()}
    if expected != found:
        missing = sorted(set(expected) ^ set(found))
        bad = sorted(n for n in set(expected) & set(found) if expected[n] != found[n])
        raise CheckpointError(f"{path}: tensors do not match header (name diff {missing}, shape diff {bad})")
    with torch.no_grad():
        for name, p in model.named_parameters():
            p.copy_(tensors[name])
    model.eval()
    return model, vocab, header


def evaluate_model(
    model: JointTagger, vocab: Vocab, data: Sequence[Utterance], mode: str, batch_size: int = 64
) -> tagcodec.MetricsReport:
    tags, intents = to_strings(decode(model, data, vocab, mode, batch_size), vocab)
    return tagcodec.evaluate(data, tags, intents)


def _load_splits(config: TrainConfig) -> dict[str, list[Utterance]]:
    if not config.data_dir:
        raise DataError("data_dir is not set")
    splits = {"train": load_split(config.data_dir, "train"), "dev": load_split(config.data_dir, "dev")}
    root = Path(config.data_dir)
    if (root / "test").is_dir():
        splits["test"] = load_split(config.data_dir, "test")
    return splits


def train(config: TrainConfig, splits: dict[str, Sequence[Utterance]] | None = None) -> RunResult:
    """Train for ``max_epochs`` keeping the best checkpoint by the dev selection metric.

    ``splits`` overrides loading from ``config.data_dir``; it needs ``train`` and
    ``dev`` and may carry ``test`` for the per-epoch uncoordinated count.
    """
    splits = dict(splits) if splits is not None else _load_splits(config)
    if not splits.get("train"):
        raise DataError("empty training split")
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)

    vocab = build_vocab(splits["train"])
    model = JointTagger(config.encoder_config(vocab), seed=config.seed)
    store = ParamStore.from_module(model)
    project = BTagProjector.from_vocab(vocab)
    options = config.step_options()
    checkpoint = out_dir / "model.slrf"
    header = {"mode": config.mode, "data_dir": config.data_dir, "eval_batch_size": config.eval_batch_size}

    epochs: list[EpochLog] = []
    best_epoch, best_value, best_dev = 0, float("-inf"), None
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        total, count = 0.0, 0
        for batch in make_batches(splits["train"], vocab, config.batch_size, shuffle_seed=config.seed * 100003 + epoch):
            try:
                losses = train_step(model, store, batch, config.mode, project, options)
            except DivergenceError as e:
                raise DivergenceError(f"epoch {epoch}: {e}") from None
            total += losses["loss"] * len(batch)
            count += len(batch)
        dev = evaluate_model(model, vocab, splits["dev"], config.mode, config.eval_batch_size)
        test_unc = None
        if splits.get("test"):
            test_unc = evaluate_model(model, vocab, splits["test"], config.mode, config.eval_batch_size).uncoordinated_count
        entry = EpochLog(epoch, total / count, dev.to_dict(), test_unc, time.perf_counter() - started)
        epochs.append(entry)
        value = getattr(dev, config.selection_metric)
        if value > best_value:
            best_epoch, best_value, best_dev = epoch, value, dev
            header["epoch"] = epoch
            save_model(checkpoint, model, vocab, header)
        log.info(
            "epoch %d loss %.4f dev slot_f1 %.4f intent %.4f sent %.4f unc %s",
            epoch, entry.train_loss, dev.slot_f1, dev.intent_accuracy, dev.sentence_accuracy, test_unc,
        )

    best_model, _, _ = load_model(checkpoint)
    test_metrics = None
    if splits.get("test"):
        test_metrics = evaluate_model(best_model, vocab, splits["test"], config.mode, config.eval_batch_size).to_dict()
    report = {
        "config": config.to_dict(),
        "encoder": model.config.to_dict(),
        "parameters": model.num_parameters(),
        "vocab_sizes": {"tokens": len(vocab.tokens), "tags": len(vocab.tags), "intents": len(vocab.intents)},
        "epochs": [asdict(e) for e in epochs],
        "best_epoch": best_epoch,
        "best_dev": best_dev.to_dict(),
        "test": test_metrics,
        "checkpoint": str(checkpoint),
    }
    report_path = out_dir / "run_report.json"
    report_path.write_text(json.dumps(report, indent=1), encoding="utf-8")
    return RunResult(checkpoint, report_path, report, best_model, vocab)


def evaluate_checkpoint(
    checkpoint: str | Path,
    split: str,
    mode: str | None = None,
    data_dir: str | Path | None = None,
    data: Sequence[Utterance] | None = None,
) -> tagcodec.MetricsReport:
    """Metrics of a saved model on one split.

    ``mode`` defaults to the mode the checkpoint was trained in; ``data_dir``
    defaults to the directory recorded at training time.
    """
    if split not in SPLITS:
        raise DataError(f"unknown split {split!r}; expected one of {', '.join(SPLITS)}")
    model, vocab, header = load_model(checkpoint)
    mode = mode or header.get("mode", "two_pass")
    if data is None:
        directory = data_dir or header.get("data_dir")
        if not directory:
            raise DataError("no data directory given and none recorded in the checkpoint header")
        data = load_split(directory, split)
    return evaluate_model(model, vocab, data, mode, header.get("eval_batch_size", 64))


def curve_rows(report: dict) -> list[tuple[str, int, int]]:
    mode = report["config"]["mode"]
    return [(mode, e["epoch"], e["test_uncoordinated"]) for e in report["epochs"] if e["test_uncoordinated"] is not None]


def log_uncoordinated_curve(reports: Sequence[dict], path: str | Path) -> Path:
    """Write ``mode,epoch,count`` rows for every run report."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["mode", "epoch", "count"])
        for report in reports:
            w.writerows(curve_rows(report))
    return path


def read_curve(path: str | Path) -> dict[str, list[tuple[int, int]]]:
    curves: dict[str, list[tuple[int, int]]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            curves.setdefault(row["mode"], []).append((int(row["epoch"]), int(row["count"])))
    return curves


def window_mean(points: Sequence[tuple[int, int]], first: int, last: int) -> float:
    values = [c for e, c in points if first <= e <= last]
    if not values:
        raise ValueError(f"no curve points in epochs {first}-{last}")
    return sum(values) / len(values)


def config_from_dict(values: dict) -> TrainConfig:
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise KeyError(f"unknown config keys: {', '.join(unknown)}")
    return TrainConfig(**values)
