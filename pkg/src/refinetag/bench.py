"""Per-utterance decode latency without minibatching, and speedup tables."""

from __future__ import annotations

import csv
import io
import platform
import statistics
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import torch

from .corpus import Utterance, Vocab, collate
from .encoder import JointTagger
from .refine import BTagProjector, decode_batch

LONG_SENTENCE = 12
MIN_LONG_COUNT = 10


@dataclass
class LatencyReport:
    mode: str
    mean_ms: float
    median_ms: float
    p95_ms: float
    count: int
    long_mean_ms: float | None
    long_count: int
    warmup: int
    repeats: int
    hardware: str
    label: str = ""

    def __post_init__(self):
        self.label = self.label or self.mode

    def to_dict(self) -> dict:
        return asdict(self)


def hardware_note() -> str:
    return (
        f"{platform.machine()} {platform.processor() or 'cpu'}; python {platform.python_version()}; "
        f"torch {torch.__version__}; threads {torch.get_num_threads()}"
    )


@contextmanager
def single_thread():
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


def time_calls(fn: Callable, inputs: Sequence, warmup: int, repeats: int) -> list[float]:
    """Mean milliseconds per input over ``repeats`` sweeps, after ``warmup`` untimed calls."""
    if not inputs:
        raise ValueError("nothing to time: empty input list")
    if repeats < 1 or warmup < 0:
        raise ValueError("repeats must be >= 1 and warmup >= 0")
    for i in range(warmup):
        fn(inputs[i % len(inputs)])
    totals = [0.0] * len(inputs)
    clock = time.perf_counter
    for _ in range(repeats):
        for i, x in enumerate(inputs):
            t0 = clock()
            fn(x)
            totals[i] += clock() - t0
    return [1000.0 * t / repeats for t in totals]


def time_interleaved(
    fns: Mapping[str, Callable], inputs: Mapping[str, Sequence], warmup: int, repeats: int
) -> dict[str, list[float]]:
    """:func:`time_calls` for several functions, alternating them sweep by sweep.

    ``inputs[name]`` feeds ``fns[name]``. Slow drift of the host (frequency
    scaling, noisy neighbours) then lands on every function alike instead of on
    whichever happened to run last.
    """
    if any(not inputs[name] for name in fns):
        raise ValueError("nothing to time: empty input list")
    if repeats < 1 or warmup < 0:
        raise ValueError("repeats must be >= 1 and warmup >= 0")
    for name, fn in fns.items():
        xs = inputs[name]
        for i in range(warmup):
            fn(xs[i % len(xs)])
    totals = {name: [0.0] * len(inputs[name]) for name in fns}
    clock = time.perf_counter
    for _ in range(repeats):
        for name, fn in fns.items():
            acc = totals[name]
            for i, x in enumerate(inputs[name]):
                t0 = clock()
                fn(x)
                acc[i] += clock() - t0
    return {name: [1000.0 * t / repeats for t in acc] for name, acc in totals.items()}


def summarize(
    mode: str, latencies: Sequence[float], lengths: Sequence[int], warmup: int, repeats: int, label: str = ""
) -> LatencyReport:
    ordered = sorted(latencies)
    p95 = ordered[min(len(ordered) - 1, int(round(0.95 * (len(ordered) - 1))))]
    long = [t for t, n in zip(latencies, lengths) if n >= LONG_SENTENCE]
    return LatencyReport(
        mode=mode,
        mean_ms=statistics.fmean(latencies),
        median_ms=statistics.median(latencies),
        p95_ms=p95,
        count=len(latencies),
        long_mean_ms=statistics.fmean(long) if len(long) >= MIN_LONG_COUNT else None,
        long_count=len(long),
        warmup=warmup,
        repeats=repeats,
        hardware=hardware_note(),
        label=label,
    )


def measure_model_latency(
    model: JointTagger,
    vocab: Vocab,
    utterances: Sequence[Utterance],
    mode: str,
    warmup: int = 50,
    repeats: int = 5,
    *,
    threads: int = 1,
    label: str = "",
) -> LatencyReport:
    """Time ``decode`` of one utterance at a time; batching and IO stay outside the clock."""
    if threads != 1:
        raise ValueError("latency is measured single-threaded only; refusing threads != 1")
    if not utterances:
        raise ValueError("no utterances to benchmark")
    model.eval()
    project = BTagProjector.from_vocab(vocab)
    batches = [collate([u], vocab) for u in utterances]
    with single_thread():
        latencies = time_calls(lambda b: decode_batch(model, b, mode, project), batches, warmup, repeats)
        return summarize(mode, latencies, [len(u) for u in utterances], warmup, repeats, label)


def compare_model_latency(
    models: Mapping[str, tuple[JointTagger, Vocab]],
    utterances: Sequence[Utterance],
    warmup: int = 50,
    repeats: int = 5,
    *,
    threads: int = 1,
) -> list[LatencyReport]:
    """Latency of several decode modes, ``mode -> (model, vocab)``, timed in interleaved sweeps."""
    if threads != 1:
        raise ValueError("latency is measured single-threaded only; refusing threads != 1")
    if not utterances:
        raise ValueError("no utterances to benchmark")
    fns, inputs = {}, {}
    for mode, (model, vocab) in models.items():
        model.eval()
        project = BTagProjector.from_vocab(vocab)
        fns[mode] = lambda b, m=model, mode=mode, p=project: decode_batch(m, b, mode, p)
        inputs[mode] = [collate([u], vocab) for u in utterances]
    lengths = [len(u) for u in utterances]
    with single_thread():
        timings = time_interleaved(fns, inputs, warmup, repeats)
    return [summarize(mode, timings[mode], lengths, warmup, repeats) for mode in models]


def compare_latency(
    checkpoints: Mapping[str, str | Path],
    utterances: Sequence[Utterance],
    warmup: int = 50,
    repeats: int = 5,
    *,
    threads: int = 1,
) -> list[LatencyReport]:
    """:func:`compare_model_latency` over saved models, ``mode -> checkpoint``."""
    from .trainer import load_model

    loaded = {}
    for mode, path in checkpoints.items():
        model, vocab, _ = load_model(path)
        loaded[mode] = (model, vocab)
    return compare_model_latency(loaded, utterances, warmup, repeats, threads=threads)


def measure_latency(
    checkpoint: str | Path,
    utterances: Sequence[Utterance],
    mode: str,
    warmup: int = 50,
    repeats: int = 5,
    *,
    threads: int = 1,
) -> LatencyReport:
    from .trainer import load_model

    model, vocab, _ = load_model(checkpoint)
    return measure_model_latency(model, vocab, utterances, mode, warmup, repeats, threads=threads)


@dataclass
class SpeedupRow:
    label: str
    latency_ms: float
    speedup: float
    long_latency_ms: float | None
    long_speedup: float | None


def speedup_table(reports: Sequence[LatencyReport], reference: str) -> list[SpeedupRow]:
    """Rows ``label, latency, speedup`` with speedup = reference mean / row mean."""
    ref = next((r for r in reports if r.label == reference), None)
    if ref is None:
        raise KeyError(f"reference {reference!r} not among {[r.label for r in reports]}")
    rows = []
    for r in reports:
        long_speedup = None
        if r.long_mean_ms is not None and ref.long_mean_ms is not None:
            long_speedup = ref.long_mean_ms / r.long_mean_ms
        rows.append(SpeedupRow(r.label, r.mean_ms, ref.mean_ms / r.mean_ms, r.long_mean_ms, long_speedup))
    return rows


def format_table(rows: Sequence[SpeedupRow]) -> str:
    header = ("Model", "Latency", "Speedup", f"Latency(len>={LONG_SENTENCE})", "Speedup(long)")
    body = [
        (
            r.label,
            f"{r.latency_ms:.2f}ms",
            f"{r.speedup:.2f}x",
            f"{r.long_latency_ms:.2f}ms" if r.long_latency_ms is not None else "absent",
            f"{r.long_speedup:.2f}x" if r.long_speedup is not None else "absent",
        )
        for r in rows
    ]
    widths = [max(len(line[i]) for line in (header, *body)) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(line, widths))) for line in (header, *body)]
    return "\n".join(lines) + "\n"


def table_csv(rows: Sequence[SpeedupRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "latency_ms", "speedup", "long_latency_ms", "long_speedup"])
    for r in rows:
        w.writerow([r.label, f"{r.latency_ms:.4f}", f"{r.speedup:.4f}", _opt(r.long_latency_ms), _opt(r.long_speedup)])
    return buf.getvalue()


def _opt(x: float | None) -> str:
    return "" if x is None else f"{x:.4f}"
