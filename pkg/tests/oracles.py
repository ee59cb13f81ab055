"""Independent reference computations used as test oracles."""

import itertools
import math
import random

import conlleval
import torch


def conlleval_scores(gold_seqs, pred_seqs):
    """Run the conlleval port over a CoNLL-style file built from the sequences."""
    lines = []
    for gold, pred in zip(gold_seqs, pred_seqs):
        for i, (g, p) in enumerate(zip(gold, pred)):
            lines.append(f"w{i} {g} {p}")
        lines.append("")
    return conlleval.evaluate(lines)["overall"]["chunks"]


def random_tag_file(rng: random.Random, n_sentences=30, types=("city", "date", "airline", "time")):
    """Gold sequences that are well formed, and noisy predictions that may not be."""
    golds, preds = [], []
    tags = ["O"] + [f"{p}-{t}" for t in types for p in "BI"]
    for _ in range(n_sentences):
        length = rng.randint(1, 12)
        gold, prev = [], "O"
        for _ in range(length):
            r = rng.random()
            if r < 0.45:
                tag = "O"
            elif prev != "O" and r < 0.75:
                tag = "I-" + prev[2:]
            else:
                tag = "B-" + rng.choice(types)
            gold.append(tag)
            prev = tag
        pred = [g if rng.random() < 0.8 else rng.choice(tags) for g in gold]
        golds.append(gold)
        preds.append(pred)
    if not any(g != "O" for seq in golds for g in seq):
        golds[0][0] = "B-city"
    return golds, preds


def brute_force_paths(emissions, transitions):
    """All (score, path) pairs by enumeration, START/STOP included."""
    l, t = emissions.shape
    start, stop = t, t + 1
    out = []
    for path in itertools.product(range(t), repeat=l):
        s = transitions[start, path[0]] + emissions[0, path[0]]
        for i in range(1, l):
            s = s + transitions[path[i - 1], path[i]] + emissions[i, path[i]]
        s = s + transitions[path[-1], stop]
        out.append((float(s), path))
    return out


def brute_force_log_partition(emissions, transitions):
    scores = [s for s, _ in brute_force_paths(emissions, transitions)]
    m = max(scores)
    return m + math.log(sum(math.exp(s - m) for s in scores))


def random_crf_instance(seed, max_len=4, max_tags=4):
    g = torch.Generator().manual_seed(seed)
    l = int(torch.randint(1, max_len + 1, (1,), generator=g))
    t = int(torch.randint(1, max_tags + 1, (1,), generator=g))
    em = torch.randn(l, t, generator=g, dtype=torch.float64) * 2
    tr = torch.randn(t + 2, t + 2, generator=g, dtype=torch.float64)
    return em, tr
