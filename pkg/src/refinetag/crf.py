"""Linear-chain CRF over slot logits.

Transition scores form a ``(T + 2, T + 2)`` matrix indexed ``[from, to]``; the
last two states are the virtual START (``T``) and STOP (``T + 1``).
Training uses the batched forward recursion in torch so gradients come from
autodiff; decoding runs a compiled Viterbi on numpy arrays.
"""

from __future__ import annotations

import numba
import numpy as np
import torch


def _split(transitions: torch.Tensor, num_tags: int):
    return (
        transitions[:num_tags, :num_tags],
        transitions[num_tags, :num_tags],  # START -> tag
        transitions[:num_tags, num_tags + 1],  # tag -> STOP
    )


def _as_batch(emissions, mask):
    single = emissions.dim() == 2
    if single:
        emissions = emissions.unsqueeze(0)
    if mask is None:
        mask = torch.ones(emissions.shape[:2], dtype=torch.bool)
    elif single:
        mask = mask.unsqueeze(0)
    return single, emissions, mask.bool()


def log_partition(
    emissions: torch.Tensor, transitions: torch.Tensor, mask: torch.Tensor | None = None
) -> torch.Tensor:
    """Log-sum-exp of all path scores. ``emissions`` is ``(l, T)`` or ``(B, L, T)``.

    Masks must be left-aligned (every row starts with at least one real position).
    """
    single, em, mask = _as_batch(emissions, mask)
    trans, start, stop = _split(transitions, em.shape[-1])
    alpha = start + em[:, 0]
    for t in range(1, em.shape[1]):
        nxt = torch.logsumexp(alpha.unsqueeze(2) + trans, dim=1) + em[:, t]
        alpha = torch.where(mask[:, t, None], nxt, alpha)
    z = torch.logsumexp(alpha + stop, dim=-1)
    return z[0] if single else z


def path_score(
    emissions: torch.Tensor, transitions: torch.Tensor, tags: torch.Tensor, mask: torch.Tensor | None = None
) -> torch.Tensor:
    single, em, mask = _as_batch(emissions, mask)
    tags = torch.as_tensor(tags, dtype=torch.long)
    if single:
        tags = tags.unsqueeze(0)
    trans, start, stop = _split(transitions, em.shape[-1])
    m = mask.to(em.dtype)
    score = start[tags[:, 0]]
    score = score + (em.gather(2, tags.unsqueeze(2)).squeeze(2) * m).sum(1)
    if tags.shape[1] > 1:
        score = score + (trans[tags[:, :-1], tags[:, 1:]] * m[:, 1:]).sum(1)
    last = tags.gather(1, (mask.sum(1) - 1).clamp(min=0).unsqueeze(1)).squeeze(1)
    score = score + stop[last]
    return score[0] if single else score


def crf_nll(
    emissions: torch.Tensor, transitions: torch.Tensor, tags: torch.Tensor, mask: torch.Tensor | None = None
) -> torch.Tensor:
    """``log Z - score(gold)``, per utterance for batched input."""
    return log_partition(emissions, transitions, mask) - path_score(emissions, transitions, tags, mask)


@numba.njit(cache=True)
def _viterbi(em, trans, start, stop):
    length, num_tags = em.shape
    score = start + em[0]
    nxt = np.empty(num_tags)
    back = np.zeros((length, num_tags), dtype=np.int64)
    for t in range(1, length):
        for j in range(num_tags):
            best = score[0] + trans[0, j]
            arg = 0
            for i in range(1, num_tags):
                c = score[i] + trans[i, j]
                if c > best:  # strict: ties keep the lowest id
                    best = c
                    arg = i
            nxt[j] = best + em[t, j]
            back[t, j] = arg
        score[:] = nxt
    score += stop
    path = np.empty(length, dtype=np.int64)
    path[-1] = np.argmax(score)
    best = score[path[-1]]
    for t in range(length - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, best


def viterbi(emissions, transitions) -> tuple[list[int], float]:
    """Best path for one ``(l, T)`` emission matrix and its score."""
    em = np.ascontiguousarray(_numpy(emissions), dtype=np.float64)
    full = np.ascontiguousarray(_numpy(transitions), dtype=np.float64)
    if em.ndim != 2 or em.shape[0] < 1:
        raise ValueError("viterbi needs a non-empty (l, T) emission matrix")
    t = em.shape[1]
    path, best = _viterbi(em, np.ascontiguousarray(full[:t, :t]), full[t, :t].copy(), full[:t, t + 1].copy())
    return path.tolist(), float(best)


def _numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)
