"""Numerical kernels on top of torch tensors.

torch supplies storage and reverse-mode autodiff; this module owns the pieces the
model contract pins down: initialisation, the loss primitives, the optimizer step,
finite-difference verification and the ``SLRF1`` checkpoint container.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np
import torch

CHECKPOINT_MAGIC = b"SLRF1"
LN_EPS = 1e-6


class DivergenceError(FloatingPointError):
    """Raised when training produces a non-finite loss."""


def xavier_init(shape: Iterable[int], seed: int | torch.Generator, dtype=torch.float32) -> torch.Tensor:
    """Glorot uniform. For rank 1 the single dim is both fan-in and fan-out."""
    shape = tuple(int(d) for d in shape)
    if not shape:
        raise ValueError("xavier_init needs rank >= 1")
    if any(d <= 0 for d in shape):
        raise ValueError(f"xavier_init: zero or negative dim in {shape}")
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        receptive = math.prod(shape[2:])
        fan_out, fan_in = shape[0] * receptive, shape[1] * receptive
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    gen = seed if isinstance(seed, torch.Generator) else torch.Generator().manual_seed(seed)
    return (torch.rand(shape, generator=gen, dtype=torch.float64) * 2 - 1).mul_(bound).to(dtype)


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    z = x - x.max(dim=dim, keepdim=True).values.detach()
    e = z.exp()
    return e / e.sum(dim=dim, keepdim=True)


def log_softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    z = x - x.max(dim=dim, keepdim=True).values.detach()
    return z - z.exp().sum(dim=dim, keepdim=True).log()


def cross_entropy(logits: torch.Tensor, gold: torch.Tensor | int) -> torch.Tensor:
    """Per-row ``-log softmax(logits)[gold]``; logits ``(..., C)``, gold ``(...)``."""
    gold = torch.as_tensor(gold, dtype=torch.long)
    num_classes = logits.shape[-1]
    if gold.numel() and (int(gold.min()) < 0 or int(gold.max()) >= num_classes):
        raise IndexError(f"gold class out of range for {num_classes} classes")
    return -log_softmax(logits).gather(-1, gold.unsqueeze(-1)).squeeze(-1)


def cross_entropy_grad(logits: torch.Tensor, gold: int) -> torch.Tensor:
    """Closed-form gradient of :func:`cross_entropy` for one logit vector."""
    g = softmax(logits.detach())
    g[gold] -= 1
    return g


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = LN_EPS) -> torch.Tensor:
    mean = x.mean(dim=-1, keepdim=True)
    centered = x - mean
    var = centered.pow(2).mean(dim=-1, keepdim=True)
    return centered / torch.sqrt(var + eps) * gain + bias


@dataclass
class ParamStore:
    """Named parameters plus Adam moment buffers.

    Wraps the parameters of an ``nn.Module`` (or any name -> tensor mapping with
    ``requires_grad``); gradients live in ``tensor.grad`` as usual in torch.
    """

    params: dict[str, torch.Tensor]
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def from_module(cls, module: torch.nn.Module) -> "ParamStore":
        return cls(dict(module.named_parameters()))

    def __post_init__(self):
        for name, p in self.params.items():
            self.exp_avg.setdefault(name, torch.zeros_like(p, memory_format=torch.preserve_format))
            self.exp_avg_sq.setdefault(name, torch.zeros_like(p, memory_format=torch.preserve_format))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.params.values())


@torch.no_grad()
def adam_step(
    store: ParamStore,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.98),
    eps: float = 1e-9,
    t: int | None = None,
) -> ParamStore:
    """One bias-corrected Adam update in place. ``t`` defaults to ``store.step + 1``."""
    t = store.step + 1 if t is None else t
    if t < 1:
        raise ValueError("adam step count t must be >= 1")
    b1, b2 = betas
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for name, p in store.params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = store.exp_avg[name].mul_(b1).add_(g, alpha=1 - b1)
        v = store.exp_avg_sq[name].mul_(b2).addcmul_(g, g, value=1 - b2)
        denom = (v / c2).sqrt_().add_(eps)
        p.addcdiv_(m, denom, value=-lr / c1)
    store.step = t
    return store


@dataclass
class GradCheckReport:
    checked: int
    max_rel_error: float
    failures: list[tuple[str, tuple[int, ...], float, float]]

    @property
    def ok(self) -> bool:
        return not self.failures


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    tolerance: float = 1e-4,
    *,
    step: float = 1e-3,
    zero_tol: float = 1e-10,
    samples_per_param: int | None = 12,
    seed: int = 0,
    analytic: Mapping[str, torch.Tensor] | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients with five-point finite differences.

    ``loss_fn`` must rebuild the scalar loss from the current parameter values.
    Parameters must be float64. ``analytic`` overrides the autodiff gradients,
    which is how a corrupted gradient is fed to the harness. Relative error is
    ``|a - n| / max(1e-8, |n|)``. The fourth-order stencil keeps truncation and
    roundoff near 1e-12 at ``step=1e-3``; a coordinate whose analytic and numeric
    values are both below ``zero_tol`` is an exact zero and passes.
    """
    for name, p in params.items():
        if p.dtype != torch.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name} is {p.dtype}")
    if analytic is None:
        for p in params.values():
            p.grad = None
        loss_fn().backward()
        analytic = {n: (p.grad.clone() if p.grad is not None else torch.zeros_like(p)) for n, p in params.items()}

    gen = torch.Generator().manual_seed(seed)
    failures = []
    worst = 0.0
    checked = 0

    def at(flat, c, value):
        flat[c] = value
        return loss_fn().item()

    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            n = flat.numel()
            if samples_per_param is None or samples_per_param >= n:
                coords = range(n)
            else:
                coords = torch.randperm(n, generator=gen)[:samples_per_param].tolist()
            a_flat = analytic[name].reshape(-1)
            for c in coords:
                x = flat[c].item()
                near = at(flat, c, x + step) - at(flat, c, x - step)
                far = at(flat, c, x + 2 * step) - at(flat, c, x - 2 * step)
                flat[c] = x
                numeric = (8 * near - far) / (12 * step)
                a = a_flat[c].item()
                checked += 1
                if abs(a) < zero_tol and abs(numeric) < zero_tol:
                    continue
                rel = abs(a - numeric) / max(1e-8, abs(numeric))
                worst = max(worst, rel)
                if rel >= tolerance:
                    idx = tuple(int(i) for i in torch.unravel_index(torch.tensor(c), p.shape))
                    failures.append((name, idx, a, numeric))
    return GradCheckReport(checked, worst, failures)


def save_checkpoint(path: str | Path, tensors: Mapping[str, torch.Tensor]) -> Path:
    """Write the ``SLRF1`` container: magic, then per tensor
    ``u32 name_len | name | u32 rank | u32 dims... | f32 values`` (little endian)."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        for name, t in tensors.items():
            raw = name.encode("utf-8")
            arr = t.detach().to(torch.float32).contiguous().cpu().numpy()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4", copy=False).tobytes(order="C"))
    return path


def load_checkpoint(path: str | Path) -> dict[str, torch.Tensor]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not an SLRF1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    out: dict[str, torch.Tensor] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ValueError(f"{path}: truncated checkpoint")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = math.prod(dims)
        values = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims)
        if name in out:
            raise ValueError(f"{path}: duplicate tensor {name!r}")
        out[name] = torch.from_numpy(values.astype(np.float32))
    return out
