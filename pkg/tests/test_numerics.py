import math
import struct

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from refinetag.numerics import (
    CHECKPOINT_MAGIC,
    ParamStore,
    adam_step,
    cross_entropy,
    cross_entropy_grad,
    grad_check,
    layer_norm,
    load_checkpoint,
    save_checkpoint,
    softmax,
    xavier_init,
)


def test_xavier_bounds():
    w = xavier_init([4, 4], seed=0)
    assert w.abs().max() <= math.sqrt(6 / 8)


def test_xavier_deterministic():
    assert torch.equal(xavier_init([3, 5], seed=1), xavier_init([3, 5], seed=1))
    assert not torch.equal(xavier_init([3, 5], seed=1), xavier_init([3, 5], seed=2))


def test_xavier_mean():
    w = xavier_init([100_000, 1], seed=0)
    assert abs(float(w.mean())) < 0.01


def test_xavier_errors():
    with pytest.raises(ValueError):
        xavier_init([4, 0], seed=0)
    with pytest.raises(ValueError):
        xavier_init([], seed=0)


def test_softmax_examples():
    assert torch.allclose(softmax(torch.zeros(3, dtype=torch.float64)), torch.full((3,), 1 / 3, dtype=torch.float64))
    big = softmax(torch.tensor([1000.0, 0.0]))
    assert torch.isfinite(big).all() and torch.allclose(big, torch.tensor([1.0, 0.0]))
    x = torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64).log()
    assert torch.allclose(softmax(x), torch.tensor([1 / 6, 2 / 6, 3 / 6], dtype=torch.float64), atol=1e-12)


finite_vecs = st.lists(st.floats(-50, 50), min_size=1, max_size=10)


@given(finite_vecs, st.floats(-100, 100))
def test_softmax_shift_invariant(xs, c):
    x = torch.tensor(xs, dtype=torch.float64)
    p = softmax(x)
    assert (p > 0).all()
    assert abs(float(p.sum()) - 1) < 1e-6
    assert torch.allclose(p, softmax(x + c), atol=1e-6)


def test_cross_entropy_examples():
    assert math.isclose(float(cross_entropy(torch.zeros(7, dtype=torch.float64), 3)), math.log(7), rel_tol=1e-12)
    assert float(cross_entropy(torch.tensor([10.0, -10.0]), 0)) < 1e-8
    with pytest.raises(IndexError):
        cross_entropy(torch.zeros(3), 3)


@pytest.mark.parametrize("seed", range(3))
def test_cross_entropy_gradient(seed):
    g = torch.Generator().manual_seed(seed)
    logits = torch.randn(6, generator=g, dtype=torch.float64, requires_grad=True)
    cross_entropy(logits, 2).backward()
    closed = cross_entropy_grad(logits, 2)
    assert torch.allclose(logits.grad, closed, atol=1e-12)
    report = grad_check(lambda: cross_entropy(logits, 2), {"logits": logits}, samples_per_param=None)
    assert report.ok, report.failures


def test_layer_norm_examples():
    gain, bias = torch.ones(5, dtype=torch.float64), torch.arange(5, dtype=torch.float64)
    assert torch.allclose(layer_norm(torch.full((5,), 3.0, dtype=torch.float64), gain, bias), bias)
    x = torch.randn(4, 16, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    y = layer_norm(x, torch.ones(16, dtype=torch.float64), torch.zeros(16, dtype=torch.float64))
    assert torch.allclose(y.mean(-1), torch.zeros(4, dtype=torch.float64), atol=1e-9)
    assert torch.allclose(y.var(-1, unbiased=False), torch.ones(4, dtype=torch.float64), atol=1e-4)


def test_layer_norm_gradient():
    g = torch.Generator().manual_seed(1)
    x = torch.randn(3, 6, generator=g, dtype=torch.float64, requires_grad=True)
    gain = (1 + 0.1 * torch.randn(6, generator=g, dtype=torch.float64)).requires_grad_()
    bias = torch.randn(6, generator=g, dtype=torch.float64, requires_grad=True)
    w = torch.randn(3, 6, generator=g, dtype=torch.float64)
    report = grad_check(lambda: (layer_norm(x, gain, bias) * w).sum(), {"x": x, "gain": gain, "bias": bias},
                        samples_per_param=None)
    assert report.ok, report.failures


def _store(*values):
    return ParamStore({"w": torch.tensor(values, dtype=torch.float64, requires_grad=True)})


def test_adam_zero_gradient_keeps_params():
    store = _store(1.0, -2.0)
    store.params["w"].grad = torch.zeros(2, dtype=torch.float64)
    adam_step(store)
    assert store.params["w"].tolist() == [1.0, -2.0]


def test_adam_descends():
    store = _store(1.0)
    w = store.params["w"]
    (w**2).sum().backward()
    adam_step(store, lr=0.001)
    assert float(w.detach()) < 1.0


def test_adam_rejects_bad_step():
    store = _store(1.0)
    store.params["w"].grad = torch.ones(1, dtype=torch.float64)
    with pytest.raises(ValueError):
        adam_step(store, t=0)


def test_adam_converges_on_quadratic():
    # f(w) = (w - c)^T A (w - c), minimum at c
    a = torch.tensor([[3.0, 0.5], [0.5, 1.0]], dtype=torch.float64)
    c = torch.tensor([0.7, -1.3], dtype=torch.float64)
    store = _store(0.0, 0.0)
    w = store.params["w"]
    for _ in range(2000):
        store.zero_grad()
        d = w - c
        (d @ a @ d).backward()
        adam_step(store, lr=0.01)
    assert float((w - c).norm()) < 1e-3


def test_adam_deterministic():
    runs = []
    for _ in range(2):
        store = _store(0.5, 0.25)
        for _ in range(5):
            store.zero_grad()
            (store.params["w"] ** 3).sum().backward()
            adam_step(store)
        runs.append(store.params["w"].detach().clone())
    assert torch.equal(*runs)


def test_grad_check_linear_regression():
    g = torch.Generator().manual_seed(0)
    x = torch.randn(20, 3, generator=g, dtype=torch.float64)
    y = torch.randn(20, generator=g, dtype=torch.float64)
    w = torch.randn(3, generator=g, dtype=torch.float64, requires_grad=True)
    b = torch.zeros(1, dtype=torch.float64, requires_grad=True)
    loss = lambda: ((x @ w + b - y) ** 2).mean()  # noqa: E731
    closed_w = 2 * x.T @ (x @ w.detach() + b.detach() - y) / 20
    closed_b = (2 * (x @ w.detach() + b.detach() - y)).mean().reshape(1)
    report = grad_check(loss, {"w": w, "b": b}, tolerance=1e-6, samples_per_param=None,
                        analytic={"w": closed_w, "b": closed_b})
    assert report.ok and report.checked == 4


def test_grad_check_flags_corrupted_gradient():
    w = torch.tensor([1.0, 2.0], dtype=torch.float64, requires_grad=True)
    report = grad_check(lambda: (w**2).sum(), {"w": w}, samples_per_param=None,
                        analytic={"w": torch.tensor([2.0, 4.5], dtype=torch.float64)})
    assert not report.ok
    assert [f[:2] for f in report.failures] == [("w", (1,))]


def test_grad_check_requires_float64():
    w = torch.ones(2, requires_grad=True)
    with pytest.raises(TypeError):
        grad_check(lambda: w.sum(), {"w": w})


def test_checkpoint_layout(tmp_path):
    path = save_checkpoint(tmp_path / "m.slrf", {"ab": torch.tensor([[1.0, 2.0, 3.0]])})
    raw = path.read_bytes()
    expected = CHECKPOINT_MAGIC + struct.pack("<I", 2) + b"ab" + struct.pack("<III", 2, 1, 3) + struct.pack("<3f", 1, 2, 3)
    assert raw == expected


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.integers(1, 4), min_size=0, max_size=3), min_size=1, max_size=4), st.integers(0, 2**31))
def test_checkpoint_bit_exact_round_trip(tmp_path_factory, shapes, seed):
    g = torch.Generator().manual_seed(seed)
    tensors = {f"t{i}.weight": torch.randn(s, generator=g) for i, s in enumerate(shapes)}
    path = save_checkpoint(tmp_path_factory.mktemp("ckpt") / "m.slrf", tensors)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(tensors)
    for name, t in tensors.items():
        assert loaded[name].shape == t.shape
        assert loaded[name].numpy().tobytes() == t.numpy().tobytes()
    # resaving reproduces the file byte for byte
    again = save_checkpoint(path.with_name("again.slrf"), loaded)
    assert again.read_bytes() == path.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad")
    good = save_checkpoint(tmp_path / "m.slrf", {"x": torch.ones(4)})
    (tmp_path / "trunc").write_bytes(good.read_bytes()[:-2])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(tmp_path / "trunc")
