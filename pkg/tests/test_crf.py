import math
import time

import pytest
import torch

from oracles import brute_force_log_partition, brute_force_paths, random_crf_instance
from refinetag.crf import crf_nll, log_partition, path_score, viterbi
from refinetag.numerics import grad_check


def _zero(t):
    return torch.zeros(t + 2, t + 2, dtype=torch.float64)


def test_single_position_two_tags():
    assert math.isclose(float(log_partition(torch.zeros(1, 2, dtype=torch.float64), _zero(2))), math.log(2))


def test_two_by_two_closed_form():
    em = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    assert math.isclose(float(log_partition(em, _zero(2))), 2 * math.log(1 + math.e), rel_tol=1e-14)


@pytest.mark.parametrize("seed", range(200))
def test_matches_brute_force(seed):
    em, tr = random_crf_instance(seed)
    assert abs(float(log_partition(em, tr)) - brute_force_log_partition(em, tr)) < 1e-8
    best_score, best_path = max(brute_force_paths(em, tr), key=lambda sp: sp[0])
    path, score = viterbi(em, tr)
    assert score == pytest.approx(best_score, abs=1e-12)
    assert float(path_score(em, tr, torch.tensor(path))) == pytest.approx(best_score, abs=1e-12)


def test_partition_bounds_best_path():
    for seed in range(20):
        em, tr = random_crf_instance(seed, max_len=6, max_tags=5)
        _, score = viterbi(em, tr)
        assert float(log_partition(em, tr)) >= score


def test_nll_nonnegative_and_probability_in_unit_interval():
    g = torch.Generator().manual_seed(0)
    for seed in range(30):
        em, tr = random_crf_instance(seed, max_len=5, max_tags=5)
        gold = torch.randint(em.shape[1], (em.shape[0],), generator=g)
        nll = float(crf_nll(em, tr, gold))
        assert nll >= 0
        assert 0 < math.exp(-nll) <= 1


def test_nll_near_zero_for_dominant_gold_path():
    gold = torch.tensor([2, 0, 1])
    em = torch.full((3, 3), -50.0, dtype=torch.float64)
    em[torch.arange(3), gold] = 50.0
    assert float(crf_nll(em, _zero(3), gold)) < 1e-12


def test_batched_matches_single():
    g = torch.Generator().manual_seed(4)
    em = torch.randn(3, 5, 4, generator=g, dtype=torch.float64)
    tr = torch.randn(6, 6, generator=g, dtype=torch.float64)
    lengths = [5, 2, 1]
    mask = torch.arange(5)[None, :] < torch.tensor(lengths)[:, None]
    tags = torch.randint(4, (3, 5), generator=g)
    batched = crf_nll(em, tr, tags, mask)
    for i, n in enumerate(lengths):
        assert float(batched[i]) == pytest.approx(float(crf_nll(em[i, :n], tr, tags[i, :n])), abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_nll_gradient(seed):
    g = torch.Generator().manual_seed(seed)
    em = torch.randn(4, 4, generator=g, dtype=torch.float64, requires_grad=True)
    tr = torch.randn(6, 6, generator=g, dtype=torch.float64, requires_grad=True)
    gold = torch.randint(4, (4,), generator=g)
    report = grad_check(lambda: crf_nll(em, tr, gold), {"em": em, "tr": tr}, samples_per_param=None)
    assert report.ok, report.failures


def test_viterbi_zero_transitions_is_argmax():
    em = torch.randn(7, 5, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    assert viterbi(em, _zero(5))[0] == em.argmax(-1).tolist()


def test_viterbi_exhaustive_3x3():
    em, tr = torch.randn(3, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(9)), None
    tr = torch.randn(5, 5, dtype=torch.float64, generator=torch.Generator().manual_seed(10))
    paths = brute_force_paths(em, tr)
    assert len(paths) == 27
    best_score, best_path = max(paths, key=lambda sp: sp[0])
    assert viterbi(em, tr) == (list(best_path), pytest.approx(best_score, abs=1e-12))


def test_viterbi_ties_pick_lowest_id():
    assert viterbi(torch.zeros(4, 3), _zero(3))[0] == [0, 0, 0, 0]


def test_viterbi_avoids_forbidden_transition():
    # tags: 0=O, 1=B-x, 2=I-x; emissions alone would pick O then I-x
    em = torch.tensor([[2.0, 0.0, 0.0], [0.0, 0.5, 1.0]], dtype=torch.float64)
    tr = _zero(3)
    assert viterbi(em, tr)[0] == [0, 2]
    tr[0, 2] = -100.0
    path = viterbi(em, tr)[0]
    assert (path[0], path[1]) != (0, 2)


def test_viterbi_beats_random_paths():
    g = torch.Generator().manual_seed(2)
    em = torch.randn(10, 6, generator=g, dtype=torch.float64)
    tr = torch.randn(8, 8, generator=g, dtype=torch.float64)
    _, best = viterbi(em, tr)
    for _ in range(1000):
        path = torch.randint(6, (10,), generator=g)
        assert float(path_score(em, tr, path)) <= best + 1e-12


def test_viterbi_rejects_empty():
    with pytest.raises(ValueError):
        viterbi(torch.zeros(0, 3), _zero(3))


def _best_time(em, tr, reps=5):
    viterbi(em, tr)
    best = float("inf")
    for _ in range(reps):
        start = time.perf_counter()
        for _ in range(20):
            viterbi(em, tr)
        best = min(best, time.perf_counter() - start)
    return best


def test_viterbi_quadratic_in_tag_count():
    g = torch.Generator().manual_seed(0)
    length = 200
    small = _best_time(torch.randn(length, 30, generator=g), torch.randn(32, 32, generator=g))
    large = _best_time(torch.randn(length, 120, generator=g), torch.randn(122, 122, generator=g))
    # theory says 16x; accept anything from 8x up
    assert large / small >= 8
