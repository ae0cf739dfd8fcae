import itertools
import math

import numpy as np
import pytest

from toggl.codec import NEXT, PREV
from toggl.ctc import (
    ctc_feasible,
    ctc_forward_backward,
    ctc_forward_logprob,
    ctc_loss_batch,
    duplicate_frames,
    lattice_tsv,
    make_ctc_target,
)
from toggl.errors import ConfigError, DataError, InfeasibleTargetError


def collapse(path, blank=0):
    out, prev = [], None
    for p in path:
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return out


def brute_logprob(probs, target):
    """Sum the probability of every length-T path that collapses to target."""
    T, V = probs.shape
    total = 0.0
    for path in itertools.product(range(V), repeat=T):
        if collapse(path) == list(target):
            total += math.prod(probs[t, k] for t, k in enumerate(path))
    return math.log(total) if total > 0 else -math.inf


def random_probs(rng, T, V):
    p = rng.random((T, V)) + 0.05
    return p / p.sum(1, keepdims=True)


# -- duplication and feasibility ------------------------------------------


def test_duplicate_frames():
    e = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = duplicate_frames(e, 3)
    np.testing.assert_array_equal(out, e[[0, 0, 0, 1, 1, 1]])
    np.testing.assert_array_equal(duplicate_frames(e, 1), e)
    assert len(duplicate_frames(np.zeros((7, 4)), 2)) == 14
    np.testing.assert_array_equal(duplicate_frames(e, 2, mode="block"), e[[0, 1, 0, 1]])
    with pytest.raises(ConfigError):
        duplicate_frames(e, 0)


def test_duplicate_index_rule():
    x = np.arange(5)
    for n in (1, 2, 3, 4):
        out = duplicate_frames(x, n)
        assert all(out[k] == x[k // n] for k in range(len(out)))


def test_feasibility():
    assert ctc_feasible(3, [1, 2, 3])
    assert not ctc_feasible(2, [1, 1])
    assert ctc_feasible(len(duplicate_frames(np.zeros(2), 2)), [1, 1])
    assert ctc_feasible(0, [])


def test_feasibility_matches_enumeration():
    for T in range(1, 5):
        for L in range(0, 4):
            for target in itertools.product([1, 2], repeat=L):
                reachable = any(collapse(p) == list(target) for p in itertools.product(range(3), repeat=T))
                assert ctc_feasible(T, target) == reachable


# -- forward --------------------------------------------------------------


def test_forward_single_frame():
    probs = np.array([[0.4, 0.6]])
    assert ctc_forward_logprob(probs, [1]) == pytest.approx(math.log(0.6), abs=1e-12)


def test_forward_two_frames():
    probs = np.array([[0.4, 0.6], [0.4, 0.6]])
    expected = brute_logprob(probs, [1])
    assert expected == pytest.approx(math.log(0.84))
    assert ctc_forward_logprob(probs, [1]) == pytest.approx(expected, abs=1e-12)


def test_forward_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        T, V = int(rng.integers(1, 6)), int(rng.integers(2, 4))
        L = int(rng.integers(0, 4))
        target = [int(x) for x in rng.integers(1, V, size=L)]
        if not ctc_feasible(T, target):
            continue
        probs = random_probs(rng, T, V)
        assert ctc_forward_logprob(probs, target) == pytest.approx(brute_logprob(probs, target), abs=1e-10)


def test_forward_errors():
    probs = np.full((2, 3), 1 / 3)
    with pytest.raises(InfeasibleTargetError):
        ctc_forward_logprob(probs, [1, 1])
    with pytest.raises(DataError):
        ctc_forward_logprob(probs, [0])
    with pytest.raises(DataError):
        ctc_forward_logprob(probs, [3])


def test_forward_floor_keeps_log_finite():
    probs = np.zeros((3, 3))
    probs[:, 0] = 1.0
    value = ctc_forward_logprob(probs, [1])
    assert np.isfinite(value) and value < -60


def test_long_sequences_stay_finite():
    rng = np.random.default_rng(1)
    T, V = 1000, 50
    probs = random_probs(rng, T, V)
    target = [int(x) for x in rng.integers(1, V, size=300)]
    assert np.isfinite(ctc_forward_logprob(probs, target))


def test_logprobs_non_positive_and_partition_unity():
    # every path collapses to exactly one labeling, so the masses sum to 1
    rng = np.random.default_rng(2)
    for _ in range(20):
        T, V = 4, 3
        probs = random_probs(rng, T, V)
        total = 0.0
        for L in range(T + 1):
            for tgt in itertools.product(range(1, V), repeat=L):
                if ctc_feasible(T, tgt):
                    lp = ctc_forward_logprob(probs, tgt)
                    assert lp <= 0.0
                    total += math.exp(lp)
        assert total == pytest.approx(1.0, abs=1e-12)


def test_logprob_not_monotone_in_target_length():
    # frames that clearly say "1 2 1" make the longer target more likely
    probs = np.array([[0.01, 0.98, 0.01], [0.01, 0.01, 0.98], [0.01, 0.98, 0.01]])
    assert ctc_forward_logprob(probs, [1, 2, 1]) > ctc_forward_logprob(probs, [1])


# -- gradients ------------------------------------------------------------


def test_forward_backward_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(10):
        T, V = 5, 4
        lp = np.log(random_probs(rng, T, V))
        target = [1, 2, 2]
        logp, grad = ctc_forward_backward(lp, target)
        assert logp == pytest.approx(ctc_forward_logprob(np.exp(lp), target), abs=1e-12)
        eps = 1e-6
        num = np.zeros_like(lp)
        for t in range(T):
            for k in range(V):
                d = np.zeros_like(lp)
                d[t, k] = eps
                num[t, k] = (ctc_forward_backward(lp + d, target)[0] - ctc_forward_backward(lp - d, target)[0]) / (2 * eps)
        np.testing.assert_allclose(grad, num, atol=1e-7)


def test_batch_matches_single():
    rng = np.random.default_rng(4)
    B, T, V = 6, 9, 5
    lp = np.log(rng.dirichlet(np.ones(V), size=(B, T)))
    lengths = [9, 7, 4, 9, 1, 6]
    targets = [[1, 2, 3], [4, 4], [2], [1, 2, 1, 2, 1], [], [3, 3, 3]]
    nll, grad = ctc_loss_batch(lp, lengths, targets)
    for b in range(B):
        logp, g = ctc_forward_backward(lp[b, : lengths[b]], targets[b])
        assert nll[b] == pytest.approx(-logp, abs=1e-10)
        np.testing.assert_allclose(grad[b, : lengths[b]], -g, atol=1e-10)
        assert np.all(grad[b, lengths[b] :] == 0)


def test_batch_rejects_infeasible():
    with pytest.raises(InfeasibleTargetError):
        ctc_loss_batch(np.zeros((1, 2, 3)), [2], [[1, 1]])


# -- targets --------------------------------------------------------------


def test_make_ctc_target():
    vocab = {"a": 1, "x": 2}
    assert make_ctc_target(["a", NEXT, "x"], vocab) == [1, 2]
    assert make_ctc_target([NEXT, PREV, NEXT], vocab) == []
    assert ctc_feasible(1, make_ctc_target([NEXT, PREV], vocab))
    assert make_ctc_target(["x", "a", "a"], vocab) == [2, 1, 1]
    with pytest.raises(DataError):
        make_ctc_target(["b"], vocab)
    with pytest.raises(DataError):
        make_ctc_target(["a"], {"a": 0})


def test_lattice_tsv():
    text = lattice_tsv(np.full((2, 2), 0.5), [1])
    lines = text.strip().split("\n")
    assert lines[0] == "t\tstate\tlabel\tlog_alpha"
    assert len(lines) == 1 + 2 * 3
