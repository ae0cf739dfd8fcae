"""CTC forward/backward in log space, with encoder-frame duplication.

Blank is index 0 everywhere.  Probabilities are floored at ``PROB_FLOOR``
before taking logs so that an impossible emission never propagates -inf.

Frame duplication repeats every encoder frame ``n`` times
(``e1 e1 e2 e2`` for n=2), which multiplies the number of CTC steps
without disturbing time order.  This is what makes targets that are longer
than the frame count alignable.
"""

from __future__ import annotations

from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from .codec import strip_control_tokens
from .errors import ConfigError, DataError, InfeasibleTargetError

BLANK = 0
PROB_FLOOR = 1e-30
NEG_INF = -np.inf

DuplicationMode = Literal["consecutive", "block"]


def duplicate_frames(frames, n: int, mode: DuplicationMode = "consecutive") -> np.ndarray:
    """Repeat each frame ``n`` times along axis 0.

    ``mode="block"`` tiles the whole sequence instead (``e1 e2 e1 e2``); it is
    kept only for experiments and breaks the monotonic time order CTC relies on.
    """
    if int(n) != n or n < 1:
        raise ConfigError(f"duplication factor must be a positive integer, got {n}")
    frames = np.asarray(frames)
    if mode == "consecutive":
        return np.repeat(frames, int(n), axis=0)
    if mode == "block":
        return np.concatenate([frames] * int(n), axis=0)
    raise ConfigError(f"unknown duplication mode {mode!r}")


def min_frames(target: Sequence[int]) -> int:
    """Shortest alignment: one frame per label plus a blank between repeats."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_feasible(num_frames: int, target: Sequence[int]) -> bool:
    return num_frames >= min_frames(target)


def _expand(target: Sequence[int]) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, BLANK, dtype=np.int64)
    ext[1::2] = target
    return ext


def _skip_allowed(ext: np.ndarray) -> np.ndarray:
    """True where state s may be entered from s-2 (distinct non-blank labels)."""
    allow = np.zeros(ext.size, dtype=bool)
    allow[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    return allow


def _check_target(target: Sequence[int], vocab: int) -> np.ndarray:
    target = np.asarray(target, dtype=np.int64).reshape(-1)
    if np.any(target == BLANK):
        raise DataError("CTC target contains the blank index")
    if np.any((target < 0) | (target >= vocab)):
        raise DataError("CTC target index out of vocabulary range")
    return target


def _log_probs(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise DataError("frame posteriors must be a T x V matrix")
    return np.log(np.maximum(probs, PROB_FLOOR))


def forward_lattice(log_probs: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """Log forward variables, shape (T, 2L+1), over the blank-interleaved target."""
    T, V = log_probs.shape
    target = _check_target(target, V)
    if not ctc_feasible(T, target):
        raise InfeasibleTargetError(T, min_frames(target))
    ext = _expand(target)
    S = ext.size
    skip = _skip_allowed(ext)
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = log_probs[0, ext[0]]
    if S > 1:
        alpha[0, 1] = log_probs[0, ext[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[skip] = np.logaddexp(acc[skip], prev[np.flatnonzero(skip) - 2])
        alpha[t] = acc + log_probs[t, ext]
    return alpha


def _final_logprob(alpha_last: np.ndarray) -> float:
    if alpha_last.size == 1:
        return float(alpha_last[-1])
    return float(np.logaddexp(alpha_last[-1], alpha_last[-2]))


def ctc_forward_logprob(probs, target: Sequence[int]) -> float:
    """Log of the total probability of all alignments collapsing to ``target``.

    ``probs`` is a T x V matrix of per-frame posteriors with blank at column 0.
    """
    alpha = forward_lattice(_log_probs(probs), target)
    return _final_logprob(alpha[-1])


def ctc_forward_backward(log_probs: np.ndarray, target: Sequence[int]) -> tuple[float, np.ndarray]:
    """Return ``(log p(target), d log p / d log_probs)`` for one utterance."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    T, V = log_probs.shape
    alpha = forward_lattice(log_probs, target)
    ext = _expand(_check_target(target, V))
    S = ext.size
    skip = _skip_allowed(ext)
    # beta[t, s]: log prob of emitting frames t+1.. given state s at t
    beta = np.full((T, S), NEG_INF)
    beta[-1, -1] = 0.0
    if S > 1:
        beta[-1, -2] = 0.0
    src = np.flatnonzero(skip) - 2
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + log_probs[t + 1, ext]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[src] = np.logaddexp(acc[src], nxt[skip])
        beta[t] = acc
    logp = _final_logprob(alpha[-1])
    occupancy = np.exp(alpha + beta - logp)
    grad = np.zeros((T, V))
    for s in range(S):
        grad[:, ext[s]] += occupancy[:, s]
    return logp, grad


def ctc_loss_batch(
    log_probs: np.ndarray,
    lengths: Sequence[int],
    targets: Sequence[Sequence[int]],
) -> tuple[np.ndarray, np.ndarray]:
    """Negative log-likelihoods and their gradients for a padded batch.

    ``log_probs`` has shape (B, T, V); frames past ``lengths[b]`` are ignored
    and receive zero gradient.  Vectorised over the batch.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    B, T, V = log_probs.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    checked = [_check_target(t, V) for t in targets]
    for b, tgt in enumerate(checked):
        if not ctc_feasible(int(lengths[b]), tgt):
            raise InfeasibleTargetError(int(lengths[b]), min_frames(tgt))
    S = 2 * max((len(t) for t in checked), default=0) + 1
    ext = np.zeros((B, S), dtype=np.int64)
    n_states = np.zeros(B, dtype=np.int64)
    for b, tgt in enumerate(checked):
        e = _expand(tgt)
        ext[b, : e.size] = e
        n_states[b] = e.size
    valid = np.arange(S)[None, :] < n_states[:, None]
    skip = np.zeros((B, S), dtype=bool)
    skip[:, 2:] = (ext[:, 2:] != BLANK) & (ext[:, 2:] != ext[:, :-2]) & valid[:, 2:]
    emit = np.take_along_axis(log_probs, np.broadcast_to(ext[:, None, :], (B, T, S)), axis=2)
    emit = np.where(valid[:, None, :], emit, NEG_INF)
    batch = np.arange(B)
    last = lengths - 1
    end = n_states - 1
    has_label = end >= 1

    alpha = np.full((B, T, S), NEG_INF)
    alpha[:, 0, 0] = emit[:, 0, 0]
    if S > 1:
        alpha[:, 0, 1] = emit[:, 0, 1]
    for t in range(1, T):
        prev = alpha[:, t - 1]
        acc = prev.copy()
        acc[:, 1:] = np.logaddexp(acc[:, 1:], prev[:, :-1])
        acc[:, 2:] = np.where(skip[:, 2:], np.logaddexp(acc[:, 2:], prev[:, :-2]), acc[:, 2:])
        alpha[:, t] = acc + emit[:, t]

    a_last = alpha[batch, last]
    logp = np.where(
        has_label,
        np.logaddexp(a_last[batch, end], a_last[batch, np.maximum(end - 1, 0)]),
        a_last[batch, end],
    )

    final = np.full((B, S), NEG_INF)
    final[batch, end] = 0.0
    final[batch[has_label], end[has_label] - 1] = 0.0
    beta = np.full((B, T, S), NEG_INF)
    for t in range(T - 1, -1, -1):
        if t == T - 1:
            acc = np.full((B, S), NEG_INF)
        else:
            nxt = beta[:, t + 1] + emit[:, t + 1]
            acc = nxt.copy()
            acc[:, :-1] = np.logaddexp(acc[:, :-1], nxt[:, 1:])
            acc[:, :-2] = np.where(skip[:, 2:], np.logaddexp(acc[:, :-2], nxt[:, 2:]), acc[:, :-2])
        beta[:, t] = np.where((last == t)[:, None], final, acc)

    live = (np.arange(T)[None, :, None] < lengths[:, None, None]) & valid[:, None, :]
    with np.errstate(invalid="ignore"):
        occ = np.where(live, np.exp(alpha + beta - logp[:, None, None]), 0.0)
    # scatter state occupancies onto their labels: (B,T,S) @ one-hot (B,S,V)
    onehot = (ext[:, :, None] == np.arange(V)[None, None, :]) & valid[:, :, None]
    grad = occ @ onehot.astype(np.float64)
    return -logp, -grad


def make_ctc_target(stream: Iterable[str], vocab: Mapping[str, int]) -> list[int]:
    """Drop control tokens and map the remaining tokens to vocabulary indices."""
    out = []
    for tok in strip_control_tokens(stream):
        if tok not in vocab:
            raise DataError(f"token {tok!r} is not in the CTC vocabulary")
        idx = int(vocab[tok])
        if idx == BLANK:
            raise DataError(f"token {tok!r} maps to the blank index")
        out.append(idx)
    return out


def lattice_tsv(probs, target: Sequence[int]) -> str:
    """Forward lattice as TSV rows ``t, state, label, log_alpha`` for inspection."""
    alpha = forward_lattice(_log_probs(probs), target)
    ext = _expand(target)
    lines = ["t\tstate\tlabel\tlog_alpha"]
    for t in range(alpha.shape[0]):
        for s in range(alpha.shape[1]):
            lines.append(f"{t}\t{s}\t{int(ext[s])}\t{alpha[t, s]:.6f}")
    return "\n".join(lines) + "\n"
