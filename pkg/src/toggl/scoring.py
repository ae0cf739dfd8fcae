"""Multi-speaker WER with permutation-optimal stream assignment.

Reference speakers and hypothesis streams are maps from integer index to a
token list.  Errors are pooled as substitution/insertion/deletion counts so
that per-utterance reports can be summed into corpus or per-bucket totals.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataError

Streams = Mapping[int, Sequence[str]]

EXHAUSTIVE_MAX_ARITY = 5
DEFAULT_BUCKET_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass
class ScoreReport:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_words: int = 0
    # hypothesis stream -> reference speaker (None when matched to padding)
    assignment: dict[int, int | None] = field(default_factory=dict)
    oracle: bool = False
    ref_subset: tuple[int, ...] | None = None

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        if self.ref_words == 0:
            return 0.0 if self.errors == 0 else float("inf")
        return self.errors / self.ref_words

    def __add__(self, other: "ScoreReport") -> "ScoreReport":
        return ScoreReport(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.ref_words + other.ref_words,
            oracle=self.oracle or other.oracle,
        )

    def counts(self) -> dict:
        return {
            "substitutions": self.substitutions,
            "insertions": self.insertions,
            "deletions": self.deletions,
            "ref_words": self.ref_words,
            "wer": self.wer,
        }

    def to_dict(self) -> dict:
        d = self.counts()
        d["assignment"] = {str(k): v for k, v in sorted(self.assignment.items())}
        d["oracle"] = self.oracle
        if self.ref_subset is not None:
            d["ref_subset"] = list(self.ref_subset)
        return d


def pooled(reports: Sequence[ScoreReport]) -> ScoreReport:
    total = ScoreReport()
    for r in reports:
        total = total + r
    return total


def edit_distance(ref: Sequence, hyp: Sequence) -> tuple[int, int, int]:
    """Return (substitutions, insertions, deletions) of a minimal alignment.

    Among minimal-cost alignments the one with the most substitutions wins,
    so a mismatch is never split into an insertion plus a deletion.
    """
    n, m = len(ref), len(hyp)
    # cells hold (cost, -subs, subs, ins, dels); tuple order gives the tie-break
    prev = [(j, 0, 0, j, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, 0, 0, i)]
        r = ref[i - 1]
        for j in range(1, m + 1):
            d = prev[j - 1]
            if r == hyp[j - 1]:
                diag = d
            else:
                diag = (d[0] + 1, d[1] - 1, d[2] + 1, d[3], d[4])
            u = prev[j]
            up = (u[0] + 1, u[1], u[2], u[3], u[4] + 1)
            lf = cur[j - 1]
            left = (lf[0] + 1, lf[1], lf[2], lf[3] + 1, lf[4])
            cur.append(min(diag, up, left))
        prev = cur
    _, _, s, ins, dels = prev[m]
    return s, ins, dels


def _as_streams(streams: Streams) -> dict[int, list]:
    out = {}
    for k, v in streams.items():
        k = int(k)
        if k < 0:
            raise DataError(f"stream indices must be non-negative, got {k}")
        out[k] = list(v)
    return dict(sorted(out.items()))


def _best_assignment(cost: np.ndarray) -> tuple[int, ...]:
    """Column for each row minimizing total cost; first permutation wins ties."""
    n = cost.shape[0]
    if n <= EXHAUSTIVE_MAX_ARITY:
        best, best_perm = None, None
        rows = np.arange(n)
        for perm in itertools.permutations(range(n)):
            total = cost[rows, perm].sum()
            if best is None or total < best:
                best, best_perm = total, perm
        return tuple(best_perm)
    rows, cols = linear_sum_assignment(cost)
    return tuple(int(c) for c in cols[np.argsort(rows)])


def pit_wer(refs: Streams, hyps: Streams) -> ScoreReport:
    """WER under the hypothesis-to-reference assignment with fewest errors."""
    refs = _as_streams(refs)
    hyps = _as_streams(hyps)
    if not refs:
        raise DataError("reference set is empty")
    ref_keys = list(refs)
    hyp_keys = list(hyps)
    n = max(len(ref_keys), len(hyp_keys))
    ref_lists = [refs[k] for k in ref_keys] + [[]] * (n - len(ref_keys))
    hyp_lists = [hyps[k] for k in hyp_keys] + [[]] * (n - len(hyp_keys))

    table = [[edit_distance(r, h) for r in ref_lists] for h in hyp_lists]
    cost = np.array([[sum(c) for c in row] for row in table], dtype=np.int64)
    perm = _best_assignment(cost)

    report = ScoreReport(ref_words=sum(len(r) for r in ref_lists))
    for hi, ri in enumerate(perm):
        s, ins, dels = table[hi][ri]
        report.substitutions += s
        report.insertions += ins
        report.deletions += dels
        if hi < len(hyp_keys):
            report.assignment[hyp_keys[hi]] = ref_keys[ri] if ri < len(ref_keys) else None
    return report


def fixed_order_wer(refs: Streams, hyps: Streams) -> ScoreReport:
    """WER with hypothesis stream i scored against reference speaker i."""
    refs = _as_streams(refs)
    hyps = _as_streams(hyps)
    if not refs:
        raise DataError("reference set is empty")
    report = ScoreReport(ref_words=sum(len(r) for r in refs.values()))
    for k in sorted(set(refs) | set(hyps)):
        s, ins, dels = edit_distance(refs.get(k, []), hyps.get(k, []))
        report.substitutions += s
        report.insertions += ins
        report.deletions += dels
        if k in hyps:
            report.assignment[k] = k if k in refs else None
    return report


def oracle_k_wer(refs: Streams, hyps: Streams, k: int) -> ScoreReport:
    """Optimistic WER against the k reference speakers that suit the hypothesis best.

    Subsets are ranked by WER, then by raw error count, then by index order.
    """
    refs = _as_streams(refs)
    hyps = _as_streams(hyps)
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if k > len(refs):
        raise DataError(f"k={k} exceeds the {len(refs)} reference speakers")
    if len(hyps) > k:
        raise DataError(f"hypothesis has {len(hyps)} streams, more than k={k}")
    best, best_key = None, None
    for subset in itertools.combinations(sorted(refs), k):
        report = pit_wer({i: refs[i] for i in subset}, hyps)
        key = (report.wer, report.errors)
        if best is None or key < best_key:
            best, best_key = report, key
            best.ref_subset = subset
    best.oracle = True
    return best


@dataclass
class BucketRow:
    low: float
    high: float
    utterances: int
    report: ScoreReport

    @property
    def label(self) -> str:
        return f"{round(self.low * 100):d}-{round(self.high * 100):d}"

    def to_dict(self) -> dict:
        d = {"bucket": self.label, "low": self.low, "high": self.high, "utterances": self.utterances}
        d.update(self.report.counts())
        return d


def bucket_index(fraction: float, edges: Sequence[float]) -> int:
    """Half-open ``[lo, hi)`` buckets, except the last which is closed."""
    for b in range(len(edges) - 1):
        last = b == len(edges) - 2
        if edges[b] <= fraction < edges[b + 1] or (last and fraction == edges[b + 1]):
            return b
    raise DataError(f"overlap fraction {fraction} outside bucket range [{edges[0]}, {edges[-1]}]")


def bucket_report(
    results: Sequence[tuple[ScoreReport, float]],
    edges: Sequence[float] = DEFAULT_BUCKET_EDGES,
) -> list[BucketRow]:
    """Pool error counts per overlap-fraction bucket."""
    edges = [float(e) for e in edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise DataError(f"bucket edges must be strictly increasing, got {edges}")
    rows = [BucketRow(lo, hi, 0, ScoreReport()) for lo, hi in zip(edges, edges[1:])]
    for report, fraction in results:
        if not 0.0 <= fraction <= 1.0:
            raise DataError(f"overlap fraction {fraction} outside [0, 1]")
        row = rows[bucket_index(fraction, edges)]
        row.utterances += 1
        row.report = row.report + report
    return rows
