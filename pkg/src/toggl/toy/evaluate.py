"""Held-out evaluation of the toy model, shaped like a per-condition WER table."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from ..codec import count_control_tokens, deserialize
from ..scoring import ScoreReport, oracle_k_wer, pit_wer, pooled
from .model import ToyModelParams, decode_greedy
from .task import RenderedItem, SyntheticTask, make_eval_set

DEFAULT_CONDITIONS = (1, 2, 3)

# stream decoder: items -> one TOGGL stream per item
Decoder = Callable[[Sequence[RenderedItem]], list[Sequence[str]]]


@dataclass
class ConditionResult:
    n_mix: int
    items: int
    report: ScoreReport
    exact_match: float
    stream_count_match: float
    no_control_rate: float
    truncated: int = 0
    baseline: ScoreReport | None = None
    per_item: list[ScoreReport] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = {
            "n_mix": self.n_mix,
            "items": self.items,
            "wer": self.report.wer,
            "exact_match": self.exact_match,
            "stream_count_match": self.stream_count_match,
            "no_control_rate": self.no_control_rate,
            "truncated": self.truncated,
        }
        d.update(self.report.counts())
        if self.baseline is not None:
            d["baseline_wer"] = self.baseline.wer
        return d


def score_streams(items: Sequence[RenderedItem], streams: Sequence[Sequence[str]], n_mix: int,
                  baseline_streams: Sequence[Sequence[str]] | None = None, truncated: int = 0) -> ConditionResult:
    reports, exact, count_ok, no_ctrl = [], 0, 0, 0
    for item, stream in zip(items, streams):
        refs = item.reference_streams()
        hyps = deserialize(stream, "lenient")
        rep = pit_wer(refs, hyps)
        reports.append(rep)
        count_ok += len(hyps) == len(refs)
        exact += rep.errors == 0 and len(hyps) == len(refs)
        no_ctrl += count_control_tokens(stream) == 0
    baseline = None
    if baseline_streams is not None:
        baseline = pooled([
            oracle_k_wer(item.reference_streams(), deserialize(s, "lenient"), 1)
            for item, s in zip(items, baseline_streams)
        ])
    n = max(1, len(items))
    return ConditionResult(n_mix, len(items), pooled(reports), exact / n, count_ok / n, no_ctrl / n,
                           truncated, baseline, reports)


def model_decoder(model: ToyModelParams, max_len: int = 40, control_cap: int | None = 3,
                  allow_control: bool = True, batch_size: int = 100) -> Decoder:
    def run(items):
        out = []
        for i in range(0, len(items), batch_size):
            chunk = items[i : i + batch_size]
            out.extend(decode_greedy(model, [it.frames for it in chunk], max_len, control_cap, allow_control))
        return out

    return run


def evaluate(
    model: ToyModelParams,
    task: SyntheticTask,
    conditions: Sequence[int] = DEFAULT_CONDITIONS,
    count: int = 200,
    seed: int = 1000,
    max_len: int = 40,
    baseline: bool = True,
) -> list[ConditionResult]:
    """Decode freshly generated held-out sets and score each with PIT WER.

    The baseline decodes the same model with control tokens forbidden and
    scores the single stream against its best-matching reference speaker.
    """
    cap = task.max_speakers - 1
    results = []
    for n_mix in conditions:
        items = make_eval_set(task, n_mix, count, seed)
        decoded = model_decoder(model, max_len, cap)(items)
        base = model_decoder(model, max_len, cap, allow_control=False)(items) if baseline else None
        results.append(score_streams(
            items,
            [d.stream for d in decoded],
            n_mix,
            [d.stream for d in base] if base else None,
            sum(d.truncated for d in decoded),
        ))
    return results


def table_rows(results: Sequence[ConditionResult], name: str = "toggl") -> list[dict]:
    """Two rows (model, no-toggle baseline) with one WER column per condition."""
    row = {"system": name}
    base = {"system": "no-toggle (oracle k=1)*"}
    for r in results:
        row[f"{r.n_mix}-mix"] = r.report.wer
        base[f"{r.n_mix}-mix"] = r.baseline.wer if r.baseline is not None else None
    return [row, base] if any(r.baseline is not None for r in results) else [row]
