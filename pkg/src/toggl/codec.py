"""Staggered speaker labels: merge timed transcripts into one token stream.

A stream is a flat tuple of strings.  Lexical tokens are attributed to a
running speaker index that starts at 0; ``[NEXT]`` moves attribution to the
following speaker and ``[PREV]`` to the preceding one.  Skipping speakers is
written as a run of control tokens.

    >>> a = TimedTranscript("A", (TimedToken("a", 0.0), TimedToken("b", 0.4)))
    >>> b = TimedTranscript("B", (TimedToken("x", 0.2), TimedToken("y", 0.5)))
    >>> serialize([a, b])
    ('a', '[NEXT]', 'x', '[PREV]', 'b', '[NEXT]', 'y')
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Literal, Sequence

from .errors import DataError, StreamUnderflowError

NEXT = "[NEXT]"
PREV = "[PREV]"
CONTROL_TOKENS = frozenset((NEXT, PREV))

TogglStream = tuple[str, ...]
SpeakerOrder = tuple[int, ...]
DecodeMode = Literal["strict", "lenient"]

DEFAULT_MAX_PERMUTATION_SPEAKERS = 4


@dataclass(frozen=True)
class TimedToken:
    text: str
    start: float

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text:
            raise DataError(f"token text must be a non-empty string, got {self.text!r}")
        if self.text in CONTROL_TOKENS:
            raise DataError(f"token text {self.text!r} is a reserved control token")
        if not math.isfinite(self.start) or self.start < 0:
            raise DataError(f"token start must be finite and >= 0, got {self.start!r}")


@dataclass(frozen=True)
class TimedTranscript:
    """One speaker's tokens with start times in seconds."""

    speaker_id: Any
    tokens: tuple[TimedToken, ...]
    utt_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        for prev, cur in zip(self.tokens, self.tokens[1:]):
            if cur.start < prev.start:
                raise DataError(
                    f"token start times must be non-decreasing in transcript "
                    f"{self.speaker_id!r}: {prev.start} then {cur.start}"
                )

    @classmethod
    def from_pairs(cls, speaker_id: Any, pairs: Iterable[tuple[str, float]], utt_id: str | None = None):
        return cls(speaker_id, tuple(TimedToken(t, float(s)) for t, s in pairs), utt_id)

    @property
    def texts(self) -> list[str]:
        return [tok.text for tok in self.tokens]

    def shifted(self, offset: float) -> "TimedTranscript":
        return TimedTranscript(
            self.speaker_id,
            tuple(TimedToken(tok.text, tok.start + offset) for tok in self.tokens),
            self.utt_id,
        )


@dataclass(frozen=True)
class PermutationTarget:
    order: SpeakerOrder
    stream: TogglStream
    canonical: bool


def is_control(item: str) -> bool:
    return item in CONTROL_TOKENS


def order_speakers(transcripts: Sequence[TimedTranscript]) -> SpeakerOrder:
    """Order speakers by the onset of their first token, ties by input position."""
    if not transcripts:
        raise DataError("cannot order an empty list of transcripts")
    for pos, tr in enumerate(transcripts):
        if not tr.tokens:
            raise DataError(f"transcript at position {pos} has no tokens")
    return tuple(sorted(range(len(transcripts)), key=lambda i: (transcripts[i].tokens[0].start, i)))


def _check_order(order: Sequence[int], n: int) -> SpeakerOrder:
    order = tuple(int(i) for i in order)
    if sorted(order) != list(range(n)):
        raise DataError(f"{order} is not a permutation of {n} speaker positions")
    return order


def serialize(transcripts: Sequence[TimedTranscript], order: Sequence[int] | None = None) -> TogglStream:
    """Interleave transcripts by (start time, ordered speaker index).

    ``order[i]`` is the input position of the speaker that gets index ``i``.
    Defaults to the first-onset order.
    """
    if not transcripts:
        raise DataError("cannot serialize an empty list of transcripts")
    order = order_speakers(transcripts) if order is None else _check_order(order, len(transcripts))

    events = []
    for index, pos in enumerate(order):
        for k, tok in enumerate(transcripts[pos].tokens):
            events.append((tok.start, index, k, tok.text))
    events.sort()

    out: list[str] = []
    current = 0
    for _, index, _, text in events:
        step = index - current
        if step > 0:
            out.extend([NEXT] * step)
        elif step < 0:
            out.extend([PREV] * -step)
        current = index
        out.append(text)
    return tuple(out)


def deserialize(stream: Iterable[str], mode: DecodeMode = "strict") -> dict[int, list[str]]:
    """Split a stream into per-speaker token lists keyed by speaker index.

    Strict mode raises :class:`StreamUnderflowError` when a ``[PREV]`` would
    move below speaker 0; lenient mode clamps at 0.  Speakers that received
    no lexical token are omitted.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown decode mode {mode!r}")
    streams: dict[int, list[str]] = {}
    current = 0
    for pos, item in enumerate(stream):
        if item == NEXT:
            current += 1
        elif item == PREV:
            if current == 0:
                if mode == "strict":
                    raise StreamUnderflowError(pos)
                continue
            current -= 1
        else:
            streams.setdefault(current, []).append(item)
    return dict(sorted(streams.items()))


def strip_control_tokens(stream: Iterable[str]) -> list[str]:
    return [item for item in stream if item not in CONTROL_TOKENS]


def count_control_tokens(stream: Iterable[str]) -> int:
    return sum(1 for item in stream if item in CONTROL_TOKENS)


def enumerate_permutation_targets(
    transcripts: Sequence[TimedTranscript],
    max_speakers: int = DEFAULT_MAX_PERMUTATION_SPEAKERS,
) -> list[PermutationTarget]:
    """Serialize under every speaker order; the first-onset order comes first."""
    n = len(transcripts)
    if n == 0:
        raise DataError("cannot enumerate targets for zero transcripts")
    if n > max_speakers:
        raise DataError(f"{n} speakers exceeds the permutation cap of {max_speakers}")
    canonical = order_speakers(transcripts)
    targets = [PermutationTarget(canonical, serialize(transcripts, canonical), True)]
    for perm in itertools.permutations(range(n)):
        if perm != canonical:
            targets.append(PermutationTarget(perm, serialize(transcripts, perm), False))
    return targets


# -- text formats ------------------------------------------------------------


def format_stream(stream: Iterable[str]) -> str:
    return " ".join(stream)


def parse_stream(text: str) -> TogglStream:
    return tuple(text.split())


def transcript_from_record(record: dict) -> TimedTranscript:
    """Build a transcript from ``{id, speaker, tokens: [{text, start}]}``."""
    try:
        tokens = tuple(TimedToken(t["text"], float(t["start"])) for t in record["tokens"])
        return TimedTranscript(record["speaker"], tokens, record.get("id"))
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed transcript record {record.get('id', '?')!r}: {exc}") from exc


def transcript_to_record(tr: TimedTranscript) -> dict:
    return {
        "id": tr.utt_id,
        "speaker": tr.speaker_id,
        "tokens": [{"text": t.text, "start": t.start} for t in tr.tokens],
    }


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_transcripts(path: str | Path) -> list[TimedTranscript]:
    return [transcript_from_record(rec) for rec in read_jsonl(path)]
