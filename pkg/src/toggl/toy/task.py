"""Synthetic symbolic stand-in for overlapped speech.

Every "speaker" has a voice: its own fixed random embedding table.  A spoken
symbol fills ``frames_per_symbol`` frames with the voice's embedding of that
symbol; speakers are shifted by their offsets, summed, and noise is added.
Offsets are real-valued frame positions.  Rendering happens on a grid of
``subframes`` slots per frame; each slot integrates the signal over its own
interval (so an onset between slot boundaries shows up as a partial slot) and
the slots of a frame are stacked into one feature vector, as in low frame
rate front ends.  Nearby onsets keep their order without lengthening the
frame sequence.
Optional delta features (frame differences) are appended, as in a classic
ASR front end.  Symbol ``i`` is the lexical token ``"s{i}"``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..codec import TimedTranscript, order_speakers, serialize
from ..errors import ConfigError, DataError
from ..mixing import sample_mix_spec


@dataclass(frozen=True)
class SyntheticTask:
    vocab_size: int = 20
    frames_per_symbol: int = 2
    feature_dim: int = 64
    noise_std: float = 0.05
    max_speakers: int = 4
    n_voices: int = 4
    min_len: int = 2
    max_len: int = 5
    frame_shift: float = 0.04
    deltas: bool = True
    table_seed: int = 1234
    voice_mode: str = "band"
    subframes: int = 8

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if self.frames_per_symbol < 1 or self.subframes < 1:
            raise ConfigError("frames_per_symbol and subframes must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("need 1 <= min_len <= max_len")
        if self.n_voices < self.max_speakers:
            raise ConfigError("need at least one voice per speaker in a mixture")
        if self.voice_mode not in ("random", "band", "shared"):
            raise ConfigError(f"unknown voice_mode {self.voice_mode!r}")
        if self.voice_mode == "band" and self.feature_dim % self.n_voices:
            raise ConfigError("band voices need feature_dim divisible by n_voices")

    @property
    def input_dim(self) -> int:
        return self.feature_dim * self.subframes * (2 if self.deltas else 1)

    @property
    def lexicon(self) -> list[str]:
        return [f"s{i}" for i in range(self.vocab_size)]

    def voice_tables(self) -> np.ndarray:
        """(n_voices, vocab_size, feature_dim) symbol embeddings, one table per voice.

        ``random``: independent dense tables.  ``band``: each voice only uses
        its own block of feature channels (scaled to the same expected norm).
        ``shared``: every voice uses the same table.
        """
        rng = np.random.default_rng(self.table_seed)
        shape = (self.n_voices, self.vocab_size, self.feature_dim)
        if self.voice_mode == "random":
            return rng.standard_normal(shape)
        if self.voice_mode == "shared":
            return np.broadcast_to(rng.standard_normal(shape[1:]), shape).copy()
        width = self.feature_dim // self.n_voices
        out = np.zeros(shape)
        for v in range(self.n_voices):
            out[v, :, v * width : (v + 1) * width] = rng.standard_normal((self.vocab_size, width)) * np.sqrt(self.n_voices)
        return out

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RenderedItem:
    frames: np.ndarray
    symbols: tuple[tuple[int, ...], ...]
    offsets: tuple[float, ...]
    voices: tuple[int, ...]
    transcripts: tuple[TimedTranscript, ...]
    order: tuple[int, ...]
    target: tuple[str, ...]

    @property
    def n_speakers(self) -> int:
        return len(self.symbols)

    def reference_streams(self) -> dict[int, list[str]]:
        """Token lists keyed by first-onset speaker index."""
        return {i: self.transcripts[pos].texts for i, pos in enumerate(self.order)}


def symbol_transcript(task: SyntheticTask, symbols: Sequence[int], offset: int, speaker) -> TimedTranscript:
    pairs = [(f"s{x}", (offset + k * task.frames_per_symbol) * task.frame_shift) for k, x in enumerate(symbols)]
    return TimedTranscript.from_pairs(speaker, pairs)


def render_features(
    symbol_seqs: Sequence[Sequence[int]],
    task: SyntheticTask,
    offsets: Sequence[float],
    seed: int | np.random.Generator,
    voices: Sequence[int] | None = None,
    tables: np.ndarray | None = None,
) -> RenderedItem:
    """Render speakers at (possibly fractional) frame ``offsets`` and build the staggered target."""
    n = len(symbol_seqs)
    if n == 0:
        raise DataError("need at least one speaker")
    if n > task.max_speakers:
        raise DataError(f"{n} speakers exceeds task.max_speakers={task.max_speakers}")
    if len(offsets) != n:
        raise DataError("one offset per speaker is required")
    voices = tuple(range(n)) if voices is None else tuple(int(v) for v in voices)
    if any(not 0 <= v < task.n_voices for v in voices):
        raise DataError("voice index out of range")
    for seq in symbol_seqs:
        if not seq or any(not 0 <= x < task.vocab_size for x in seq):
            raise DataError("symbol sequences must be non-empty and within the vocabulary")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tables = task.voice_tables() if tables is None else tables
    fps, sub = task.frames_per_symbol, task.subframes

    offsets = tuple(float(o) for o in offsets)
    if any(not np.isfinite(o) or o < 0 for o in offsets):
        raise DataError("offsets must be finite and non-negative")
    n_frames = max(int(np.ceil(o + len(seq) * fps - 1e-9)) for o, seq in zip(offsets, symbol_seqs))
    n_slots = n_frames * sub
    clean = np.zeros((n_slots, task.feature_dim))
    for off, seq, voice in zip(offsets, symbol_seqs, voices):
        for k, x in enumerate(seq):
            a = (off + k * fps) * sub
            b = a + fps * sub
            js = np.arange(int(np.floor(a)), min(n_slots, int(np.ceil(b - 1e-9))))
            w = np.minimum(b, js + 1) - np.maximum(a, js)
            clean[js] += w[:, None] * tables[voice, x]
    clean = clean.reshape(n_frames, sub * task.feature_dim)
    frames = clean + task.noise_std * rng.standard_normal(clean.shape)
    if task.deltas:
        frames = np.concatenate([frames, np.diff(frames, axis=0, prepend=0.0)], axis=1)

    transcripts = tuple(symbol_transcript(task, seq, off, str(v)) for seq, off, v in zip(symbol_seqs, offsets, voices))
    order = order_speakers(transcripts)
    return RenderedItem(
        frames,
        tuple(tuple(int(x) for x in s) for s in symbol_seqs),
        offsets,
        voices,
        transcripts,
        order,
        serialize(transcripts, order),
    )


def sample_symbols(task: SyntheticTask, rng: np.random.Generator) -> list[int]:
    """Random symbol string with no immediate repeats."""
    length = int(rng.integers(task.min_len, task.max_len + 1))
    out = [int(rng.integers(task.vocab_size))]
    while len(out) < length:
        x = int(rng.integers(task.vocab_size - 1))
        out.append(x if x < out[-1] else x + 1)
    return out


def sample_item(task: SyntheticTask, n_mix: int, rng: np.random.Generator, tables: np.ndarray | None = None) -> RenderedItem:
    """Draw speakers, voices and offsets following the mixing protocol, then render."""
    if not 1 <= n_mix <= task.max_speakers:
        raise DataError(f"n_mix must be in 1..{task.max_speakers}")
    seqs = [sample_symbols(task, rng) for _ in range(n_mix)]
    voices = rng.choice(task.n_voices, size=n_mix, replace=False)
    durations = [len(s) * task.frames_per_symbol * task.frame_shift for s in seqs]
    spec = sample_mix_spec(durations, rng)
    offsets = np.asarray(spec.absolute_offsets) / task.frame_shift
    return render_features(seqs, task, offsets, rng, voices, tables)


def make_eval_set(task: SyntheticTask, n_mix: int, count: int, seed: int) -> list[RenderedItem]:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7919, int(n_mix)]))
    tables = task.voice_tables()
    return [sample_item(task, n_mix, rng, tables) for _ in range(count)]

