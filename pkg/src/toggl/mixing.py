"""Overlapped-speech mixture synthesis.

Each source after the first starts a random fraction (0-90%) of the way into
the previous source and is scaled by a random -3..+3 dB relative to it.  The
summed mixture is rescaled to the RMS of the first source.
"""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .codec import TimedTranscript, format_stream, order_speakers, serialize, transcript_from_record
from .errors import DataError

log = logging.getLogger(__name__)

MAX_OFFSET_FRACTION = 0.9
MAX_GAIN_DB = 3.0
DEFAULT_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise DataError("waveform must be a non-empty mono signal")
        if not np.all(np.isfinite(samples)):
            raise DataError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MixSpec:
    """Offsets and gains, each relative to the previous source.

    ``offsets_s[n]`` is the delay of source n after the start of source n-1;
    ``gains_db[n]`` its level relative to source n-1.  Entry 0 is always 0.
    """

    offsets_s: tuple[float, ...]
    gains_db: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "offsets_s", tuple(float(x) for x in self.offsets_s))
        object.__setattr__(self, "gains_db", tuple(float(x) for x in self.gains_db))
        if not self.offsets_s or len(self.offsets_s) != len(self.gains_db):
            raise DataError("mix spec needs matching, non-empty offsets and gains")
        if self.offsets_s[0] != 0.0 or self.gains_db[0] != 0.0:
            raise DataError("first source must have zero offset and zero gain")
        if any(o < 0 for o in self.offsets_s):
            raise DataError("offsets must be non-negative")

    def __len__(self):
        return len(self.offsets_s)

    @property
    def absolute_offsets(self) -> np.ndarray:
        return np.cumsum(self.offsets_s)

    @property
    def amplitude_scales(self) -> np.ndarray:
        """Gain of each source relative to source 0 (chained products)."""
        return np.cumprod([db_to_amplitude(g) for g in self.gains_db])

    def validate_against(self, durations: Sequence[float]) -> None:
        if len(durations) != len(self):
            raise DataError(f"mix spec has {len(self)} sources, got {len(durations)} durations")
        for n in range(1, len(self)):
            if self.offsets_s[n] > MAX_OFFSET_FRACTION * durations[n - 1]:
                raise DataError(f"offset of source {n} exceeds 90% of source {n - 1}")
            if abs(self.gains_db[n]) > MAX_GAIN_DB:
                raise DataError(f"gain of source {n} outside +-{MAX_GAIN_DB} dB")


@dataclass(frozen=True)
class MixtureRecord:
    mixture: Waveform
    spec: MixSpec
    sources: tuple[str, ...]
    overlap_fraction: float
    durations: tuple[float, ...] = field(default=())


def db_to_amplitude(gain_db: float) -> float:
    return float(10.0 ** (gain_db / 20.0))


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def _check_durations(durations: Sequence[float]) -> list[float]:
    durations = [float(d) for d in durations]
    if not durations:
        raise DataError("need at least one source duration")
    if any(not d > 0 for d in durations):
        raise DataError("source durations must be positive")
    return durations


def sample_mix_spec(source_durations: Sequence[float], rng_seed: int | np.random.Generator) -> MixSpec:
    durations = _check_durations(source_durations)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    offsets, gains = [0.0], [0.0]
    for prev in durations[:-1]:
        offsets.append(rng.uniform(0.0, MAX_OFFSET_FRACTION * prev))
        gains.append(rng.uniform(-MAX_GAIN_DB, MAX_GAIN_DB))
    return MixSpec(tuple(offsets), tuple(gains))


def compute_overlap_fraction(spec: MixSpec, durations: Sequence[float]) -> float:
    """Share of the mixture span during which two or more sources are active."""
    if len(durations) != len(spec):
        raise DataError(f"mix spec has {len(spec)} sources, got {len(durations)} durations")
    starts = spec.absolute_offsets
    ends = starts + np.asarray(durations, dtype=np.float64)
    total = float(ends.max())
    if len(durations) < 2 or total <= 0:
        return 0.0
    events = sorted([(s, 1) for s in starts] + [(e, -1) for e in ends], key=lambda ev: (ev[0], ev[1]))
    overlapped = 0.0
    active = 0
    last = 0.0
    for t, delta in events:
        if active >= 2:
            overlapped += t - last
        active += delta
        last = t
    return min(1.0, max(0.0, overlapped / total))


def mix(sources: Sequence[Waveform], spec: MixSpec, source_ids: Sequence[str] | None = None) -> MixtureRecord:
    if len(sources) != len(spec):
        raise DataError(f"mix spec has {len(spec)} sources, got {len(sources)} waveforms")
    rates = {s.sample_rate for s in sources}
    if len(rates) != 1:
        raise DataError(f"sample rates differ across sources: {sorted(rates)}")
    sr = rates.pop()
    starts = np.rint(spec.absolute_offsets * sr).astype(np.int64)
    length = int(max(st + s.samples.size for st, s in zip(starts, sources)))
    out = np.zeros(length)
    for st, scale, src in zip(starts, spec.amplitude_scales, sources):
        out[st : st + src.samples.size] += scale * src.samples
    target = rms(sources[0].samples)
    current = rms(out)
    if current > 0:
        out *= target / current
    durations = tuple(s.duration for s in sources)
    ids = tuple(source_ids) if source_ids is not None else tuple(str(i) for i in range(len(sources)))
    return MixtureRecord(Waveform(out, sr), spec, ids, compute_overlap_fraction(spec, durations), durations)


# -- audio I/O ---------------------------------------------------------------


def read_wav(path: str | Path) -> Waveform:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise DataError(f"{path}: expected mono 16-bit PCM")
        data = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
        return Waveform(data.astype(np.float64) / 32768.0, fh.getframerate())


def write_wav(path: str | Path, wav: Waveform) -> int:
    """Write 16-bit PCM, clamping out-of-range samples; returns the clip count."""
    scaled = np.rint(wav.samples * 32768.0)
    clipped = int(np.count_nonzero((scaled > 32767) | (scaled < -32768)))
    pcm = np.clip(scaled, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wav.sample_rate)
        fh.writeframes(pcm.tobytes())
    return clipped


# -- dataset synthesis -------------------------------------------------------


@dataclass(frozen=True)
class SourceUtterance:
    utt_id: str
    speaker: str
    transcript: TimedTranscript
    wav_path: Path | None = None


@dataclass(frozen=True)
class SynthesizedItem:
    index: int
    mix_id: str
    record: MixtureRecord
    transcripts: tuple[TimedTranscript, ...]
    target: tuple[str, ...]


def load_source_manifest(path: str | Path) -> list[SourceUtterance]:
    """Read ``{id, speaker, wav_path, tokens}`` records; paths relative to the manifest."""
    from .codec import read_jsonl

    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    out = []
    for rec in read_jsonl(path):
        if "id" not in rec or "speaker" not in rec:
            raise DataError(f"manifest record missing id/speaker: {rec}")
        wav = rec.get("wav_path")
        wav_path = (path.parent / wav) if wav is not None else None
        out.append(SourceUtterance(str(rec["id"]), str(rec["speaker"]), transcript_from_record(rec), wav_path))
    return out


def item_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _group_by_speaker(utts: Sequence[SourceUtterance]) -> dict[str, list[SourceUtterance]]:
    groups: dict[str, list[SourceUtterance]] = {}
    for u in utts:
        groups.setdefault(u.speaker, []).append(u)
    return dict(sorted(groups.items()))


def synthesize_item(
    groups: Mapping[str, Sequence[SourceUtterance]],
    n_mix: int,
    seed: int,
    index: int,
    load_audio: Callable[[SourceUtterance], Waveform],
) -> SynthesizedItem:
    """Build mixture ``index``; depends only on (seed, index) and the manifest."""
    rng = item_rng(seed, index)
    speakers = list(groups)
    chosen = rng.choice(len(speakers), size=n_mix, replace=False)
    utts = []
    for k in chosen:
        pool = groups[speakers[int(k)]]
        utts.append(pool[int(rng.integers(len(pool)))])
    waves = [load_audio(u) for u in utts]
    spec = sample_mix_spec([w.duration for w in waves], rng)
    record = mix(waves, spec, [u.utt_id for u in utts])
    shifted = tuple(u.transcript.shifted(off) for u, off in zip(utts, spec.absolute_offsets))
    target = serialize(shifted, order_speakers(shifted))
    return SynthesizedItem(index, f"mix{n_mix}_{index:06d}", record, shifted, target)


def synthesize_dataset(
    utterances: Sequence[SourceUtterance],
    n_mix: int,
    count: int,
    rng_seed: int,
    load_audio: Callable[[SourceUtterance], Waveform] | None = None,
) -> list[SynthesizedItem]:
    if not 1 <= n_mix <= 4:
        raise DataError(f"n_mix must be in 1..4, got {n_mix}")
    groups = _group_by_speaker(utterances)
    if len(groups) < n_mix:
        raise DataError(f"need {n_mix} distinct speakers, manifest has {len(groups)}")
    if load_audio is None:
        cache: dict[Path, Waveform] = {}

        def load_audio(u: SourceUtterance) -> Waveform:
            if u.wav_path is None:
                raise DataError(f"utterance {u.utt_id} has no wav_path")
            if u.wav_path not in cache:
                cache[u.wav_path] = read_wav(u.wav_path)
            return cache[u.wav_path]

    return [synthesize_item(groups, n_mix, rng_seed, i, load_audio) for i in range(count)]


def mixture_manifest_record(item: SynthesizedItem, wav_path: str) -> dict:
    rec = item.record
    return {
        "id": item.mix_id,
        "wav_path": wav_path,
        "sources": list(rec.sources),
        "offsets_s": list(rec.spec.offsets_s),
        "gains_db": list(rec.spec.gains_db),
        "overlap_fraction": rec.overlap_fraction,
        "toggl_target": format_stream(item.target),
    }
