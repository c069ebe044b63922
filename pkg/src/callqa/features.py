"""Per-call segment timelines, percentage features and their CSV formats.

The built-in segmenter only separates silence from everything else using
frame RMS energy. Speech/music/noise timelines produced by an external
segmenter can be ingested through the timeline CSV.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
import wave
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, InvalidTimelineError, ParseError

CLASSES = ("speech", "music", "noise", "silence")
FEATURE_HEADER = [
    "call_id", "duration_s", "pct_speech", "pct_music", "pct_noise",
    "pct_silence", "label", "date",
]
TIMELINE_HEADER = ["call_id", "start_s", "end_s", "class"]

TIME_TOL = 1e-6
SUM_TOL = 1e-6
CSV_SUM_TOL = 1e-4


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    cls: str


@dataclass(frozen=True)
class SegmentTimeline:
    call_id: str
    duration: float
    segments: tuple[Segment, ...]

    def validate(self) -> None:
        """Raise :class:`InvalidTimelineError` unless the segments exactly
        partition ``[0, duration]`` in maximal homogeneous runs."""
        if not (self.duration > 0) or not math.isfinite(self.duration):
            raise InvalidTimelineError(f"{self.call_id}: duration must be > 0")
        if not self.segments:
            raise InvalidTimelineError(f"{self.call_id}: no segments")
        if abs(self.segments[0].start) > TIME_TOL:
            raise InvalidTimelineError(f"{self.call_id}: first segment must start at 0")
        if abs(self.segments[-1].end - self.duration) > TIME_TOL:
            raise InvalidTimelineError(f"{self.call_id}: last segment must end at duration")
        for i, seg in enumerate(self.segments):
            if seg.cls not in CLASSES:
                raise InvalidTimelineError(f"{self.call_id}: unknown class {seg.cls!r}")
            if not seg.start < seg.end:
                raise InvalidTimelineError(f"{self.call_id}: segment {i} has start >= end")
            if i:
                prev = self.segments[i - 1]
                if abs(prev.end - seg.start) > TIME_TOL:
                    raise InvalidTimelineError(f"{self.call_id}: gap or overlap before segment {i}")
                if prev.cls == seg.cls:
                    raise InvalidTimelineError(
                        f"{self.call_id}: segments {i - 1} and {i} share class {seg.cls!r}")


@dataclass(frozen=True)
class FeatureVector:
    call_id: str
    duration: float
    pct_speech: float
    pct_music: float
    pct_noise: float
    pct_silence: float
    label: int | None = None
    timestamp: dt.date | None = None

    def __post_init__(self):
        fr = self.fractions()
        if any(not math.isfinite(v) or v < 0.0 or v > 1.0 for v in fr):
            raise InvalidInputError(f"{self.call_id}: fraction outside [0, 1]")
        if abs(sum(fr) - 1.0) > CSV_SUM_TOL:
            raise InvalidInputError(f"{self.call_id}: fractions sum to {sum(fr):.6f}, not 1")
        if self.label not in (None, 0, 1):
            raise InvalidInputError(f"{self.call_id}: label must be 0, 1 or empty")

    def fractions(self) -> tuple[float, float, float, float]:
        return (self.pct_speech, self.pct_music, self.pct_noise, self.pct_silence)


@dataclass
class Dataset:
    rows: list[FeatureVector] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for r in self.rows:
            if r.call_id in seen:
                raise InvalidInputError(f"duplicate call_id {r.call_id!r}")
            seen.add(r.call_id)

    @property
    def labeled_count(self) -> int:
        return sum(r.label is not None for r in self.rows)

    def __len__(self):
        return len(self.rows)

    def matrix(self) -> np.ndarray:
        """The n x 4 feature matrix in (speech, music, noise, silence) order."""
        if not self.rows:
            return np.empty((0, 4))
        return np.array([r.fractions() for r in self.rows], dtype=float)

    def labels(self) -> np.ndarray:
        return np.array([-1 if r.label is None else r.label for r in self.rows], dtype=int)


# --------------------------------------------------------------------------
# energy segmenter


@dataclass(frozen=True)
class SilenceConfig:
    frame_s: float = 0.025
    hop_s: float = 0.010
    absolute_floor: float = 1e-4
    rel_factor: float = 0.1
    min_segment_s: float = 0.2


def frame_rms(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n_frames = 1 + (len(samples) - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = samples[idx]
    return np.sqrt(np.mean(frames * frames, axis=1))


def _runs(labels: Sequence[str], bounds: Sequence[float]) -> list[list]:
    """Collapse per-interval labels into [start, end, cls] runs."""
    runs: list[list] = []
    for cls, a, b in zip(labels, bounds[:-1], bounds[1:]):
        if b <= a:
            continue
        if runs and runs[-1][2] == cls:
            runs[-1][1] = b
        else:
            runs.append([a, b, cls])
    return runs


def merge_short_runs(runs: list[list], min_dur: float) -> list[list]:
    """Absorb runs shorter than ``min_dur`` into a neighbour.

    The shortest offending run goes first (leftmost on ties) and takes the
    class of its longer neighbour, the left one on ties.
    """
    runs = [list(r) for r in runs]
    while len(runs) > 1:
        lengths = [r[1] - r[0] for r in runs]
        i = min(range(len(runs)), key=lambda j: (lengths[j], j))
        if lengths[i] >= min_dur:
            break
        left = lengths[i - 1] if i > 0 else -1.0
        right = lengths[i + 1] if i + 1 < len(runs) else -1.0
        j = i - 1 if left >= right else i + 1
        runs[i][2] = runs[j][2]
        merged: list[list] = []
        for r in runs:
            if merged and merged[-1][2] == r[2]:
                merged[-1][1] = r[1]
            else:
                merged.append(r)
        runs = merged
    return runs


def segment_silence(samples, sample_rate: float, cfg: SilenceConfig = SilenceConfig(),
                    call_id: str = "") -> SegmentTimeline:
    """Split a mono signal into silence and speech segments.

    A frame is silent when its RMS is below
    ``max(cfg.absolute_floor, cfg.rel_factor * median_rms)``. Time covered by
    the window of any silent frame is silence; everything else is speech.
    Runs shorter than ``cfg.min_segment_s`` are then merged away.

    Parameters
    ----------
    samples : array-like
        Amplitudes on a full scale of 1.0.
    sample_rate : float
        Samples per second.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if not sample_rate > 0:
        raise InvalidInputError("sample_rate must be positive")
    if x.size == 0:
        raise InvalidInputError("empty signal")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("signal contains non-finite samples")
    frame_len = max(1, int(round(cfg.frame_s * sample_rate)))
    hop = max(1, int(round(cfg.hop_s * sample_rate)))
    if x.size < frame_len:
        raise InvalidInputError(
            f"need at least one full frame ({frame_len} samples), got {x.size}")

    rms = frame_rms(x, frame_len, hop)
    threshold = max(cfg.absolute_floor, cfg.rel_factor * float(np.median(rms)))
    silent = rms < threshold

    # per-sample coverage by silent frame windows, via a difference array
    n = x.size
    n_frames = rms.size
    cover = np.zeros(n + 1, dtype=np.int64)
    starts = hop * np.flatnonzero(silent)
    np.add.at(cover, starts, 1)
    np.add.at(cover, starts + frame_len, -1)
    covered = np.cumsum(cover[:n]) > 0
    # samples past the last full frame inherit its decision
    tail = hop * (n_frames - 1) + frame_len
    if tail < n:
        covered[tail:] = silent[-1]

    change = np.flatnonzero(np.diff(covered.astype(np.int8))) + 1
    edges = np.concatenate(([0], change, [n]))
    labels = ["silence" if covered[a] else "speech" for a in edges[:-1]]
    bounds = [e / sample_rate for e in edges]
    duration = n / sample_rate
    bounds[-1] = duration
    runs = merge_short_runs(_runs(labels, bounds), cfg.min_segment_s)
    timeline = SegmentTimeline(
        call_id, duration, tuple(Segment(float(a), float(b), c) for a, b, c in runs))
    timeline.validate()
    return timeline


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read 16-bit PCM mono WAV; returns samples scaled to [-1, 1) and the rate."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise InvalidInputError(f"{path}: expected mono, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise InvalidInputError(f"{path}: expected 16-bit PCM")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise InvalidInputError(f"{path}: {exc}") from exc
    if rate < 8000:
        raise InvalidInputError(f"{path}: sample rate {rate} Hz below 8000 Hz")
    return np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0, rate


def write_wav(path, samples, sample_rate: int) -> None:
    x = np.clip(np.asarray(samples, dtype=float), -1.0, 32767 / 32768)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(np.round(x * 32768).astype("<i2").tobytes())


# --------------------------------------------------------------------------
# features


def compute_features(timeline: SegmentTimeline, label: int | None = None,
                     timestamp: dt.date | None = None) -> FeatureVector:
    """Fraction of the call's duration spent in each class."""
    timeline.validate()
    totals = dict.fromkeys(CLASSES, 0.0)
    for seg in timeline.segments:
        totals[seg.cls] += seg.end - seg.start
    span = sum(totals.values())
    fr = [totals[c] / span for c in CLASSES]
    return FeatureVector(timeline.call_id, timeline.duration, *fr,
                         label=label, timestamp=timestamp)


# --------------------------------------------------------------------------
# CSV interchange


def _as_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data


def _float(value: str, name: str, row: int) -> float:
    try:
        out = float(value)
    except ValueError:
        raise ParseError(f"{name} is not numeric: {value!r}", row) from None
    if not math.isfinite(out):
        raise ParseError(f"{name} is not finite", row)
    return out


def load_feature_csv(source) -> Dataset:
    """Parse the feature CSV from bytes, text or a file object."""
    reader = csv.reader(io.StringIO(_as_text(source)))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != FEATURE_HEADER:
        raise ParseError(f"header must be {','.join(FEATURE_HEADER)}", 1)
    rows: list[FeatureVector] = []
    seen: set[str] = set()
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(FEATURE_HEADER):
            raise ParseError(f"expected {len(FEATURE_HEADER)} fields, got {len(rec)}", lineno)
        call_id, dur, *pcts, label, date = rec
        if not call_id:
            raise ParseError("empty call_id", lineno)
        if call_id in seen:
            raise ParseError(f"duplicate call_id {call_id!r}", lineno)
        seen.add(call_id)
        duration = _float(dur, "duration_s", lineno)
        if duration <= 0:
            raise ParseError("duration_s must be > 0", lineno)
        fr = [_float(v, n, lineno) for v, n in zip(pcts, FEATURE_HEADER[2:6])]
        for v, n in zip(fr, FEATURE_HEADER[2:6]):
            if v < 0 or v > 1:
                raise ParseError(f"{n}={v} outside [0, 1]", lineno)
        if abs(sum(fr) - 1.0) > CSV_SUM_TOL:
            raise ParseError(f"fractions sum to {sum(fr):.6f}, not 1", lineno)
        if label.strip() == "":
            lab = None
        elif label.strip() in ("0", "1"):
            lab = int(label)
        else:
            raise ParseError(f"label must be empty, 0 or 1, got {label!r}", lineno)
        stamp = None
        if date.strip():
            try:
                stamp = dt.date.fromisoformat(date.strip())
            except ValueError:
                raise ParseError(f"date is not ISO-8601: {date!r}", lineno) from None
        rows.append(FeatureVector(call_id, duration, *fr, label=lab, timestamp=stamp))
    return Dataset(rows)


def write_feature_csv(dataset: Dataset | Iterable[FeatureVector]) -> bytes:
    rows = dataset.rows if isinstance(dataset, Dataset) else list(dataset)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEATURE_HEADER)
    for r in rows:
        w.writerow([
            r.call_id, f"{r.duration:.6f}",
            *(f"{v:.6f}" for v in r.fractions()),
            "" if r.label is None else str(r.label),
            "" if r.timestamp is None else r.timestamp.isoformat(),
        ])
    return buf.getvalue().encode("utf-8")


def load_timeline_csv(source) -> list[SegmentTimeline]:
    """Parse a timeline CSV; rows of one call must be contiguous and ordered.

    A call's duration is the end of its last segment.
    """
    reader = csv.reader(io.StringIO(_as_text(source)))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != TIMELINE_HEADER:
        raise ParseError(f"header must be {','.join(TIMELINE_HEADER)}", 1)
    grouped: dict[str, list[Segment]] = {}
    first_line: dict[str, int] = {}
    last_id = None
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != 4:
            raise ParseError(f"expected 4 fields, got {len(rec)}", lineno)
        call_id, a, b, cls = rec
        if call_id in grouped and call_id != last_id:
            raise ParseError(f"segments of {call_id!r} are not contiguous", lineno)
        grouped.setdefault(call_id, []).append(
            Segment(_float(a, "start_s", lineno), _float(b, "end_s", lineno), cls.strip()))
        first_line.setdefault(call_id, lineno)
        last_id = call_id
    out = []
    for call_id, segs in grouped.items():
        tl = SegmentTimeline(call_id, segs[-1].end, tuple(segs))
        try:
            tl.validate()
        except InvalidTimelineError as exc:
            raise ParseError(str(exc), first_line[call_id]) from None
        out.append(tl)
    return out


def write_timeline_csv(timelines: Iterable[SegmentTimeline]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMELINE_HEADER)
    for tl in timelines:
        for s in tl.segments:
            w.writerow([tl.call_id, f"{s.start:.6f}", f"{s.end:.6f}", s.cls])
    return buf.getvalue().encode("utf-8")
