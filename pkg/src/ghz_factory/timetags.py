"""Timetag streams, triple-coincidence extraction and a synthetic stream sampler.

A stream is UTF-8 JSON lines. The first line is a header object::

    {"format_version": 1, "setting": {...}, "window_length_ns": 50000,
     "windows_per_attempt": 3, "window_offsets_ns": [0, 50000, 100000],
     "attempt_period_ns": 200000, "notes": ""}

and each following line is one event::

    {"kind": "ATTEMPT_START", "time_ns": 0}
    {"kind": "DETECTION", "time_ns": 1234, "channel": "t"}
    {"kind": "ION_RESULT", "time_ns": 151000, "outcome": "ddu"}

Files whose name ends in ``.gz`` are read and written gzip-compressed.
"""

from __future__ import annotations

import csv
import enum
import gzip
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .optics import PATTERNS, DetectorModel, MeasurementSetting, pattern_probabilities
from .protocol import ConditionalStateSet, IonOutcome, ghz_projection_table
from .quantum import DensityMatrix
from .validation import check_random_state

FORMAT_VERSION = 1


class ParseError(ValueError):
    """Malformed timetag stream; ``line`` is the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MissingHeaderError(ParseError):
    pass


class UnknownKindError(ParseError):
    pass


class UnsortedEventsError(ParseError):
    pass


class MalformedEventError(ParseError):
    pass


class EventKind(str, enum.Enum):
    ATTEMPT_START = "ATTEMPT_START"
    DETECTION = "DETECTION"
    ION_RESULT = "ION_RESULT"


@dataclass(frozen=True)
class TimetagEvent:
    kind: EventKind
    time_ns: int
    channel: str | None = None
    outcome: IonOutcome | None = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "time_ns": self.time_ns}
        if self.kind is EventKind.DETECTION:
            d["channel"] = self.channel
        elif self.kind is EventKind.ION_RESULT:
            d["outcome"] = self.outcome.label
        return d


@dataclass(frozen=True)
class AttemptWindowing:
    window_length_ns: int = 50_000
    windows_per_attempt: int = 3
    window_offsets_ns: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.window_length_ns <= 0 or self.windows_per_attempt <= 0:
            raise ValueError("window length and count must be positive")
        offsets = self.window_offsets_ns
        if offsets is None:
            offsets = tuple(k * self.window_length_ns for k in range(self.windows_per_attempt))
        offsets = tuple(int(o) for o in offsets)
        if len(offsets) != self.windows_per_attempt:
            raise ValueError("need one offset per window")
        if offsets[0] < 0 or any(b - a < self.window_length_ns for a, b in zip(offsets, offsets[1:])):
            raise ValueError("windows must be ordered and non-overlapping")
        object.__setattr__(self, "window_offsets_ns", offsets)

    @property
    def span_ns(self) -> int:
        return self.window_offsets_ns[-1] + self.window_length_ns

    def window_of(self, dt: int) -> int | None:
        for k, off in enumerate(self.window_offsets_ns):
            if off <= dt < off + self.window_length_ns:
                return k
        return None


@dataclass(frozen=True)
class StreamHeader:
    setting: MeasurementSetting | None = None
    windowing: AttemptWindowing = field(default_factory=AttemptWindowing)
    attempt_period_ns: int = 200_000
    notes: str = ""
    format_version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "setting": None if self.setting is None else self.setting.to_dict(),
            "window_length_ns": self.windowing.window_length_ns,
            "windows_per_attempt": self.windowing.windows_per_attempt,
            "window_offsets_ns": list(self.windowing.window_offsets_ns),
            "attempt_period_ns": self.attempt_period_ns,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "StreamHeader":
        windowing = AttemptWindowing(
            int(obj.get("window_length_ns", 50_000)),
            int(obj.get("windows_per_attempt", 3)),
            tuple(obj["window_offsets_ns"]) if obj.get("window_offsets_ns") is not None else None,
        )
        setting = obj.get("setting")
        return cls(
            setting=None if setting is None else MeasurementSetting.from_dict(setting),
            windowing=windowing,
            attempt_period_ns=int(obj.get("attempt_period_ns", 200_000)),
            notes=str(obj.get("notes", "")),
            format_version=int(obj["format_version"]),
        )


def open_text(path, mode: str) -> IO[str]:
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8", newline="\n")
    return open(path, mode, encoding="utf-8", newline="\n")


def _parse_event(obj, lineno: int) -> TimetagEvent:
    if not isinstance(obj, dict):
        raise MalformedEventError("event is not a JSON object", lineno)
    kind_raw = obj.get("kind")
    try:
        kind = EventKind(kind_raw)
    except ValueError:
        raise UnknownKindError(f"unknown event kind {kind_raw!r}", lineno) from None
    t = obj.get("time_ns")
    if not isinstance(t, int) or isinstance(t, bool) or t < 0:
        raise MalformedEventError(f"time_ns must be a non-negative integer, got {t!r}", lineno)
    if kind is EventKind.DETECTION:
        ch = obj.get("channel")
        if ch not in ("t", "r"):
            raise MalformedEventError(f"detection channel must be 't' or 'r', got {ch!r}", lineno)
        return TimetagEvent(kind, t, channel=ch)
    if kind is EventKind.ION_RESULT:
        try:
            outcome = IonOutcome.parse(obj.get("outcome"))
        except (ValueError, TypeError):
            raise MalformedEventError(f"bad ion outcome {obj.get('outcome')!r}", lineno) from None
        return TimetagEvent(kind, t, outcome=outcome)
    return TimetagEvent(kind, t)


def iter_stream(lines: Iterable[str]) -> tuple[StreamHeader, Iterator[TimetagEvent]]:
    """Parse the header eagerly and return a lazy, validating event iterator."""
    it = iter(lines)
    try:
        first = next(it)
    except StopIteration:
        raise MissingHeaderError("empty stream, header missing", 1) from None
    try:
        head = json.loads(first)
        if not isinstance(head, dict) or "kind" in head:
            raise ValueError
        header = StreamHeader.from_dict(head)
    except (ValueError, KeyError, TypeError):
        raise MissingHeaderError("first line is not a valid header object", 1) from None
    if header.format_version != FORMAT_VERSION:
        raise MissingHeaderError(f"unsupported format_version {header.format_version}", 1)

    def events() -> Iterator[TimetagEvent]:
        last_t = -1
        open_attempt = False
        for lineno, line in enumerate(it, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedEventError(f"invalid JSON ({exc.msg})", lineno) from None
            ev = _parse_event(obj, lineno)
            if ev.time_ns < last_t:
                raise UnsortedEventsError(f"time {ev.time_ns} precedes previous event at {last_t}", lineno)
            last_t = ev.time_ns
            if ev.kind is EventKind.ATTEMPT_START:
                open_attempt = True
            elif ev.kind is EventKind.ION_RESULT and not open_attempt:
                raise MalformedEventError("ION_RESULT before any ATTEMPT_START", lineno)
            yield ev

    return header, events()


def parse_stream(source) -> tuple[list[TimetagEvent], StreamHeader]:
    """Read a whole stream from a path, an open text file or a list of lines."""
    if isinstance(source, (str, Path)):
        with open_text(source, "r") as fh:
            header, events = iter_stream(fh)
            return list(events), header
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        header, events = iter_stream(source)
        return list(events), header
    header, events = iter_stream(source)
    return list(events), header


def format_stream(header: StreamHeader, events: Iterable[TimetagEvent]) -> str:
    buf = io.StringIO()
    buf.write(json.dumps(header.to_dict(), sort_keys=True) + "\n")
    for ev in events:
        buf.write(json.dumps(ev.to_dict()) + "\n")
    return buf.getvalue()


def write_stream(path, header: StreamHeader, events: Iterable[TimetagEvent]) -> None:
    text = format_stream(header, events)
    if str(path).endswith(".gz"):
        # mtime=0 keeps compressed output byte-identical across runs.
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
            gz.write(text.encode("utf-8"))
    else:
        Path(path).write_text(text, encoding="utf-8")


@dataclass
class CountTable:
    """Triple-coincidence counts ``counts[lmn, opq]`` for one setting.

    Rows follow :meth:`IonOutcome.index`, columns :data:`PATTERNS`.
    ``singles[w, c]`` counts windows ``w`` in which detector ``c``
    (0 = t, 1 = r) clicked at least once, over all attempts.
    """

    counts: np.ndarray = field(default_factory=lambda: np.zeros((8, 8), dtype=np.int64))
    singles: np.ndarray = field(default_factory=lambda: np.zeros((3, 2), dtype=np.int64))
    attempts: int = 0
    setting: MeasurementSetting | None = None
    rejected_no_ion_result: int = 0
    ion_result_without_coincidence: int = 0
    ambiguous_windows: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.singles = np.asarray(self.singles, dtype=np.int64)
        if self.counts.shape != (8, 8):
            raise ValueError(f"counts must have shape (8, 8), got {self.counts.shape}")
        if np.any(self.counts < 0) or np.any(self.singles < 0):
            raise ValueError("counts must be non-negative")

    @property
    def coincidences(self) -> int:
        return int(self.counts.sum())

    def singles_total(self, channel: str) -> int:
        return int(self.singles[:, "tr".index(channel)].sum())

    def count(self, outcome, pattern: str) -> int:
        return int(self.counts[IonOutcome.parse(outcome).index, PATTERNS.index(pattern)])

    def __eq__(self, other) -> bool:
        if not isinstance(other, CountTable):
            return NotImplemented
        return (
            np.array_equal(self.counts, other.counts)
            and np.array_equal(self.singles, other.singles)
            and self.attempts == other.attempts
            and self.rejected_no_ion_result == other.rejected_no_ion_result
            and self.ion_result_without_coincidence == other.ion_result_without_coincidence
            and self.ambiguous_windows == other.ambiguous_windows
        )

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lmn", "opq", "count"])
        for outcome in IonOutcome.all():
            for j, pat in enumerate(PATTERNS):
                w.writerow([outcome.label, pat, int(self.counts[outcome.index, j])])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, text: str, **kwargs) -> "CountTable":
        counts = np.zeros((8, 8), dtype=np.int64)
        for row in csv.DictReader(io.StringIO(text)):
            counts[IonOutcome.parse(row["lmn"]).index, PATTERNS.index(row["opq"])] = int(row["count"])
        return cls(counts=counts, **kwargs)

    def to_dict(self) -> dict:
        return {
            "setting": None if self.setting is None else self.setting.to_dict(),
            "attempts": self.attempts,
            "counts": self.counts.tolist(),
            "singles": self.singles.tolist(),
            "rejected_no_ion_result": self.rejected_no_ion_result,
            "ion_result_without_coincidence": self.ion_result_without_coincidence,
            "ambiguous_windows": self.ambiguous_windows,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CountTable":
        setting = obj.get("setting")
        return cls(
            counts=np.array(obj["counts"]),
            singles=np.array(obj["singles"]),
            attempts=int(obj["attempts"]),
            setting=None if setting is None else MeasurementSetting.from_dict(setting),
            rejected_no_ion_result=int(obj.get("rejected_no_ion_result", 0)),
            ion_result_without_coincidence=int(obj.get("ion_result_without_coincidence", 0)),
            ambiguous_windows=int(obj.get("ambiguous_windows", 0)),
        )


def extract_coincidences(
    events: Iterable[TimetagEvent],
    windowing: AttemptWindowing | None = None,
    setting: MeasurementSetting | None = None,
) -> CountTable:
    """Single-pass extraction of triple coincidences.

    A window reads ``t`` or ``r`` according to its earliest click; windows in
    which both detectors fired are counted in ``ambiguous_windows``.
    """
    windowing = windowing or AttemptWindowing()
    nw = windowing.windows_per_attempt
    table = CountTable(singles=np.zeros((nw, 2), dtype=np.int64), setting=setting)

    start = None
    first_click: list[dict[str, int]] = []
    outcome = None

    def close():
        if start is None:
            return
        pattern = []
        for k, clicks in enumerate(first_click):
            for ch in clicks:
                table.singles[k, "tr".index(ch)] += 1
            if not clicks:
                pattern.append(None)
                continue
            if len(clicks) == 2:
                table.ambiguous_windows += 1
            pattern.append(min(clicks, key=lambda c: (clicks[c], "tr".index(c))))
        triple = nw == 3 and all(p is not None for p in pattern)
        if triple and outcome is not None:
            table.counts[outcome.index, PATTERNS.index("".join(pattern))] += 1
        elif triple:
            table.rejected_no_ion_result += 1
        elif outcome is not None:
            table.ion_result_without_coincidence += 1

    for ev in events:
        if ev.kind is EventKind.ATTEMPT_START:
            close()
            start = ev.time_ns
            first_click = [{} for _ in range(nw)]
            outcome = None
            table.attempts += 1
        elif start is None:
            continue
        elif ev.kind is EventKind.DETECTION:
            k = windowing.window_of(ev.time_ns - start)
            if k is not None and ev.channel not in first_click[k]:
                first_click[k][ev.channel] = ev.time_ns
        elif ev.kind is EventKind.ION_RESULT:
            outcome = ev.outcome
    close()
    return table


def joint_distribution(states: ConditionalStateSet, setting: MeasurementSetting) -> np.ndarray:
    """``P(lmn, opq)`` with ideal detectors, shape (8, 8)."""
    joint = np.zeros((8, 8))
    for outcome, branch in states:
        if branch.state is not None:
            joint[outcome.index] = branch.probability * pattern_probabilities(branch.state, setting)
    return joint / joint.sum()


@dataclass
class SyntheticStream:
    header: StreamHeader
    text: str
    truth: CountTable

    def events(self) -> list[TimetagEvent]:
        return parse_stream(self.text.splitlines())[0]


def synthesize_stream(
    source,
    setting: MeasurementSetting,
    det: DetectorModel | None = None,
    efficiencies: Sequence[float] = (1.0, 1.0, 1.0),
    attempts: int = 10_000,
    seed=None,
    windowing: AttemptWindowing | None = None,
    attempt_period_ns: int = 200_000,
    notes: str = "",
) -> SyntheticStream:
    """Sample a timetag stream for one setting.

    ``source`` is a :class:`ConditionalStateSet` or three ion-photon density
    matrices. Each attempt draws an ion outcome and a port pattern from the
    exact joint distribution, then keeps each photon with probability
    ``efficiencies[k] * eta[port]``. Dark clicks are added per detector and
    window. The ion result is written only after a triple coincidence.
    """
    if attempts <= 0:
        raise ValueError("attempts must be positive")
    det = det or DetectorModel()
    windowing = windowing or AttemptWindowing()
    if windowing.windows_per_attempt != 3:
        raise ValueError("the sampler models exactly three photon windows")
    t_ion_offset = windowing.span_ns + 1_000
    # the ion result must land inside its own attempt
    if attempt_period_ns <= t_ion_offset:
        raise ValueError("attempt period must exceed the window span plus 1 us readout delay")
    if not isinstance(source, ConditionalStateSet):
        source = ghz_projection_table([s if isinstance(s, DensityMatrix) else DensityMatrix(s) for s in source])
    rng = check_random_state(seed)
    eff = np.asarray(efficiencies, dtype=float)
    if eff.shape != (3,) or np.any(eff < 0) or np.any(eff > 1):
        raise ValueError("need three efficiencies in [0, 1]")

    joint = joint_distribution(source, setting).reshape(-1)
    draws = rng.choice(64, size=attempts, p=joint)
    lmn = draws // 8
    # ports[a, k] = 0 for t, 1 for r
    ports = np.stack([(draws % 8) >> s & 1 for s in (2, 1, 0)], axis=1)
    keep_p = eff[None, :] * det.port_efficiency[ports]
    detected = rng.random((attempts, 3)) < keep_p
    L = windowing.window_length_ns
    photon_dt = rng.integers(0, L, size=(attempts, 3))

    lam = det.dark_counts_per_window
    n_dark = rng.poisson(lam, size=(attempts, 3, 2)) if lam > 0 else np.zeros((attempts, 3, 2), dtype=np.int64)

    header = StreamHeader(setting, windowing, attempt_period_ns, notes)
    truth = CountTable(attempts=attempts, setting=setting)
    offsets = windowing.window_offsets_ns
    active = detected.any(axis=1) | (n_dark.sum(axis=(1, 2)) > 0)
    lines = [json.dumps(header.to_dict(), sort_keys=True)]
    channel = "tr"
    for a in range(attempts):
        t0 = a * attempt_period_ns
        lines.append(f'{{"kind": "ATTEMPT_START", "time_ns": {t0}}}')
        if not active[a]:
            continue
        clicks = []  # (time, channel index, window)
        for k in range(3):
            base = t0 + offsets[k]
            if detected[a, k]:
                clicks.append((base + int(photon_dt[a, k]), int(ports[a, k]), k))
            for c in (0, 1):
                for _ in range(n_dark[a, k, c]):
                    clicks.append((base + int(rng.integers(0, L)), c, k))
        clicks.sort()
        # first click per (window, channel); sorted order makes the first one earliest
        earliest: dict[tuple[int, int], int] = {}
        for t, c, k in clicks:
            lines.append(f'{{"kind": "DETECTION", "time_ns": {t}, "channel": "{channel[c]}"}}')
            earliest.setdefault((k, c), t)
        pattern = []
        for k in range(3):
            fired = [c for c in (0, 1) if (k, c) in earliest]
            for c in fired:
                truth.singles[k, c] += 1
            if len(fired) == 2:
                truth.ambiguous_windows += 1
            if fired:
                # ties go to t
                pattern.append(channel[min(fired, key=lambda c: (earliest[(k, c)], c))])
        if len(pattern) == 3:
            truth.counts[lmn[a], PATTERNS.index("".join(pattern))] += 1
            label = IonOutcome.from_index(int(lmn[a])).label
            lines.append(f'{{"kind": "ION_RESULT", "time_ns": {t0 + t_ion_offset}, "outcome": "{label}"}}')
    return SyntheticStream(header, "\n".join(lines) + "\n", truth)
