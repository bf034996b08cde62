"""Event-log ingestion, preprocessing, tokenisation and a synthetic home.

Day files are CASAS-style whitespace-delimited lines::

    2008-11-10 14:28:17.98 M22 ON 1 3
    2008-11-10 14:28:19.02 D07 OPEN 2 9 1 3

i.e. date, time, sensor, value, then zero, one or two ``resident activity``
annotation pairs.  Activity ids in files are 1-based; in memory they are
0-based class indices.
"""
from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

PAD, SOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("PAD", "SOS", "EOS", "UNK")
NONE_YET = -1


class DataError(ValueError):
    """Raised for input that cannot be turned into events or instances."""


class MissingAnnotationError(DataError):
    pass


@dataclass(frozen=True)
class SensorEvent:
    timestamp: datetime
    sensor: str
    value: str
    resident: int | None = None
    activity: int | None = None
    # (resident, activity) of a second annotation pair on the same line
    extra: tuple[int, int] | None = None
    # per-resident current activity after label completion, ordered by resident id
    labels: tuple[int, int] | None = None

    @property
    def token(self) -> str:
        return f"{self.sensor}:{self.value}"


@dataclass
class ParseResult:
    events: list[SensorEvent]
    diagnostics: list[str] = field(default_factory=list)
    layout: str = "none"
    skipped: int = 0


# ------------------------------------------------------------------- parsing

def _parse_time(date: str, clock: str) -> datetime:
    text = f"{date} {clock}"
    for fmt in ("%Y-%m-%d %H:%M:%S.%f", "%Y-%m-%d %H:%M:%S"):
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    raise ValueError(f"bad timestamp {text!r}")


def load_corrections(path) -> dict[str, str]:
    """Read a two-column ``old new`` correction table (``#`` comments allowed)."""
    table = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'old new', got {line!r}")
            table[parts[0]] = parts[1]
    return table


def parse_casas(stream: TextIO | str | Path, corrections: dict[str, str] | None = None,
                label_offset: int = 1) -> ParseResult:
    """Parse one day file.

    Blank, comment and malformed lines are skipped and described in
    ``diagnostics``.  Out-of-order timestamps trigger a warning and a stable
    sort.  ``corrections`` rewrites raw activity labels before conversion.
    """
    if isinstance(stream, (str, Path)):
        try:
            with open(stream) as fh:
                return parse_casas(fh, corrections, label_offset)
        except OSError as exc:
            raise DataError(f"cannot read {stream}: {exc}") from exc
    corrections = corrections or {}
    events: list[SensorEvent] = []
    diag: list[str] = []
    layouts: set[str] = set()
    skipped = 0
    for lineno, raw in enumerate(stream, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            skipped += 1
            diag.append(f"line {lineno}: blank or comment")
            continue
        parts = line.split()
        if len(parts) < 4 or len(parts) - 4 not in (0, 2, 4):
            skipped += 1
            diag.append(f"line {lineno}: expected 4, 6 or 8 fields, got {len(parts)}")
            continue
        try:
            ts = _parse_time(parts[0], parts[1])
            pairs = []
            for i in range(4, len(parts), 2):
                act = corrections.get(parts[i + 1], parts[i + 1])
                pairs.append((int(parts[i]), int(act) - label_offset))
        except ValueError as exc:
            skipped += 1
            diag.append(f"line {lineno}: {exc}")
            continue
        layouts.add({0: "none", 1: "1-pair", 2: "2-pair"}[len(pairs)])
        resident, activity = pairs[0] if pairs else (None, None)
        extra = pairs[1] if len(pairs) == 2 else None
        events.append(SensorEvent(ts, parts[2], parts[3], resident, activity, extra))

    residents = {e.resident for e in events if e.resident is not None}
    residents |= {e.extra[0] for e in events if e.extra is not None}
    if len(residents) > 2:
        raise DataError(f"more than two residents in one day file: {sorted(residents)}")
    if any(b.timestamp < a.timestamp for a, b in zip(events, events[1:])):
        warnings.warn("timestamps out of order; events sorted stably", stacklevel=2)
        diag.append("timestamps out of order; sorted")
        events.sort(key=lambda e: e.timestamp)
    annotated = sorted(layouts - {"none"})
    layout = "mixed" if len(annotated) > 1 else (annotated[0] if annotated else "none")
    return ParseResult(events, diag, layout, skipped)


def write_casas(events: Iterable[SensorEvent], stream: TextIO, label_offset: int = 1) -> None:
    for e in events:
        cols = [e.timestamp.strftime("%Y-%m-%d"), e.timestamp.strftime("%H:%M:%S.%f"), e.sensor, e.value]
        if e.resident is not None:
            cols += [str(e.resident), str(e.activity + label_offset)]
        if e.extra is not None:
            cols += [str(e.extra[0]), str(e.extra[1] + label_offset)]
        stream.write(" ".join(cols) + "\n")


# -------------------------------------------------------------- preprocessing

def resident_slots(events: Sequence[SensorEvent]) -> list[int]:
    """Resident ids of a day in slot order (ascending id)."""
    ids = {e.resident for e in events if e.resident is not None}
    ids |= {e.extra[0] for e in events if e.extra is not None}
    return sorted(ids)


def complete_second_labels(events: Sequence[SensorEvent]) -> list[SensorEvent]:
    """Attach ``labels = (activity of slot 0, activity of slot 1)`` to each event.

    Each slot carries forward the most recent activity of that resident;
    before the resident's first event it holds ``NONE_YET``.
    """
    slots = resident_slots(events)
    index = {r: i for i, r in enumerate(slots)}
    current = [NONE_YET, NONE_YET]
    out = []
    for e in events:
        if e.resident is None or e.activity is None:
            raise MissingAnnotationError(f"event at {e.timestamp} has no resident/activity")
        current[index[e.resident]] = e.activity
        if e.extra is not None:
            current[index[e.extra[0]]] = e.extra[1]
        out.append(replace(e, labels=(current[0], current[1])))
    return out


def is_motion_sensor(sensor: str) -> bool:
    return sensor.startswith("M")


def filter_motion_off(events: Sequence[SensorEvent],
                      is_motion: Callable[[str], bool] = is_motion_sensor) -> list[SensorEvent]:
    """Drop automatic motion deactivations (motion sensor reporting OFF)."""
    return [e for e in events if not (is_motion(e.sensor) and e.value.upper() == "OFF")]


def drop_unannotated(events: Sequence[SensorEvent]) -> tuple[list[SensorEvent], int]:
    kept = [e for e in events if e.resident is not None and e.activity is not None]
    return kept, len(events) - len(kept)


def majority_vote(last3: Sequence[tuple[int, int]], n_labels: int) -> np.ndarray:
    """Multi-hot target from three per-resident label pairs.

    Per resident, the label seen at least twice wins; with three distinct
    labels the most recent one wins.  ``NONE_YET`` winners set no bit.
    """
    if len(last3) != 3:
        raise ValueError(f"majority_vote needs 3 label pairs, got {len(last3)}")
    target = np.zeros(n_labels, dtype=np.int64)
    for slot in range(2):
        votes = [pair[slot] for pair in last3]
        winner = votes[-1]
        for v in votes:
            if votes.count(v) >= 2:
                winner = v
                break
        if winner != NONE_YET:
            target[winner] = 1
    return target


def make_separation_target(tokens: Sequence, residents: Sequence[int | None],
                           eos="EOS", sos="SOS") -> list:
    """Serialise ``resident-1 tokens, EOS, SOS, resident-2 tokens, EOS``.

    Resident 1 is whoever triggered the first token; each resident keeps the
    input order of its events.
    """
    if len(tokens) != len(residents):
        raise ValueError("tokens and residents differ in length")
    if not tokens:
        raise ValueError("empty window")
    if any(r is None for r in residents):
        raise MissingAnnotationError("window contains an event without resident id")
    if len(set(residents)) > 2:
        raise DataError(f"more than two residents in window: {sorted(set(residents))}")
    first = residents[0]
    seg1 = [t for t, r in zip(tokens, residents) if r == first]
    seg2 = [t for t, r in zip(tokens, residents) if r != first]
    return seg1 + [eos, sos] + seg2 + [eos]


def validate_separation_target(tokens: Sequence, eos=EOS, sos=SOS) -> None:
    tokens = list(tokens)
    if tokens.count(eos) != 2 or tokens[-1] != eos:
        raise DataError("separation target needs exactly two EOS, the last at the end")
    k = tokens.index(eos)
    if k == 0:
        raise DataError("separation target has an empty first segment")
    if tokens.count(sos) != 1 or k + 1 >= len(tokens) or tokens[k + 1] != sos:
        raise DataError("separation target needs exactly one SOS right after the first EOS")


# ------------------------------------------------------------------ vocabulary

class Vocabulary:
    """Token <-> id map; specials occupy ids 0..3, other tokens follow in sorted order."""

    def __init__(self, tokens: Iterable[str]):
        self.itos = list(SPECIALS) + sorted(set(tokens) - set(SPECIALS))
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for i, tok in enumerate(self.itos):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        rows = [line.rstrip("\n").split("\t") for line in open(path) if line.strip()]
        itos = [tok for tok, _ in sorted(rows, key=lambda r: int(r[1]))]
        if tuple(itos[:4]) != SPECIALS:
            raise DataError(f"{path}: vocabulary must start with {SPECIALS}")
        vocab = cls(itos[4:])
        if vocab.itos != itos:
            raise DataError(f"{path}: vocabulary ids are not in canonical order")
        return vocab


def build_vocab(train_tokens: Iterable[str]) -> Vocabulary:
    tokens = list(train_tokens)
    if not tokens:
        raise DataError("cannot build a vocabulary from an empty training split")
    return Vocabulary(tokens)


# ------------------------------------------------------------------- instances

@dataclass(frozen=True)
class Instance:
    """One window.  Tokens are kept as strings so each fold can build its own vocabulary."""

    day_id: int
    window_start: int
    window: tuple[str, ...]
    target_sep: tuple[str, ...]
    target_labels: tuple[int, ...]

    @property
    def label_set(self) -> frozenset[int]:
        return frozenset(i for i, b in enumerate(self.target_labels) if b)

    def gt_separated(self) -> tuple[str, ...]:
        """Ground-truth separation without the closing EOS (classifier input)."""
        return self.target_sep[:-1]


def window_instances(events: Sequence[SensorEvent], day_id: int, n_labels: int,
                     width: int = 16, step: int = 3) -> list[Instance]:
    """Full-width sliding windows over one completed day."""
    if any(e.labels is None for e in events):
        raise DataError("window_instances needs events from complete_second_labels")
    tokens = [e.token for e in events]
    residents = [e.resident for e in events]
    out = []
    for start in range(0, len(events) - width + 1, step):
        stop = start + width
        target = majority_vote([e.labels for e in events[stop - 3:stop]], n_labels)
        out.append(Instance(
            day_id=day_id,
            window_start=start,
            window=tuple(tokens[start:stop]),
            target_sep=tuple(make_separation_target(tokens[start:stop], residents[start:stop])),
            target_labels=tuple(int(b) for b in target),
        ))
    return out


def preprocess_day(events: Sequence[SensorEvent], day_id: int, n_labels: int,
                   width: int = 16, step: int = 3) -> tuple[list[Instance], list[str]]:
    """Annotated day -> instances (drop unannotated, filter motion OFF, complete, window)."""
    notes = []
    kept, dropped = drop_unannotated(events)
    if dropped:
        notes.append(f"day {day_id}: dropped {dropped} unannotated events")
    filtered = filter_motion_off(kept)
    notes.append(f"day {day_id}: removed {len(kept) - len(filtered)} motion OFF events")
    instances = window_instances(complete_second_labels(filtered), day_id, n_labels, width, step)
    if not instances:
        notes.append(f"day {day_id}: {len(filtered)} events is shorter than width {width}; no instances")
    return instances, notes


def write_instances(instances: Iterable[Instance], stream: TextIO) -> None:
    """One line per instance: day, start, window, separation target, label bitmask (tab separated)."""
    for inst in instances:
        stream.write("\t".join([
            str(inst.day_id), str(inst.window_start), " ".join(inst.window),
            " ".join(inst.target_sep), "".join(map(str, inst.target_labels)),
        ]) + "\n")


def read_instances(stream: TextIO | str | Path) -> list[Instance]:
    if isinstance(stream, (str, Path)):
        with open(stream) as fh:
            return read_instances(fh)
    out = []
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 5:
            raise DataError(f"instance line {lineno}: expected 5 tab-separated fields")
        out.append(Instance(int(parts[0]), int(parts[1]), tuple(parts[2].split()),
                            tuple(parts[3].split()), tuple(int(c) for c in parts[4])))
    return out


# ------------------------------------------------------------------- synthetic

@dataclass
class SyntheticConfig:
    """Two residents walking through activity zones of a simulated home.

    Resident 1 performs activities ``0..K-1`` and resident 2 ``K..2K-1``;
    activity ``k`` of either resident happens in zone ``k``.  Each zone is a
    line of ``sensors_per_zone`` sensors (the last one a door/item sensor).
    A fraction ``overlap`` of resident 2's zone sensors is shared with
    resident 1's zone of the same index.  Each resident emits events as a
    Poisson process of rate ``event_rate`` per second.
    """

    overlap: float = 0.0
    activities_per_resident: int = 4
    sensors_per_zone: int = 4
    event_rate: float = 0.2
    mean_bout_events: float = 24.0
    move_prob: float = 0.6
    motion_off_prob: float = 0.2
    events_per_day: int = 400
    days: int = 4
    seed: int = 0
    start: datetime = datetime(2008, 11, 10, 9, 0, 0)

    def __post_init__(self):
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError(f"overlap must lie in [0, 1], got {self.overlap}")
        if self.sensors_per_zone < 2 or self.activities_per_resident < 1:
            raise ValueError("need at least 2 sensors per zone and 1 activity per resident")

    @property
    def n_labels(self) -> int:
        return 2 * self.activities_per_resident


def sensor_layout(config: SyntheticConfig) -> dict[int, list[list[str]]]:
    """Resident id -> zone index -> ordered sensor names."""
    z = config.sensors_per_zone
    n_shared = int(round(config.overlap * z))
    counter = {"M": 0, "D": 0}

    def new(kind: str) -> str:
        counter[kind] += 1
        return f"{kind}{counter[kind]:03d}"

    def fresh_zone() -> list[str]:
        return [new("M") for _ in range(z - 1)] + [new("D")]

    zones1 = [fresh_zone() for _ in range(config.activities_per_resident)]
    zones2 = []
    for zone in zones1:
        other = fresh_zone()
        # share from the door end so that overlap 1 yields identical sets
        zones2.append(other[: z - n_shared] + zone[z - n_shared:])
    return {1: zones1, 2: zones2}


def generate_synthetic(config: SyntheticConfig, day: int = 0) -> list[SensorEvent]:
    """One annotated day; deterministic in ``(config.seed, day)``."""
    rng = np.random.default_rng([config.seed, day])
    layout = sensor_layout(config)
    K = config.activities_per_resident
    state = {}
    for r in (1, 2):
        act = int(rng.integers(K))
        state[r] = {"act": act, "pos": int(rng.integers(config.sensors_per_zone)),
                    "left": int(rng.geometric(1.0 / config.mean_bout_events)),
                    "on": None, "doors": {}, "t": float(rng.exponential(1.0 / config.event_rate))}
    events = []
    while len(events) < config.events_per_day:
        r = 1 if state[1]["t"] <= state[2]["t"] else 2
        s = state[r]
        label = s["act"] + (0 if r == 1 else K)
        zone = layout[r][s["act"]]
        if s["on"] is not None and rng.random() < config.motion_off_prob:
            sensor, value = s["on"], "OFF"
            s["on"] = None
        else:
            if rng.random() < config.move_prob:
                s["pos"] = int(np.clip(s["pos"] + rng.choice((-1, 1)), 0, len(zone) - 1))
            sensor = zone[s["pos"]]
            if sensor.startswith("D"):
                value = "CLOSE" if s["doors"].get(sensor) == "OPEN" else "OPEN"
                s["doors"][sensor] = value
            else:
                value = "ON"
                s["on"] = sensor
        events.append(SensorEvent(config.start + timedelta(days=day, seconds=s["t"]),
                                  sensor, value, r, label))
        s["t"] += float(rng.exponential(1.0 / config.event_rate))
        s["left"] -= 1
        if s["left"] <= 0:
            s["act"] = int(rng.integers(K))
            s["pos"] = int(rng.integers(config.sensors_per_zone))
            s["left"] = int(rng.geometric(1.0 / config.mean_bout_events))
    return events


def generate_synthetic_days(config: SyntheticConfig) -> list[list[SensorEvent]]:
    return [generate_synthetic(config, d) for d in range(config.days)]


def synthetic_instances(config: SyntheticConfig, width: int = 16, step: int = 3) -> list[Instance]:
    """Synthetic days run through the same preprocessing as real data (day ids start at 1)."""
    out = []
    for d, events in enumerate(generate_synthetic_days(config), start=1):
        out.extend(preprocess_day(events, d, config.n_labels, width, step)[0])
    return out


def casas_text(events: Iterable[SensorEvent]) -> str:
    buf = io.StringIO()
    write_casas(events, buf)
    return buf.getvalue()
