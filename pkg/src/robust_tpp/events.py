"""Event streams: data model, CSV ingestion with period folding, NHP simulation."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from datetime import date, datetime
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError

ISO_FORMATS = ("%Y/%m/%d %H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S")


@dataclass(frozen=True, eq=False)
class EventStream:
    """Sorted event times (hours) on ``[0, num_periods * period_T)``.

    Duplicate timestamps are kept; times are non-decreasing.
    """

    times: np.ndarray
    period_T: float
    num_periods: int = 1
    id: str = ""

    def __post_init__(self):
        times = np.sort(np.asarray(self.times, dtype=float).ravel())
        if self.period_T <= 0:
            raise ConfigError(f"stream {self.id!r}: period_T must be positive")
        if self.num_periods < 1:
            raise ConfigError(f"stream {self.id!r}: num_periods must be >= 1")
        if times.size and (times[0] < 0 or times[-1] >= self.num_periods * self.period_T):
            raise DataError(
                f"stream {self.id!r}: event times must lie in [0, {self.num_periods * self.period_T})"
            )
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def num_events(self) -> int:
        return int(self.times.size)

    @property
    def phases(self) -> np.ndarray:
        """Event times reduced modulo the period."""
        return np.mod(self.times, self.period_T)

    def __len__(self):
        return self.num_events

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.id == other.id
            and self.period_T == other.period_T
            and self.num_periods == other.num_periods
            and np.array_equal(self.times, other.times)
        )

    def __hash__(self):
        return hash((self.id, self.period_T, self.num_periods, self.times.tobytes()))


@dataclass(frozen=True)
class Dataset:
    streams: tuple[EventStream, ...]

    def __post_init__(self):
        streams = tuple(self.streams)
        if not streams:
            raise DataError("dataset is empty")
        periods = {s.period_T for s in streams}
        if len(periods) != 1:
            raise DataError(f"streams disagree on period_T: {sorted(periods)}")
        ids = [s.id for s in streams]
        seen = set()
        for sid in ids:
            if sid in seen:
                raise DataError(f"duplicate stream id {sid!r}")
            seen.add(sid)
        object.__setattr__(self, "streams", streams)

    @property
    def period_T(self) -> float:
        return self.streams[0].period_T

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.streams]

    def __len__(self):
        return len(self.streams)

    def __iter__(self):
        return iter(self.streams)

    def __getitem__(self, i):
        return self.streams[i]


# ---------------------------------------------------------------- ingestion


@dataclass(frozen=True)
class FoldSpec:
    """Maps calendar days (ISO date strings) to period indices.

    Several days mapped to one period are superposed. Days not listed are
    dropped.
    """

    periods: Mapping[str, int]
    num_periods: int

    def __post_init__(self):
        bad = [d for d, p in self.periods.items() if not 0 <= p < self.num_periods]
        if bad:
            raise ConfigError(f"fold_spec maps {bad[0]!r} outside [0, {self.num_periods})")


def _parse_time(raw: str):
    raw = raw.strip()
    try:
        return float(raw)
    except ValueError:
        pass
    for fmt in ISO_FORMATS:
        try:
            return datetime.strptime(raw, fmt)
        except ValueError:
            continue
    raise ValueError(f"unparseable time {raw!r}")


def hour_of_day(ts: datetime) -> float:
    return ts.hour + ts.minute / 60.0 + ts.second / 3600.0


def load_streams(
    path,
    period_T: float = 24.0,
    fold_spec: FoldSpec | None = None,
    num_periods: int | None = None,
) -> Dataset:
    """Read an ``id,time`` CSV into a :class:`Dataset`.

    ``time`` is either decimal hours or an ISO-like timestamp
    (``YYYY/MM/DD HH:MM:SS``). Decimal hours are taken as absolute times;
    ``num_periods`` defaults to the smallest L that covers every event.
    Timestamps are reduced to hour of day and placed into periods: by
    ``fold_spec`` when given, otherwise by day offset from the stream's first
    calendar day. Timestamps require ``period_T == 24``.
    """
    path = Path(path)
    rows: dict[str, list] = {}
    declared_L: dict[str, int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, skipinitialspace=True)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip().lower() for h in header]
        try:
            id_col = header.index("id") if "id" in header else header.index("user_id")
            time_col = header.index("time")
        except ValueError:
            raise DataError(f"{path}: header must contain 'id' and 'time' columns") from None
        L_col = header.index("num_periods") if "num_periods" in header else None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                sid = row[id_col].strip()
                value = _parse_time(row[time_col])
                if L_col is not None:
                    declared_L[sid] = int(row[L_col])
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            rows.setdefault(sid, []).append(value)
    if not rows:
        raise DataError(f"{path}: no event rows")

    kinds = {type(v) for vals in rows.values() for v in vals}
    if len(kinds) > 1:
        raise DataError(f"{path}: mixes decimal-hour and timestamp times")
    if float in kinds:
        return _dataset_from_hours(rows, period_T, num_periods, declared_L)
    if period_T != 24.0:
        raise ConfigError("timestamp input requires period_T = 24")
    return _dataset_from_timestamps(rows, period_T, fold_spec)


def _dataset_from_hours(rows, period_T, num_periods, declared_L):
    if num_periods is None and not declared_L:
        top = max(max(v) for v in rows.values())
        num_periods = max(1, int(math.floor(top / period_T)) + 1)
    streams = []
    for sid, vals in rows.items():
        L = num_periods if num_periods is not None else declared_L[sid]
        arr = np.asarray(vals, dtype=float)
        if arr.min() < 0 or arr.max() >= L * period_T:
            raise DataError(f"stream {sid!r}: time outside [0, {L * period_T})")
        streams.append(EventStream(arr, period_T, L, sid))
    return Dataset(tuple(streams))


def _dataset_from_timestamps(rows, period_T, fold_spec):
    streams = []
    for sid, stamps in rows.items():
        if fold_spec is not None:
            times = [
                fold_spec.periods[ts.date().isoformat()] * period_T + hour_of_day(ts)
                for ts in stamps
                if ts.date().isoformat() in fold_spec.periods
            ]
            L = fold_spec.num_periods
        else:
            first: date = min(ts.date() for ts in stamps)
            times = [(ts.date() - first).days * period_T + hour_of_day(ts) for ts in stamps]
            L = int(max(times) // period_T) + 1
        streams.append(EventStream(np.asarray(times), period_T, L, sid))
    return Dataset(tuple(streams))


def dataset_hash(dataset: Dataset) -> str:
    """Short sha256 over ids, periods and event times (order-sensitive)."""
    h = hashlib.sha256()
    for s in dataset:
        h.update(f"{s.id}|{float(s.period_T)!r}|{s.num_periods}|".encode())
        h.update(np.ascontiguousarray(s.times, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def write_events_csv(path, dataset: Dataset, labels: Mapping[str, str] | None = None, extra=None):
    """Write decimal-hour events; one row per event."""
    extra = dict(extra or {})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        cols = ["id", "time", "period_T", "num_periods"]
        if labels is not None:
            cols.append("label")
        cols += list(extra)
        w.writerow(cols)
        for s in dataset:
            for t in s.times:
                row = [s.id, repr(float(t)), s.period_T, s.num_periods]
                if labels is not None:
                    row.append(labels[s.id])
                row += list(extra.values())
                w.writerow(row)


# ---------------------------------------------------------------- simulation


@dataclass(frozen=True)
class IntensityTerm:
    """One additive term: ``amplitude * exp(-(t - center)^2 / width)`` or a constant ``level``."""

    kind: str
    amplitude: float = 0.0
    center: float = 0.0
    width: float = 1.0
    level: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gauss", "const"):
            raise ConfigError(f"unknown intensity term kind {self.kind!r}")
        if self.kind == "gauss" and (self.amplitude < 0 or self.width <= 0):
            raise ConfigError("gauss term needs amplitude >= 0 and width > 0")
        if self.kind == "const" and self.level < 0:
            raise ConfigError("const term needs level >= 0")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "const":
            return np.full_like(t, self.level)
        return self.amplitude * np.exp(-((t - self.center) ** 2) / self.width)

    @property
    def sup(self) -> float:
        return self.level if self.kind == "const" else self.amplitude


def _draw(value, rng):
    if isinstance(value, Mapping):
        if "uniform" in value:
            lo, hi = value["uniform"]
            return float(rng.uniform(lo, hi))
        if "randint" in value:
            lo, hi = value["randint"]
            return float(rng.integers(lo, hi + 1))
        raise ConfigError(f"unsupported random parameter {dict(value)!r}")
    return float(value)


@dataclass(frozen=True)
class IntensitySpec:
    """Closed-form nonnegative intensity on ``[0, T]``: a sum of terms."""

    terms: tuple[IntensityTerm, ...] = ()
    bound: float | None = None

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for term in self.terms:
            out = out + term(t)
        return out

    @property
    def sup_bound(self) -> float:
        """An upper bound for thinning; the sum of term maxima unless set explicitly."""
        if self.bound is not None:
            return float(self.bound)
        return float(sum(term.sup for term in self.terms))

    @classmethod
    def from_dicts(cls, terms: Sequence[Mapping], rng=None) -> "IntensitySpec":
        """Build from JSON-style term dicts.

        Any numeric field may be ``{"uniform": [lo, hi]}``; it is drawn once
        from ``rng`` for this realisation.
        """
        rng = np.random.default_rng(rng)
        built = []
        for d in terms:
            kw = {k: _draw(v, rng) for k, v in d.items() if k != "kind"}
            built.append(IntensityTerm(kind=d["kind"], **kw))
        return cls(tuple(built))

    def to_dicts(self) -> list[dict]:
        out = []
        for t in self.terms:
            if t.kind == "const":
                out.append({"kind": "const", "level": t.level})
            else:
                out.append({"kind": "gauss", "amplitude": t.amplitude, "center": t.center, "width": t.width})
        return out


def simulate_nhp(spec, T: float, L: int = 1, seed=None, stream_id: str = "") -> EventStream:
    """Draw one L-period stream by Lewis-Shedler thinning.

    ``spec`` is any callable intensity on ``[0, T]`` exposing ``sup_bound``
    (or an :class:`IntensitySpec`). Each period is simulated independently and
    offset by ``l * T``.
    """
    lam_max = float(spec.sup_bound)
    if not math.isfinite(lam_max) or lam_max < 0:
        raise ConfigError(f"intensity bound must be finite and nonnegative, got {lam_max}")
    rng = np.random.default_rng(seed)
    chunks = []
    if lam_max > 0:
        for l in range(L):
            n = rng.poisson(lam_max * T)
            cand = rng.uniform(0.0, T, size=n)
            lam = np.asarray(spec(cand), dtype=float)
            if np.any(lam > lam_max * (1 + 1e-12)):
                raise ConfigError("intensity exceeds its declared bound")
            keep = rng.uniform(0.0, lam_max, size=n) < lam
            chunks.append(np.sort(cand[keep]) + l * T)
    times = np.concatenate(chunks) if chunks else np.empty(0)
    return EventStream(times, T, L, stream_id)


def apply_shift(stream: EventStream, shift: float) -> EventStream:
    """Circularly shift every period's events by ``shift`` (mod T)."""
    T = stream.period_T
    shift = float(shift) % T
    if shift == 0.0:
        return stream
    t = stream.times
    base = T * np.floor(t / T)
    shifted = np.mod(np.mod(t, T) + shift, T) + base
    # a phase just below T can round onto the next period's start
    shifted = np.where(shifted >= base + T, base, shifted)
    return EventStream(shifted, T, stream.num_periods, stream.id)


def align_stream(stream: EventStream, shift: float) -> EventStream:
    """Undo a forward shift: the stream whose intensity is ``lambda_S(t + shift)``."""
    return apply_shift(stream, (-shift) % stream.period_T)
