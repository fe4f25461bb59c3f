"""Append-only CSV log of readings.

One file per UTC day, named ``wx-YYYY-MM-DD.csv``, with the header

    rx_time,station_id,seq,temp_c,rh_pct,irr_wm2,wind_ms,wind_deg

``rx_time`` is ISO-8601 UTC with seconds (``2026-08-11T12:00:05Z``).  Values
carry wire precision: one decimal for temp/RH/wind speed, integers for
irradiance and direction.  No quoting; no field ever contains a comma.  The
full schema lives in docs/log-format.md and is part of the artifact's
contract.

Each record is written as a single system-level append (line + newline in one
``os.write``), so readers never observe a torn line.  Single writer, any
number of readers.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

from .protocol import Reading

log = logging.getLogger(__name__)

HEADER = "rx_time,station_id,seq,temp_c,rh_pct,irr_wm2,wind_ms,wind_deg"
_TIME_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
_DAY_FILE_RE = re.compile(r"wx-(\d{4})-(\d{2})-(\d{2})\.csv\Z")


def format_rx_time(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime(_TIME_FORMAT)


def parse_rx_time(text: str) -> datetime:
    return datetime.strptime(text, _TIME_FORMAT).replace(tzinfo=timezone.utc)


def stamp_rx_time(epoch_seconds: float) -> datetime:
    """Quantise a clock reading to the log's whole-second resolution."""
    return datetime.fromtimestamp(int(epoch_seconds), tz=timezone.utc)


@dataclass(frozen=True)
class LogRecord:
    """A reading stamped with the collector's receive time."""

    rx_time: datetime
    reading: Reading

    def to_line(self) -> str:
        r = self.reading
        return "%s,%d,%d,%.1f,%.1f,%d,%.1f,%d" % (
            format_rx_time(self.rx_time),
            r.station_id,
            r.seq,
            r.temperature,
            r.humidity,
            r.irradiance,
            r.wind_speed,
            r.wind_dir,
        )

    @classmethod
    def from_line(cls, line: str) -> "LogRecord":
        """Parse one CSV line; raises ValueError on any malformation."""
        fields = line.rstrip("\n").split(",")
        if len(fields) != 8:
            raise ValueError(f"expected 8 fields, got {len(fields)}")
        rx_time = parse_rx_time(fields[0])
        reading = Reading(
            station_id=int(fields[1]),
            seq=int(fields[2]),
            temperature=float(fields[3]),
            humidity=float(fields[4]),
            irradiance=int(fields[5]),
            wind_speed=float(fields[6]),
            wind_dir=int(fields[7]),
        )
        return cls(rx_time=rx_time, reading=reading)


class RunningStats:
    """Streaming min/max/sum/count; mean is sum/count at full precision.

    Values are accumulated in arrival order, so a second pass over the same
    records in the same order reproduces the mean bit-for-bit.
    """

    __slots__ = ("minimum", "maximum", "total", "count")

    def __init__(self):
        self.minimum = None
        self.maximum = None
        self.total = 0.0
        self.count = 0

    def add(self, value: float) -> None:
        if self.count == 0:
            self.minimum = value
            self.maximum = value
        else:
            self.minimum = min(self.minimum, value)
            self.maximum = max(self.maximum, value)
        self.total += value
        self.count += 1

    def snapshot(self) -> "QuantityStats | None":
        if self.count == 0:
            return None
        return QuantityStats(self.minimum, self.maximum, self.total / self.count)


@dataclass(frozen=True)
class QuantityStats:
    minimum: float
    maximum: float
    mean: float


QUANTITIES = ("temp_c", "rh_pct", "irr_wm2", "wind_ms", "wind_deg")

_FIELD_GETTERS = {
    "temp_c": lambda r: r.temperature,
    "rh_pct": lambda r: r.humidity,
    "irr_wm2": lambda r: float(r.irradiance),
    "wind_ms": lambda r: r.wind_speed,
    "wind_deg": lambda r: float(r.wind_dir),
}


def quantity_value(reading: Reading, name: str) -> float:
    """The reading's value for one of the five logged quantities."""
    return _FIELD_GETTERS[name](reading)


@dataclass(frozen=True)
class AggregateStats:
    """Per-quantity min/max/mean over a window; all None when count == 0."""

    count: int
    window: tuple[datetime, datetime]
    temp_c: QuantityStats | None
    rh_pct: QuantityStats | None
    irr_wm2: QuantityStats | None
    wind_ms: QuantityStats | None
    wind_deg: QuantityStats | None

    def quantity(self, name: str) -> QuantityStats | None:
        return getattr(self, name)


def aggregate(records, window: tuple[datetime, datetime]) -> AggregateStats:
    stats = {name: RunningStats() for name in QUANTITIES}
    count = 0
    for record in records:
        count += 1
        for name in QUANTITIES:
            stats[name].add(quantity_value(record.reading, name))
    return AggregateStats(
        count=count,
        window=window,
        **{name: stats[name].snapshot() for name in QUANTITIES},
    )


class LogStore:
    """Day-file CSV store rooted at one directory."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._fd: int | None = None
        self._fd_day: date | None = None
        self._fd_empty = False

    def day_path(self, day: date) -> Path:
        return self.directory / f"wx-{day.isoformat()}.csv"

    def ensure_writable(self) -> None:
        """Create the directory and probe append access; no data written."""
        self.directory.mkdir(parents=True, exist_ok=True)
        probe_path = self.directory / ".write-probe"
        probe = os.open(probe_path, os.O_WRONLY | os.O_CREAT | os.O_APPEND)
        os.close(probe)
        os.unlink(probe_path)

    def append(self, record: LogRecord) -> None:
        """Durably append one record as a single complete CSV line."""
        day = record.rx_time.astimezone(timezone.utc).date()
        fd = self._open_for(day)
        payload = record.to_line() + "\n"
        if self._fd_empty:
            payload = HEADER + "\n" + payload
        os.write(fd, payload.encode("ascii"))
        self._fd_empty = False

    def _open_for(self, day: date) -> int:
        if self._fd is not None and self._fd_day == day:
            return self._fd
        self.close()
        self.directory.mkdir(parents=True, exist_ok=True)
        fd = os.open(self.day_path(day), os.O_WRONLY | os.O_CREAT | os.O_APPEND)
        self._fd = fd
        self._fd_day = day
        self._fd_empty = os.fstat(fd).st_size == 0
        return fd

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
            self._fd_day = None

    def read_range(
        self,
        start: datetime,
        end: datetime,
        station_id: int | None = None,
    ) -> tuple[list[LogRecord], int]:
        """Records with ``start <= rx_time < end``, plus a malformed-line count.

        Records come back in file order; malformed lines are skipped and
        counted, never fatal.  A missing directory or file is simply empty.
        """
        if start > end:
            raise ValueError("range start is after end")
        records: list[LogRecord] = []
        skipped = 0
        for path in self._files_covering(start, end):
            try:
                text = path.read_text(encoding="ascii", errors="replace")
            except FileNotFoundError:
                continue
            for lineno, line in enumerate(text.splitlines()):
                if lineno == 0 and line == HEADER:
                    continue
                if not line:
                    continue
                try:
                    record = LogRecord.from_line(line)
                except ValueError:
                    skipped += 1
                    log.warning("%s:%d: skipping malformed line", path.name, lineno + 1)
                    continue
                if not (start <= record.rx_time < end):
                    continue
                if station_id is not None and record.reading.station_id != station_id:
                    continue
                records.append(record)
        return records, skipped

    def _files_covering(self, start: datetime, end: datetime) -> list[Path]:
        if not self.directory.is_dir():
            return []
        first = start.astimezone(timezone.utc).date()
        last = (end.astimezone(timezone.utc) - timedelta(microseconds=1)).date()
        out = []
        for path in sorted(self.directory.iterdir()):
            m = _DAY_FILE_RE.match(path.name)
            if not m:
                continue
            day = date(int(m.group(1)), int(m.group(2)), int(m.group(3)))
            if first <= day <= last:
                out.append(path)
        return out
