"""The collecting side: polls every station on a fixed-rate schedule, prints
each reading, appends it to the log, and keeps per-station state for the web
layer.

The poll loop is a single logical thread.  State snapshots may be taken from
any thread while the loop runs (single writer, many readers).

Console line format (stable, meant for scraping):

    <ISO-8601 UTC> st=<id> seq=<n> T=<x>C RH=<x>% IRR=<n>W/m2 WS=<x>m/s WD=<n>deg
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime

from . import protocol
from .clock import Clock
from .logstore import (
    QUANTITIES,
    LogRecord,
    LogStore,
    QuantityStats,
    RunningStats,
    format_rx_time,
    quantity_value,
    stamp_rx_time,
)
from .protocol import FrameScanner, ProtocolError, Reading
from .transport import Transport, TransportClosed, TransportUnavailable

log = logging.getLogger(__name__)

TIMEOUT = "timeout"
CHECKSUM_MISMATCH = "checksum_mismatch"
MALFORMED = "malformed"


@dataclass(frozen=True)
class StationLink:
    """One configured station: its id and how to reach it.

    ``address`` is ``tcp:HOST:PORT`` for a networked node or ``local`` for an
    in-process simulated one; the CLI resolves it to a transport.
    """

    station_id: int
    address: str


@dataclass(frozen=True)
class CollectorConfig:
    stations: tuple[StationLink, ...]
    poll_interval_s: float = 10.0
    poll_timeout_s: float = 8.0
    log_dir: str = "./wx-logs"
    page_interval_s: float = 300.0
    http_bind: str = "127.0.0.1:8080"

    def validate(self) -> None:
        if not self.stations:
            raise ValueError("at least one station must be configured")
        ids = [s.station_id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate station ids: {sorted(ids)}")
        for sid in ids:
            if not (protocol.STATION_ID_RANGE[0] <= sid <= protocol.STATION_ID_RANGE[1]):
                raise ValueError(f"station_id {sid} outside 1..255")
        if self.poll_interval_s <= 0 or self.page_interval_s <= 0 or self.poll_timeout_s <= 0:
            raise ValueError("intervals must be positive")
        if not self.poll_timeout_s < self.poll_interval_s:
            raise ValueError("poll_timeout_s must be below poll_interval_s")


@dataclass(frozen=True)
class PollTotals:
    polls: int = 0
    ok: int = 0
    checksum_errors: int = 0
    timeouts: int = 0
    other_errors: int = 0


@dataclass(frozen=True)
class StationState:
    station_id: int
    last_reading: Reading | None = None
    last_rx_time: datetime | None = None
    consecutive_failures: int = 0
    totals: PollTotals = field(default_factory=PollTotals)


@dataclass(frozen=True)
class PollFailure:
    kind: str  # TIMEOUT | CHECKSUM_MISMATCH | MALFORMED
    detail: str


def poll_once(
    transport: Transport,
    station_id: int,
    timeout_s: float,
    clock: Clock,
) -> Reading | PollFailure:
    """One request/response exchange; never blocks past ``timeout_s``.

    Stale inbound bytes are drained before the request goes out, so a late
    answer to an earlier poll cannot be mistaken for this one.
    """
    deadline = clock.now() + timeout_s
    try:
        transport.drain(clock)
        transport.send(protocol.encode_poll(station_id))
    except TransportUnavailable as err:
        return PollFailure(TIMEOUT, f"station unreachable: {err}")
    except TransportClosed as err:
        return PollFailure(MALFORMED, f"transport closed: {err}")
    scanner = FrameScanner()
    while True:
        try:
            data = transport.recv(deadline=deadline)
        except TransportClosed as err:
            return PollFailure(MALFORMED, f"transport closed: {err}")
        if not data:
            if clock.now() >= deadline:
                return PollFailure(TIMEOUT, f"no response within {timeout_s}s")
            continue
        for item in scanner.feed(data):
            if isinstance(item, Reading):
                if item.station_id == station_id:
                    return item
                continue  # someone else's reading; keep listening
            if isinstance(item, ProtocolError):
                if item.variant == protocol.CHECKSUM_MISMATCH:
                    return PollFailure(CHECKSUM_MISMATCH, item.detail)
                return PollFailure(MALFORMED, f"{item.variant}: {item.detail}")
            # a stray Poll frame echoed back; ignore


def console_line(record: LogRecord) -> str:
    r = record.reading
    return "%s st=%d seq=%d T=%.1fC RH=%.1f%% IRR=%dW/m2 WS=%.1fm/s WD=%ddeg" % (
        format_rx_time(record.rx_time),
        r.station_id,
        r.seq,
        r.temperature,
        r.humidity,
        r.irradiance,
        r.wind_speed,
        r.wind_dir,
    )


class _StationTracker:
    """Mutable per-station bookkeeping behind the collector's lock."""

    def __init__(self, station_id: int):
        self.state = StationState(station_id=station_id)
        self.aggregates = {name: RunningStats() for name in QUANTITIES}

    def record_success(self, record: LogRecord) -> None:
        totals = self.state.totals
        self.state = replace(
            self.state,
            last_reading=record.reading,
            last_rx_time=record.rx_time,
            consecutive_failures=0,
            totals=replace(totals, polls=totals.polls + 1, ok=totals.ok + 1),
        )
        for name in QUANTITIES:
            self.aggregates[name].add(quantity_value(record.reading, name))

    def record_failure(self, kind: str) -> None:
        totals = self.state.totals
        bumped = {
            TIMEOUT: replace(totals, polls=totals.polls + 1, timeouts=totals.timeouts + 1),
            CHECKSUM_MISMATCH: replace(
                totals, polls=totals.polls + 1, checksum_errors=totals.checksum_errors + 1
            ),
            MALFORMED: replace(totals, polls=totals.polls + 1, other_errors=totals.other_errors + 1),
        }[kind]
        self.state = replace(
            self.state,
            consecutive_failures=self.state.consecutive_failures + 1,
            totals=bumped,
        )


class Collector:
    """Runs the poll schedule over a set of station transports.

    The tick schedule is fixed-rate: tick n fires at ``start + n * interval``.
    Ticks that are already in the past when a slow round of polls finishes are
    skipped, never queued, so a stalled station cannot make the collector
    burst-poll to catch up.
    """

    def __init__(
        self,
        config: CollectorConfig,
        transports: dict[int, Transport],
        clock: Clock,
        store: LogStore,
        console=None,
    ):
        config.validate()
        missing = {s.station_id for s in config.stations} - set(transports)
        if missing:
            raise ValueError(f"no transport for stations {sorted(missing)}")
        self.config = config
        self.clock = clock
        self.store = store
        self.console = console if console is not None else print
        self._transports = transports
        self._order = sorted(s.station_id for s in config.stations)
        self._lock = threading.Lock()
        self._trackers = {sid: _StationTracker(sid) for sid in self._order}
        self.started_at: float | None = None

    def current_state(self) -> dict[int, StationState]:
        """Point-in-time snapshot; safe from any thread."""
        with self._lock:
            return {sid: t.state for sid, t in self._trackers.items()}

    def online_aggregates(self) -> dict[int, dict[str, QuantityStats | None]]:
        """Whole-run aggregates maintained alongside the log."""
        with self._lock:
            return {
                sid: {name: t.aggregates[name].snapshot() for name in QUANTITIES}
                for sid, t in self._trackers.items()
            }

    def run(self, shutdown: threading.Event) -> None:
        start = self.clock.now()
        self.started_at = start
        tick = 0
        while not shutdown.is_set():
            due = start + tick * self.config.poll_interval_s
            if self.clock.wait_until(due, wake=shutdown.is_set):
                break
            for sid in self._order:
                if shutdown.is_set():
                    break
                self._poll_station(sid)
            now = self.clock.now()
            tick += 1
            while start + tick * self.config.poll_interval_s < now:
                tick += 1  # skip ticks that are already in the past
        self.store.close()

    def _poll_station(self, sid: int) -> None:
        outcome = poll_once(
            self._transports[sid], sid, self.config.poll_timeout_s, self.clock
        )
        if isinstance(outcome, Reading):
            record = LogRecord(rx_time=stamp_rx_time(self.clock.now()), reading=outcome)
            self._append_with_retry(record)
            self.console(console_line(record))
            with self._lock:
                self._trackers[sid].record_success(record)
        else:
            log.debug("station %d poll failed: %s (%s)", sid, outcome.kind, outcome.detail)
            with self._lock:
                self._trackers[sid].record_failure(outcome.kind)

    def _append_with_retry(self, record: LogRecord) -> None:
        # losing measurements is not acceptable: one retry, then fatal
        try:
            self.store.append(record)
        except OSError as first:
            log.warning("log append failed (%s); retrying once", first)
            try:
                self.store.append(record)
            except OSError as second:
                raise RuntimeError(f"log append failed twice: {second}") from second
