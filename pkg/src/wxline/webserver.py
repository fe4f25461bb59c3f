"""Station page and JSON API.

The HTML page is regenerated on a fixed cadence (every ``page_interval_s``,
default five minutes) and served as a static snapshot in between; clients see
updates through the page's own ``<meta http-equiv="refresh">``.  Regeneration
boundaries are aligned to epoch multiples of the interval, which lets an
offline replay of the log reproduce the exact page sequence of a live run.

Endpoints:

    GET /                 current HTML page
    GET /api/current      latest reading per station, with staleness
    GET /api/history      logged records, ?station=&from=&to= (ISO-8601,
                          inclusive from, exclusive to)
    GET /healthz          uptime and per-station poll counters

JSON field names are fixed: station_id, seq, rx_time, temp_c, rh_pct,
irr_wm2, wind_ms, wind_deg, stale.
"""

from __future__ import annotations

import html
import logging
import math
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

from fastapi import FastAPI, HTTPException, Query
from fastapi.exceptions import RequestValidationError
from fastapi.responses import HTMLResponse, JSONResponse
from pydantic import BaseModel

from .clock import Clock
from .collector import Collector
from .logstore import AggregateStats, LogRecord, LogStore, aggregate, format_rx_time
from .protocol import Reading

log = logging.getLogger(__name__)

PAGE_WINDOW_S = 24 * 3600.0
STALE_AFTER_INTERVALS = 3

_QUANTITY_ROWS = (
    ("Temperature", "temp_c", "&#176;C", "%.1f"),
    ("Humidity", "rh_pct", "%RH", "%.1f"),
    ("Irradiance", "irr_wm2", "W/m&#178;", "%d"),
    ("Wind speed", "wind_ms", "m/s", "%.1f"),
    ("Wind direction", "wind_deg", "&#176;", "%d"),
)


def _utc(epoch: float) -> datetime:
    return datetime.fromtimestamp(epoch, tz=timezone.utc)


def next_boundary(now: float, interval_s: float) -> float:
    """Smallest epoch-aligned multiple of ``interval_s`` strictly after now."""
    return (math.floor(now / interval_s) + 1) * interval_s


def page_boundaries(after: float, until: float, interval_s: float) -> list[float]:
    """All epoch-aligned boundaries b with ``after < b <= until``."""
    out = []
    b = next_boundary(after, interval_s)
    while b <= until:
        out.append(b)
        b += interval_s
    return out


@dataclass(frozen=True)
class StationPageEntry:
    station_id: int
    reading: Reading | None
    rx_time: datetime | None
    stale: bool
    day_stats: AggregateStats


@dataclass(frozen=True)
class PageModel:
    generated_at: datetime
    refresh_s: int
    stations: tuple[StationPageEntry, ...]


def build_page_model(
    generated_at_epoch: float,
    station_ids,
    latest: dict[int, tuple[Reading, datetime]],
    window_records: list[LogRecord],
    poll_interval_s: float,
    refresh_s: int,
) -> PageModel:
    """Assemble the page from the latest readings and a 24 h record window.

    Both the live regenerator and the offline replay build their pages
    through this function, from value-identical inputs, so equal runs render
    byte-identical pages.
    """
    generated_at = _utc(generated_at_epoch)
    window = (_utc(generated_at_epoch - PAGE_WINDOW_S), generated_at)
    entries = []
    for sid in sorted(station_ids):
        reading, rx_time = latest.get(sid, (None, None))
        stale = False
        if rx_time is not None:
            age = generated_at_epoch - rx_time.timestamp()
            stale = age > STALE_AFTER_INTERVALS * poll_interval_s
        day_stats = aggregate(
            [r for r in window_records if r.reading.station_id == sid], window
        )
        entries.append(StationPageEntry(sid, reading, rx_time, stale, day_stats))
    return PageModel(generated_at=generated_at, refresh_s=refresh_s, stations=tuple(entries))


def render_page(model: PageModel) -> str:
    """Deterministic HTML5 (XML-well-formed) for one page model."""
    out = [
        "<!DOCTYPE html>",
        '<html lang="en">',
        "<head>",
        '<meta charset="utf-8"/>',
        f'<meta http-equiv="refresh" content="{model.refresh_s}"/>',
        "<title>Weather Station</title>",
        "<style>",
        "body{font-family:sans-serif;margin:2em;}",
        "table{border-collapse:collapse;margin:0.5em 0 1.5em;}",
        "td,th{border:1px solid #999;padding:0.25em 0.75em;text-align:right;}",
        "th{background:#eee;}",
        ".stale{color:#b00;font-weight:bold;}",
        "</style>",
        "</head>",
        "<body>",
        "<h1>Weather Station</h1>",
        f'<p id="generated">Generated {html.escape(format_rx_time(model.generated_at))}</p>',
    ]
    for entry in model.stations:
        out.append(f"<h2>Station {entry.station_id}</h2>")
        if entry.reading is None:
            out.append('<p class="nodata">no data</p>')
        else:
            r = entry.reading
            values = {
                "temp_c": "%.1f" % r.temperature,
                "rh_pct": "%.1f" % r.humidity,
                "irr_wm2": "%d" % r.irradiance,
                "wind_ms": "%.1f" % r.wind_speed,
                "wind_deg": "%d" % r.wind_dir,
            }
            out.append('<table class="current">')
            out.append("<tr><th>Quantity</th><th>Value</th></tr>")
            for label, key, unit, _fmt in _QUANTITY_ROWS:
                out.append(f"<tr><td>{label}</td><td>{values[key]} {unit}</td></tr>")
            out.append(f"<tr><td>Sequence</td><td>{r.seq}</td></tr>")
            out.append(
                f"<tr><td>Received</td><td>{html.escape(format_rx_time(entry.rx_time))}</td></tr>"
            )
            status = '<span class="stale">STALE</span>' if entry.stale else "ok"
            out.append(f"<tr><td>Status</td><td>{status}</td></tr>")
            out.append("</table>")
        out.append("<h3>Last 24 hours</h3>")
        if entry.day_stats.count == 0:
            out.append('<p class="nodata">no data</p>')
        else:
            out.append('<table class="daily">')
            out.append("<tr><th>Quantity</th><th>Min</th><th>Max</th><th>Mean</th></tr>")
            for label, key, unit, fmt in _QUANTITY_ROWS:
                stats = entry.day_stats.quantity(key)
                # mean is exact internally; round to wire precision for display
                mean = round(stats.mean, 1) if fmt == "%.1f" else round(stats.mean)
                out.append(
                    f"<tr><td>{label} ({unit})</td>"
                    f"<td>{fmt % stats.minimum}</td><td>{fmt % stats.maximum}</td><td>{fmt % mean}</td></tr>"
                )
            out.append("</table>")
    out.append("</body>")
    out.append("</html>")
    return "\n".join(out) + "\n"


def bootstrap_page(station_ids, started_at_epoch: float, poll_interval_s: float, refresh_s: int) -> tuple[str, PageModel]:
    """The page served before the first regeneration: all stations, no data."""
    model = build_page_model(started_at_epoch, station_ids, {}, [], poll_interval_s, refresh_s)
    return render_page(model), model


class PageSlot:
    """Atomically swapped page snapshot; readers always see a whole page."""

    def __init__(self, html_text: str, model: PageModel):
        self._lock = threading.Lock()
        self._html = html_text
        self._model = model
        self.swaps = 0

    def get(self) -> str:
        with self._lock:
            return self._html

    def model(self) -> PageModel:
        with self._lock:
            return self._model

    def swap(self, html_text: str, model: PageModel) -> None:
        with self._lock:
            self._html = html_text
            self._model = model
            self.swaps += 1


class Regenerator:
    """Rebuilds the page at every epoch-aligned interval boundary."""

    def __init__(
        self,
        collector: Collector,
        store: LogStore,
        slot: PageSlot,
        clock: Clock,
        page_interval_s: float,
        poll_interval_s: float,
        refresh_s: int | None = None,
    ):
        self.collector = collector
        self.store = store
        self.slot = slot
        self.clock = clock
        self.page_interval_s = page_interval_s
        self.poll_interval_s = poll_interval_s
        self.refresh_s = int(page_interval_s) if refresh_s is None else refresh_s
        self.regenerations = 0
        self.errors = 0

    def run(self, shutdown: threading.Event) -> None:
        while not shutdown.is_set():
            boundary = next_boundary(self.clock.now(), self.page_interval_s)
            if self.clock.wait_until(boundary, wake=shutdown.is_set):
                break
            self.regenerate_at(boundary)

    def regenerate_at(self, boundary: float) -> None:
        try:
            window_records, _ = self.store.read_range(
                _utc(boundary - PAGE_WINDOW_S), _utc(boundary)
            )
        except OSError as err:
            # keep serving the previous page
            self.errors += 1
            log.warning("page regeneration failed, serving stale page: %s", err)
            return
        state = self.collector.current_state()
        latest = {
            sid: (st.last_reading, st.last_rx_time)
            for sid, st in state.items()
            if st.last_reading is not None
        }
        model = build_page_model(
            boundary,
            sorted(state),
            latest,
            window_records,
            self.poll_interval_s,
            self.refresh_s,
        )
        self.slot.swap(render_page(model), model)
        self.regenerations += 1


class CurrentReading(BaseModel):
    station_id: int
    seq: int
    rx_time: str
    temp_c: float
    rh_pct: float
    irr_wm2: int
    wind_ms: float
    wind_deg: int
    stale: bool


class HistoryRecord(BaseModel):
    station_id: int
    seq: int
    rx_time: str
    temp_c: float
    rh_pct: float
    irr_wm2: int
    wind_ms: float
    wind_deg: int


class StationHealth(BaseModel):
    station_id: int
    polls: int
    ok: int
    checksum_errors: int
    timeouts: int
    other_errors: int
    consecutive_failures: int
    last_rx_time: str | None


class PageHealth(BaseModel):
    regenerations: int
    errors: int
    generated_at: str


class HealthReport(BaseModel):
    status: str
    uptime_s: float
    stations: list[StationHealth]
    page: PageHealth


def record_fields(record: LogRecord) -> dict:
    r = record.reading
    return {
        "station_id": r.station_id,
        "seq": r.seq,
        "rx_time": format_rx_time(record.rx_time),
        "temp_c": r.temperature,
        "rh_pct": r.humidity,
        "irr_wm2": r.irradiance,
        "wind_ms": r.wind_speed,
        "wind_deg": r.wind_dir,
    }


def history_record(record: LogRecord) -> HistoryRecord:
    return HistoryRecord(**record_fields(record))


def parse_iso8601(text: str) -> datetime:
    """Accept Z-suffixed or offset ISO-8601; naive times are taken as UTC."""
    cleaned = text.strip()
    if cleaned.endswith("Z"):
        cleaned = cleaned[:-1] + "+00:00"
    dt = datetime.fromisoformat(cleaned)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def create_app(
    slot: PageSlot,
    collector: Collector,
    store: LogStore,
    clock: Clock,
    started_at: float,
    regenerator: Regenerator | None = None,
    poll_interval_s: float = 10.0,
) -> FastAPI:
    app = FastAPI(title="wxline station", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def validation_as_400(_request, exc):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/", response_class=HTMLResponse)
    def index() -> str:
        return slot.get()

    @app.get("/api/current", response_model=list[CurrentReading])
    def api_current() -> list[CurrentReading]:
        now = clock.now()
        out = []
        for sid, st in sorted(collector.current_state().items()):
            if st.last_reading is None:
                continue
            age = now - st.last_rx_time.timestamp()
            fields = record_fields(LogRecord(st.last_rx_time, st.last_reading))
            out.append(CurrentReading(stale=age > STALE_AFTER_INTERVALS * poll_interval_s, **fields))
        return out

    @app.get("/api/history", response_model=list[HistoryRecord])
    def api_history(
        station: str | None = None,
        from_: str | None = Query(default=None, alias="from"),
        to: str | None = None,
    ) -> list[HistoryRecord]:
        try:
            end = parse_iso8601(to) if to is not None else _utc(clock.now())
            start = parse_iso8601(from_) if from_ is not None else end - timedelta(seconds=PAGE_WINDOW_S)
        except ValueError as err:
            raise HTTPException(status_code=400, detail=f"bad time parameter: {err}")
        if start > end:
            raise HTTPException(status_code=400, detail="'from' is after 'to'")
        station_id = None
        if station is not None:
            try:
                station_id = int(station)
            except ValueError:
                raise HTTPException(status_code=400, detail=f"bad station id: {station!r}")
        records, _skipped = store.read_range(start, end, station_id=station_id)
        return [history_record(r) for r in records]

    @app.get("/healthz", response_model=HealthReport)
    def healthz() -> HealthReport:
        stations = []
        for sid, st in sorted(collector.current_state().items()):
            t = st.totals
            stations.append(
                StationHealth(
                    station_id=sid,
                    polls=t.polls,
                    ok=t.ok,
                    checksum_errors=t.checksum_errors,
                    timeouts=t.timeouts,
                    other_errors=t.other_errors,
                    consecutive_failures=st.consecutive_failures,
                    last_rx_time=format_rx_time(st.last_rx_time) if st.last_rx_time else None,
                )
            )
        regenerations = regenerator.regenerations if regenerator else 0
        errors = regenerator.errors if regenerator else 0
        page = PageHealth(
            regenerations=regenerations,
            errors=errors,
            generated_at=format_rx_time(slot.model().generated_at),
        )
        return HealthReport(
            status="ok",
            uptime_s=clock.now() - started_at,
            stations=stations,
            page=page,
        )

    return app
