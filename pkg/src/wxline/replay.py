"""Offline reconstruction of the page sequence from a log.

Because live regeneration happens at epoch-aligned interval boundaries and
pages are built purely from (boundary time, latest readings, 24 h window),
feeding the same log through the same page builder reproduces the live pages
byte for byte.  Records with ``rx_time`` exactly on a boundary belong to the
following page, matching the live loop's strict read window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .logstore import LogRecord
from .webserver import PAGE_WINDOW_S, PageModel, build_page_model, page_boundaries

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReplayPage:
    boundary: float  # epoch seconds of the regeneration this reproduces
    model: PageModel
    html: str


def replay_pages(
    records: list[LogRecord],
    station_ids,
    poll_interval_s: float,
    page_interval_s: float,
    until: float,
    start: float | None = None,
    refresh_s: int | None = None,
) -> list[ReplayPage]:
    """Page per regeneration boundary, oldest first.

    ``records`` must be in log (chronological) order.  Boundaries run over
    ``(start, until]``; pass the live run's start time to reproduce its page
    sequence exactly.  Without ``start`` the replay begins one interval ahead
    of the first record, which reproduces at least every boundary from the
    first record onward (the final page is identical either way).  An empty
    log yields no pages.
    """
    from .webserver import render_page

    if refresh_s is None:
        refresh_s = int(page_interval_s)
    if not records:
        return []
    if start is None:
        start = records[0].rx_time.timestamp() - page_interval_s
    boundaries = page_boundaries(start, until, page_interval_s)
    latest: dict[int, tuple] = {}
    pages: list[ReplayPage] = []
    consumed = 0
    for boundary in boundaries:
        while consumed < len(records) and records[consumed].rx_time.timestamp() < boundary:
            record = records[consumed]
            latest[record.reading.station_id] = (record.reading, record.rx_time)
            consumed += 1
        window = [
            r
            for r in records[:consumed]
            if boundary - PAGE_WINDOW_S <= r.rx_time.timestamp() < boundary
        ]
        model = build_page_model(
            boundary, station_ids, dict(latest), window, poll_interval_s, refresh_s
        )
        pages.append(ReplayPage(boundary=boundary, model=model, html=render_page(model)))
    return pages
