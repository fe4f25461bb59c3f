"""Command-line entry point.

One binary, four subcommands:

    wxline node      run a simulated sensor station (TCP server)
    wxline collect   run the collector, page regenerator, and HTTP service
    wxline stats     print min/max/mean over a log window
    wxline replay    rebuild the page sequence from a log

Configuration comes from an INI file (``--config`` or ``$WXLINE_CONFIG``)
with command-line overrides; see config.py for the file format.  Exit codes:
0 ok, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import signal
import sys
import threading
import time
from datetime import datetime, timezone

import uvicorn

from .clock import ScaledClock, SystemClock, spawn_actor
from .collector import Collector
from .config import (
    UsageError,
    build_collector_config,
    build_node_config,
    config_path,
    load_ini,
    node_listen,
    parse_bind,
)
from .logstore import QUANTITIES, LogStore, aggregate
from .nodesim import NodeSim
from .replay import replay_pages
from .transport import TcpDialer, TcpListener, in_process_pair
from .webserver import PageSlot, Regenerator, bootstrap_page, create_app, parse_iso8601

log = logging.getLogger(__name__)

UTC = timezone.utc
FAR_PAST = datetime(1970, 1, 1, tzinfo=UTC)
FAR_FUTURE = datetime(2100, 1, 1, tzinfo=UTC)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wxline", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (default: $WXLINE_CONFIG)")

    node = sub.add_parser("node", help="run a simulated sensor station", parents=[common])
    node.add_argument("--station-id", type=int)
    node.add_argument("--baud", type=int)
    node.add_argument("--latency-min", type=float, help="sensor response time lower bound, seconds")
    node.add_argument("--latency-max", type=float, help="sensor response time upper bound, seconds")
    node.add_argument("--time-scale", type=float, help="sim seconds per wall second (>= 1)")
    node.add_argument("--seed", type=int)
    node.add_argument("--listen", help="HOST:PORT to serve on (default 127.0.0.1:9100)")
    node.set_defaults(func=cmd_node)

    collect = sub.add_parser("collect", help="run collector + web service", parents=[common])
    collect.add_argument("--stations", help="comma list of ID@tcp:HOST:PORT or ID@local")
    collect.add_argument("--poll-interval", type=float)
    collect.add_argument("--poll-timeout", type=float)
    collect.add_argument("--log-dir")
    collect.add_argument("--page-interval", type=float)
    collect.add_argument("--http-bind", help="HOST:PORT for the web service")
    collect.set_defaults(func=cmd_collect)

    stats = sub.add_parser("stats", help="aggregate a log window", parents=[common])
    stats.add_argument("--log-dir", required=True)
    stats.add_argument("--from", dest="from_", help="window start, ISO-8601 (inclusive)")
    stats.add_argument("--to", help="window end, ISO-8601 (exclusive)")
    stats.add_argument("--station", type=int)
    stats.add_argument("--csv", action="store_true", help="machine-readable output")
    stats.set_defaults(func=cmd_stats)

    replay = sub.add_parser("replay", help="rebuild pages from a log", parents=[common])
    replay.add_argument("--log-dir", help="log directory (default: from config)")
    replay.add_argument("--speed", type=float, help="sim seconds per wall second; omit for no pacing")
    replay.add_argument("--start", help="run start, ISO-8601 (reproduces the live schedule)")
    replay.add_argument("--until", help="run end, ISO-8601 (default: last record)")
    replay.add_argument("--out", help="directory to dump every page into")
    replay.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 0


def cmd_node(args) -> int:
    cfg = load_ini(config_path(args.config))
    overrides = {
        "station_id": args.station_id,
        "baud": args.baud,
        "latency_min_s": args.latency_min,
        "latency_max_s": args.latency_max,
        "time_scale": args.time_scale,
        "seed": args.seed,
    }
    node_config = build_node_config(cfg, overrides)
    host, port = node_listen(cfg, {"listen": args.listen})

    if node_config.time_scale > 1:
        clock = ScaledClock(scale=node_config.time_scale)
    else:
        clock = SystemClock()
    try:
        listener = TcpListener(host, port, clock)
    except OSError as err:
        print(f"error: cannot listen on {host}:{port}: {err}", file=sys.stderr)
        return 1
    node = NodeSim(node_config, clock)

    def on_signal(_signum, _frame):
        node.stop()
        listener.close()

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)

    bound = listener.address
    log.info("station %d listening on %s:%d (baud %d)", node_config.station_id, bound[0], bound[1], node_config.baud)
    while True:
        conn = listener.accept()
        if conn is None:
            break
        try:
            node.serve(conn)
        finally:
            conn.close()
    return 0


def _local_node_config(cfg, station_id: int):
    base = build_node_config(cfg)
    # distinct seed per local station, so co-hosted stations differ
    climate = dataclasses.replace(base.climate, seed=base.climate.seed + station_id)
    return dataclasses.replace(base, station_id=station_id, climate=climate, time_scale=1.0)


def cmd_collect(args) -> int:
    cfg = load_ini(config_path(args.config))
    overrides = {
        "stations": args.stations,
        "poll_interval_s": args.poll_interval,
        "poll_timeout_s": args.poll_timeout,
        "log_dir": args.log_dir,
        "page_interval_s": args.page_interval,
        "http_bind": args.http_bind,
    }
    config = build_collector_config(cfg, overrides)
    http_host, http_port = parse_bind(config.http_bind)
    # validate every local node config before creating any file or socket
    local_configs = {
        link.station_id: _local_node_config(cfg, link.station_id)
        for link in config.stations
        if link.address == "local"
    }

    clock = SystemClock()
    store = LogStore(config.log_dir)
    try:
        store.ensure_writable()
    except OSError as err:
        print(f"error: log directory not writable: {err}", file=sys.stderr)
        return 1

    transports = {}
    nodes = []
    node_threads = []
    for link in config.stations:
        if link.address == "local":
            node = NodeSim(local_configs[link.station_id], clock)
            here, there = in_process_pair(clock)
            nodes.append(node)
            node_threads.append(spawn_actor(clock, lambda n=node, t=there: n.serve(t), name=f"node-{link.station_id}"))
            transports[link.station_id] = here
        else:
            host, port = parse_bind(link.address.partition(":")[2])
            transports[link.station_id] = TcpDialer(host, port, clock)

    station_ids = [link.station_id for link in config.stations]
    started_at = clock.now()
    html, model = bootstrap_page(station_ids, started_at, config.poll_interval_s, int(config.page_interval_s))
    slot = PageSlot(html, model)
    collector = Collector(config, transports, clock, store)
    regenerator = Regenerator(
        collector, LogStore(config.log_dir), slot, clock,
        config.page_interval_s, config.poll_interval_s,
    )
    shutdown = threading.Event()
    threads = [
        spawn_actor(clock, lambda: collector.run(shutdown), name="collector"),
        spawn_actor(clock, lambda: regenerator.run(shutdown), name="regenerator"),
    ]

    app = create_app(slot, collector, LogStore(config.log_dir), clock, started_at, regenerator, config.poll_interval_s)
    server = uvicorn.Server(uvicorn.Config(app, host=http_host, port=http_port, log_level="warning", access_log=False))
    log.info("collector polling %s every %.0fs; web service on %s", station_ids, config.poll_interval_s, config.http_bind)
    try:
        server.run()  # returns after SIGINT/SIGTERM
    finally:
        shutdown.set()
        clock.kick()
        for node in nodes:
            node.stop()
        for transport in transports.values():
            transport.close()
        for thread in threads + node_threads:
            thread.join(timeout=5)
    return 0


def _parse_window(from_text, to_text):
    try:
        start = parse_iso8601(from_text) if from_text else FAR_PAST
        end = parse_iso8601(to_text) if to_text else FAR_FUTURE
    except ValueError as err:
        raise UsageError(f"bad window: {err}")
    if start > end:
        raise UsageError("window start is after its end")
    return start, end


def cmd_stats(args) -> int:
    start, end = _parse_window(args.from_, args.to)
    store = LogStore(args.log_dir)
    records, skipped = store.read_range(start, end, station_id=args.station)
    if not records:
        print("no records")
        return 0
    stats = aggregate(records, (start, end))
    rows = []
    for name in QUANTITIES:
        q = stats.quantity(name)
        decimals = 0 if name in ("irr_wm2", "wind_deg") else 1
        rows.append((
            name,
            f"{q.minimum:.{decimals}f}",
            f"{q.maximum:.{decimals}f}",
            f"{round(q.mean, decimals or None):.{decimals}f}",
        ))
    if args.csv:
        print("quantity,min,max,mean")
        for row in rows:
            print(",".join(row))
    else:
        widths = [max(len(r[i]) for r in rows + [("quantity", "min", "max", "mean")]) for i in range(4)]
        header = ("quantity", "min", "max", "mean")
        print("  ".join(h.ljust(widths[i]) if i == 0 else h.rjust(widths[i]) for i, h in enumerate(header)))
        for row in rows:
            print("  ".join(v.ljust(widths[i]) if i == 0 else v.rjust(widths[i]) for i, v in enumerate(row)))
        suffix = f" ({skipped} malformed line{'s' if skipped != 1 else ''} skipped)" if skipped else ""
        print(f"records: {stats.count}{suffix}")
    return 0


def cmd_replay(args) -> int:
    if args.speed is not None and args.speed <= 0:
        raise UsageError("--speed must be positive")
    cfg = load_ini(config_path(args.config))
    config = build_collector_config(cfg, {"log_dir": args.log_dir})
    store = LogStore(config.log_dir)
    records, skipped = store.read_range(FAR_PAST, FAR_FUTURE)
    station_ids = [link.station_id for link in config.stations]

    try:
        until = parse_iso8601(args.until).timestamp() if args.until else None
        start = parse_iso8601(args.start).timestamp() if args.start else None
    except ValueError as err:
        raise UsageError(f"bad timestamp: {err}")
    if until is None:
        until = records[-1].rx_time.timestamp() if records else 0.0

    pages = replay_pages(
        records,
        station_ids,
        config.poll_interval_s,
        config.page_interval_s,
        until=until,
        start=start,
    )
    if args.out:
        from pathlib import Path

        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for i, page in enumerate(pages):
            stamp = datetime.fromtimestamp(page.boundary, tz=UTC).strftime("%Y%m%dT%H%M%SZ")
            (out_dir / f"page-{i:04d}-{stamp}.html").write_text(page.html, encoding="ascii")
    if args.speed is not None:
        previous = start if start is not None else (records[0].rx_time.timestamp() if records else until)
        for page in pages:
            time.sleep(max(0.0, (page.boundary - previous) / args.speed))
            previous = page.boundary
    if pages:
        final = pages[-1].html
    else:
        final, _ = bootstrap_page(station_ids, start if start is not None else until, config.poll_interval_s, int(config.page_interval_s))
    sys.stdout.write(final)
    print(
        f"replayed {len(pages)} page(s) from {len(records)} record(s)"
        + (f", {skipped} malformed line(s) skipped" if skipped else ""),
        file=sys.stderr,
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
