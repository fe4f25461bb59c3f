"""INI configuration loading with command-line override precedence.

Precedence for every key: command-line flag beats file value beats built-in
default.  Sections: ``[node]``, ``[climate]``, ``[corruption]``,
``[collector]``, ``[http]``.  The environment variable ``WXLINE_CONFIG``
names the default config file.

Example file::

    [collector]
    stations = 1@tcp:127.0.0.1:9100, 2@local
    poll_interval_s = 10
    poll_timeout_s = 8
    log_dir = ./wx-logs
    page_interval_s = 300

    [http]
    bind = 127.0.0.1:8080

    [node]
    station_id = 1
    baud = 9600
    seed = 42
"""

from __future__ import annotations

import configparser
import os
from pathlib import Path

from .collector import CollectorConfig, StationLink
from .nodesim import ClimateModel, CorruptionModel, NodeConfig

ENV_CONFIG = "WXLINE_CONFIG"


class UsageError(Exception):
    """Bad flags or config file contents; exit code 2."""


def config_path(explicit: str | None) -> str | None:
    if explicit is not None:
        return explicit
    return os.environ.get(ENV_CONFIG) or None


def load_ini(path: str | None) -> dict[str, dict[str, str]]:
    """Parse an INI file into plain nested dicts; None path means no file."""
    if path is None:
        return {}
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as err:
        raise UsageError(f"cannot parse {path}: {err}")
    return {section: dict(parser.items(section)) for section in parser.sections()}


def pick(cfg, section: str, key: str, default, parse, overrides=None):
    """One configuration value under CLI > file > default precedence."""
    if overrides and overrides.get(key) is not None:
        return overrides[key]
    raw = cfg.get(section, {}).get(key)
    if raw is None:
        return default
    try:
        return parse(raw)
    except ValueError as err:
        raise UsageError(f"[{section}] {key} = {raw!r}: {err}")


def parse_bind(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def parse_stations(text: str) -> tuple[StationLink, ...]:
    """``1@tcp:127.0.0.1:9100, 2@local`` -> StationLinks."""
    links = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        sid_text, sep, address = chunk.partition("@")
        if not sep:
            raise ValueError(f"station entry {chunk!r} is not ID@ADDRESS")
        sid = int(sid_text)
        if address != "local":
            scheme, _, rest = address.partition(":")
            if scheme != "tcp" or not rest:
                raise ValueError(f"station address {address!r} is neither 'local' nor 'tcp:HOST:PORT'")
            parse_bind(rest)
        links.append(StationLink(station_id=sid, address=address))
    return tuple(links)


def build_climate(cfg, seed: int) -> ClimateModel:
    c = lambda key, default: pick(cfg, "climate", key, default, float)
    return ClimateModel(
        t_mean=c("t_mean", 26.0),
        t_amplitude=c("t_amplitude", 6.0),
        t_peak_hour=c("t_peak_hour", 15.0),
        s_max=c("s_max", 1000.0),
        sunrise_hour=c("sunrise_hour", 6.0),
        sunset_hour=c("sunset_hour", 18.0),
        rh_base=c("rh_base", 75.0),
        rh_temp_slope=c("rh_temp_slope", -1.5),
        wind_mean=c("wind_mean", 4.0),
        wind_reversion=c("wind_reversion", 0.01),
        wind_noise=c("wind_noise", 0.3),
        seed=seed,
    )


def build_corruption(cfg) -> CorruptionModel:
    return CorruptionModel(
        safe_baud=pick(cfg, "corruption", "safe_baud", 115200, int),
        max_baud=pick(cfg, "corruption", "max_baud", 1_000_000, int),
        p_max=pick(cfg, "corruption", "p_max", 0.02, float),
    )


def build_node_config(cfg, overrides=None) -> NodeConfig:
    o = overrides or {}
    seed = pick(cfg, "node", "seed", 0, int, o)
    node = NodeConfig(
        station_id=pick(cfg, "node", "station_id", 1, int, o),
        baud=pick(cfg, "node", "baud", 9600, int, o),
        latency_min_s=pick(cfg, "node", "latency_min_s", 4.0, float, o),
        latency_max_s=pick(cfg, "node", "latency_max_s", 5.0, float, o),
        error_model=build_corruption(cfg),
        climate=build_climate(cfg, seed),
        time_scale=pick(cfg, "node", "time_scale", 1.0, float, o),
    )
    try:
        node.validate()
    except ValueError as err:
        raise UsageError(str(err))
    return node


def node_listen(cfg, overrides=None) -> tuple[str, int]:
    text = pick(cfg, "node", "listen", "127.0.0.1:9100", str, overrides or {})
    try:
        return parse_bind(text)
    except ValueError as err:
        raise UsageError(str(err))


def build_collector_config(cfg, overrides=None) -> CollectorConfig:
    o = overrides or {}
    stations_value = o.get("stations")
    try:
        if stations_value is None:
            stations = pick(cfg, "collector", "stations", (StationLink(1, "local"),), parse_stations)
        else:
            stations = parse_stations(stations_value)
    except ValueError as err:
        raise UsageError(f"bad stations value: {err}")
    config = CollectorConfig(
        stations=stations,
        poll_interval_s=pick(cfg, "collector", "poll_interval_s", 10.0, float, o),
        poll_timeout_s=pick(cfg, "collector", "poll_timeout_s", 8.0, float, o),
        log_dir=pick(cfg, "collector", "log_dir", "./wx-logs", str, o),
        page_interval_s=pick(cfg, "collector", "page_interval_s", 300.0, float, o),
        http_bind=pick(cfg, "http", "bind", "127.0.0.1:8080", str, {"bind": o.get("http_bind")}),
    )
    try:
        config.validate()
        parse_bind(config.http_bind)
    except ValueError as err:
        raise UsageError(str(err))
    return config
