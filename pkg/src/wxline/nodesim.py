"""Simulated sensor node.

Replaces the microcontroller + sensor stack with a deterministic weather
model, a noisy sampling step, a 4-5 s sensor response latency, and a
baud-rate-dependent byte corruption model on the outbound link.  The node is
poll-driven: it answers requests addressed to its station id and stays silent
otherwise.

Everything is seeded.  Given the same configuration and the same poll arrival
times, a node produces byte-identical response payloads (before corruption).
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import threading
from dataclasses import dataclass, field

from . import protocol
from .clock import Clock
from .protocol import FrameScanner, Poll, Reading
from .transport import Transport, TransportClosed

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0
SECONDS_PER_HOUR = 3600.0

# wind direction drifts as a circular random walk; deg per sqrt(second)
WIND_DIR_DRIFT = 4.0
# mean-reverting wind steps are integrated at most this far at a time
WIND_MAX_STEP_S = 60.0


def _derive_rng(seed: int, stream: str) -> random.Random:
    """Independent, hash-randomization-free child RNG for one noise stream."""
    digest = hashlib.blake2b(f"{seed}/{stream}".encode(), digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "big"))


def _clamp(value: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, value))


@dataclass(frozen=True)
class ClimateModel:
    """Deterministic ground-truth weather parameters.

    Defaults describe a hot, humid coastal wet season: daily mean above
    25 degC, ~1 kW/m2 clear-sky solar peak, moderate trade winds.
    """

    t_mean: float = 26.0
    t_amplitude: float = 6.0
    t_peak_hour: float = 15.0
    s_max: float = 1000.0
    sunrise_hour: float = 6.0
    sunset_hour: float = 18.0
    rh_base: float = 75.0
    rh_temp_slope: float = -1.5
    wind_mean: float = 4.0
    wind_reversion: float = 0.01
    wind_noise: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if not self.sunrise_hour < self.sunset_hour:
            raise ValueError("sunrise_hour must be before sunset_hour")
        if self.t_amplitude < 0 or self.s_max < 0 or self.wind_noise < 0:
            raise ValueError("amplitudes must be non-negative")


@dataclass(frozen=True)
class CorruptionModel:
    """Per-byte corruption probability as a function of baud rate.

    Zero up to ``safe_baud``, then linear up to ``p_max`` at ``max_baud``
    (clamped above).  The shape is a stand-in: the hardware this mimics was
    only reported error-free at 9600 and flaky near 1 Mbaud, nothing finer.
    """

    safe_baud: int = 115200
    max_baud: int = 1_000_000
    p_max: float = 0.02

    def validate(self) -> None:
        if not 0.0 <= self.p_max <= 1.0:
            raise ValueError("p_max must be within [0, 1]")
        if not self.safe_baud < self.max_baud:
            raise ValueError("safe_baud must be below max_baud")

    def probability(self, baud: int) -> float:
        if baud <= self.safe_baud:
            return 0.0
        if baud >= self.max_baud:
            return self.p_max
        span = self.max_baud - self.safe_baud
        return self.p_max * (baud - self.safe_baud) / span


@dataclass(frozen=True)
class SensorNoise:
    """Zero-mean gaussian sensor noise, one sigma per quantity."""

    temperature: float = 0.1
    humidity: float = 0.5
    irradiance: float = 5.0
    wind_speed: float = 0.1
    wind_dir: float = 2.0


@dataclass(frozen=True)
class NodeConfig:
    station_id: int
    baud: int = 9600
    latency_min_s: float = 4.0
    latency_max_s: float = 5.0
    error_model: CorruptionModel = field(default_factory=CorruptionModel)
    climate: ClimateModel = field(default_factory=ClimateModel)
    time_scale: float = 1.0

    def validate(self) -> None:
        if not (protocol.STATION_ID_RANGE[0] <= self.station_id <= protocol.STATION_ID_RANGE[1]):
            raise ValueError(f"station_id {self.station_id} outside 1..255")
        if self.baud <= 0:
            raise ValueError("baud must be positive")
        if self.latency_min_s > self.latency_max_s:
            raise ValueError("latency_min_s must not exceed latency_max_s")
        if self.latency_min_s < 0:
            raise ValueError("latencies must be non-negative")
        if self.time_scale < 1:
            raise ValueError("time_scale must be >= 1")
        self.error_model.validate()
        self.climate.validate()


def hour_of_day(sim_time: float) -> float:
    return (sim_time % SECONDS_PER_DAY) / SECONDS_PER_HOUR


def temperature_at(model: ClimateModel, sim_time: float) -> float:
    """Daily sinusoid peaking at ``t_peak_hour``."""
    h = hour_of_day(sim_time)
    phase = 2.0 * math.pi * (h - model.t_peak_hour) / 24.0
    return model.t_mean + model.t_amplitude * math.cos(phase)


def irradiance_at(model: ClimateModel, sim_time: float) -> float:
    """Half-sine daylight arch between sunrise and sunset, zero at night."""
    h = hour_of_day(sim_time)
    if h < model.sunrise_hour or h > model.sunset_hour:
        return 0.0
    daylight = model.sunset_hour - model.sunrise_hour
    return max(0.0, model.s_max * math.sin(math.pi * (h - model.sunrise_hour) / daylight))


def humidity_at(model: ClimateModel, sim_time: float) -> float:
    """Relative humidity moves against temperature, clamped to 0..100."""
    departure = temperature_at(model, sim_time) - model.t_mean
    return _clamp(model.rh_base + model.rh_temp_slope * departure, 0.0, 100.0)


@dataclass(frozen=True)
class WeatherSample:
    temperature: float
    humidity: float
    irradiance: float
    wind_speed: float
    wind_dir: float


class WeatherEngine:
    """Ground truth for one node's stream.

    Temperature, humidity, and irradiance are pure functions of time.  Wind
    is a seeded mean-reverting random walk stepped at each evaluation, so it
    is deterministic given the model and the sequence of sample times.
    """

    def __init__(self, model: ClimateModel):
        model.validate()
        self.model = model
        self._rng = _derive_rng(model.seed, "wind")
        self._wind = model.wind_mean
        self._dir = self._rng.uniform(0.0, 360.0)
        self._last_time: float | None = None

    def sample(self, sim_time: float) -> WeatherSample:
        self._step_wind(sim_time)
        return WeatherSample(
            temperature=temperature_at(self.model, sim_time),
            humidity=humidity_at(self.model, sim_time),
            irradiance=irradiance_at(self.model, sim_time),
            wind_speed=_clamp(self._wind, *protocol.WIND_SPEED_RANGE),
            wind_dir=self._dir % 360.0,
        )

    def _step_wind(self, sim_time: float) -> None:
        if self._last_time is None:
            self._last_time = sim_time
            return
        remaining = max(0.0, sim_time - self._last_time)
        self._last_time = max(self._last_time, sim_time)
        m = self.model
        while remaining > 0.0:
            dt = min(remaining, WIND_MAX_STEP_S)
            remaining -= dt
            pull = m.wind_reversion * (m.wind_mean - self._wind) * dt
            gust = m.wind_noise * math.sqrt(dt) * self._rng.gauss(0.0, 1.0)
            self._wind = _clamp(self._wind + pull + gust, *protocol.WIND_SPEED_RANGE)
            self._dir = (self._dir + WIND_DIR_DRIFT * math.sqrt(dt) * self._rng.gauss(0.0, 1.0)) % 360.0


def sample_sensors(
    truth: WeatherSample,
    rng: random.Random,
    seq: int,
    station_id: int,
    noise: SensorNoise = SensorNoise(),
) -> Reading:
    """One noisy sensor read of ``truth``, clamped and quantised to the wire.

    Wind direction wraps instead of clamping: 359 deg plus noise is 0 deg,
    not a pegged needle.
    """
    temp = round(_clamp(truth.temperature + rng.gauss(0.0, noise.temperature), *protocol.TEMP_RANGE), 1)
    rh = round(_clamp(truth.humidity + rng.gauss(0.0, noise.humidity), *protocol.HUMIDITY_RANGE), 1)
    irr = int(round(_clamp(truth.irradiance + rng.gauss(0.0, noise.irradiance), *protocol.IRRADIANCE_RANGE)))
    wspd = round(_clamp(truth.wind_speed + rng.gauss(0.0, noise.wind_speed), *protocol.WIND_SPEED_RANGE), 1)
    wdir = int(round(truth.wind_dir + rng.gauss(0.0, noise.wind_dir))) % 360
    return Reading(
        station_id=station_id,
        seq=seq,
        temperature=temp,
        humidity=rh,
        irradiance=irr,
        wind_speed=wspd,
        wind_dir=wdir,
    )


def corrupt(data: bytes, baud: int, rng: random.Random, model: CorruptionModel) -> bytes:
    """Independently replace each byte with probability ``model.probability(baud)``."""
    p = model.probability(baud)
    if p <= 0.0:
        return data
    out = bytearray(data)
    for i in range(len(out)):
        if rng.random() < p:
            out[i] = rng.randrange(256)
    return bytes(out)


class NodeSim:
    """One simulated station bound to one transport at a time.

    ``serve`` blocks until the transport closes or :meth:`stop` is called.
    The sequence counter persists across transport sessions, like a device
    that stays powered between reconnects.

    With ``record_trace=True`` every emitted reading (pre-corruption) is kept
    in :attr:`emitted`; tests use it as the ground-truth trace.
    """

    def __init__(self, config: NodeConfig, clock: Clock, record_trace: bool = False):
        config.validate()
        self.config = config
        self.clock = clock
        self.emitted: list[Reading] = []
        self._record_trace = record_trace
        self._seq = 0
        self._engine = WeatherEngine(config.climate)
        self._noise_rng = _derive_rng(config.climate.seed, "sensor-noise")
        self._latency_rng = _derive_rng(config.climate.seed, "latency")
        self._corrupt_rng = _derive_rng(config.climate.seed, "corruption")
        self._stop = threading.Event()

    def stop(self) -> None:
        self._stop.set()
        self.clock.kick()

    def serve(self, transport: Transport) -> None:
        scanner = FrameScanner()
        cfg = self.config
        while not self._stop.is_set():
            try:
                data = transport.recv(deadline=None)
            except TransportClosed:
                log.debug("station %d: transport closed, stopping", cfg.station_id)
                return
            if self._stop.is_set():
                return
            if not data:
                continue
            for item in scanner.feed(data):
                if not isinstance(item, Poll):
                    continue  # a real sensor board would not crash on junk
                if item.station_id != cfg.station_id:
                    continue
                try:
                    self._respond(transport)
                except TransportClosed:
                    return

    def _respond(self, transport: Transport) -> None:
        cfg = self.config
        latency = self._latency_rng.uniform(cfg.latency_min_s, cfg.latency_max_s)
        self.clock.wait_until(self.clock.now() + latency, wake=self._stop.is_set)
        if self._stop.is_set():
            return
        truth = self._engine.sample(self.clock.now())
        reading = sample_sensors(truth, self._noise_rng, self._seq, cfg.station_id)
        self._seq = (self._seq + 1) % protocol.SEQ_MODULUS
        if self._record_trace:
            self.emitted.append(reading)
        wire = corrupt(protocol.encode_measurement(reading), cfg.baud, self._corrupt_rng, cfg.error_model)
        transport.send(wire)
