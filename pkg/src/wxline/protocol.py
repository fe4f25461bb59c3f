"""Line protocol spoken between sensor nodes and the collector.

Frames are ASCII, NMEA-flavoured, and newline-terminated:

    '$' <payload> '*' <HH> CR LF

where ``HH`` is the XOR fold of the payload bytes rendered as two uppercase
hex digits.  The payload never contains ``$``, ``*``, CR, or LF.  Two payload
kinds exist:

    RQ,<station_id>                                       poll request
    WX,<sid>,<seq>,<temp>,<rh>,<irr>,<wspd>,<wdir>        measurement

``seq`` is four zero-padded digits (wraps at 10000); temperature, humidity,
and wind speed carry exactly one decimal; irradiance and wind direction are
plain integers.  The full grammar is documented in docs/wire-format.md and is
the bit-exact wire contract.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

FRAME_START = b"$"
FRAME_END = b"\r\n"
CHECKSUM_DELIM = b"*"

SEQ_MODULUS = 10000

TEMP_RANGE = (-40.0, 60.0)
HUMIDITY_RANGE = (0.0, 100.0)
IRRADIANCE_RANGE = (0, 1500)
WIND_SPEED_RANGE = (0.0, 75.0)
WIND_DIR_RANGE = (0, 359)
STATION_ID_RANGE = (1, 255)

# Error variants, one per failure class.
INCOMPLETE = "incomplete"
CHECKSUM_MISMATCH = "checksum_mismatch"
BAD_FIELD_COUNT = "bad_field_count"
RANGE_ERROR = "range_error"
UNKNOWN_KIND = "unknown_kind"

# A '$'-started span longer than this can never be a valid frame; the scanner
# discards it.  Chunking invariance is exact for spans below this limit.
MAX_SPAN = 1024

_HEX_RE = re.compile(rb"[0-9A-F]{2}\Z")
_INT_RE = re.compile(rb"[0-9]+\Z")
_SEQ_RE = re.compile(rb"[0-9]{4}\Z")
_DECIMAL_RE = re.compile(rb"-?[0-9]+\.[0-9]\Z")


class ProtocolError(ValueError):
    """A frame that failed to decode; ``variant`` names the failure class."""

    def __init__(self, variant: str, detail: str):
        super().__init__(f"{variant}: {detail}")
        self.variant = variant
        self.detail = detail


def _check_range(name: str, value, lo, hi) -> None:
    if not (lo <= value <= hi):
        raise ProtocolError(RANGE_ERROR, f"{name}={value!r} outside [{lo}, {hi}]")


def _check_decimal(name: str, value: float) -> None:
    # wire precision is one decimal; value*10 must be (within fp noise) integral
    if abs(value * 10 - round(value * 10)) > 1e-6:
        raise ProtocolError(RANGE_ERROR, f"{name}={value!r} not representable at 0.1 resolution")


@dataclass(frozen=True)
class Reading:
    """One sensor sample, at wire precision.

    Construction validates every field, so a ``Reading`` instance always
    satisfies the protocol ranges.
    """

    station_id: int
    seq: int
    temperature: float
    humidity: float
    irradiance: int
    wind_speed: float
    wind_dir: int

    def __post_init__(self):
        _check_range("station_id", self.station_id, *STATION_ID_RANGE)
        _check_range("seq", self.seq, 0, SEQ_MODULUS - 1)
        _check_range("temperature", self.temperature, *TEMP_RANGE)
        _check_range("humidity", self.humidity, *HUMIDITY_RANGE)
        _check_range("irradiance", self.irradiance, *IRRADIANCE_RANGE)
        _check_range("wind_speed", self.wind_speed, *WIND_SPEED_RANGE)
        _check_range("wind_dir", self.wind_dir, *WIND_DIR_RANGE)
        _check_decimal("temperature", self.temperature)
        _check_decimal("humidity", self.humidity)
        _check_decimal("wind_speed", self.wind_speed)


@dataclass(frozen=True)
class Poll:
    """A decoded poll request addressed to one station."""

    station_id: int


def checksum(payload: bytes) -> int:
    """XOR fold of all payload bytes; 0 for an empty payload."""
    acc = 0
    for b in payload:
        acc ^= b
    return acc


def _frame(payload: bytes) -> bytes:
    for forbidden in (b"$", b"*", b"\r", b"\n"):
        if forbidden in payload:
            raise ValueError(f"payload may not contain {forbidden!r}")
    return b"$" + payload + b"*%02X\r\n" % checksum(payload)


def encode_poll(station_id: int) -> bytes:
    """Encode a poll request: ``$RQ,<id>*HH\\r\\n``."""
    _check_range("station_id", station_id, *STATION_ID_RANGE)
    return _frame(b"RQ,%d" % station_id)


def encode_measurement(reading: Reading) -> bytes:
    """Encode a measurement response.  Pure: equal readings, identical bytes."""
    temp = reading.temperature + 0.0  # normalise -0.0
    payload = "WX,%d,%04d,%.1f,%.1f,%d,%.1f,%d" % (
        reading.station_id,
        reading.seq,
        temp if temp != 0 else 0.0,
        reading.humidity,
        reading.irradiance,
        reading.wind_speed,
        reading.wind_dir,
    )
    return _frame(payload.encode("ascii"))


def _parse_int(name: str, raw: bytes) -> int:
    if not _INT_RE.match(raw):
        raise ProtocolError(RANGE_ERROR, f"{name}={raw!r} is not a plain integer")
    return int(raw)


def _parse_decimal(name: str, raw: bytes) -> float:
    if not _DECIMAL_RE.match(raw):
        raise ProtocolError(RANGE_ERROR, f"{name}={raw!r} is not a one-decimal number")
    value = float(raw)
    return value if value != 0 else 0.0


def decode_frame(line: bytes) -> Poll | Reading:
    """Decode one complete frame.

    Inverse of the encoders on their output; checksum is verified before any
    field parsing, field ranges after.  Raises :class:`ProtocolError` with the
    variant naming the failure class.
    """
    line = bytes(line)
    if not line.endswith(FRAME_END):
        raise ProtocolError(INCOMPLETE, "missing CRLF terminator")
    body = line[:-2]
    if not body.startswith(FRAME_START):
        raise ProtocolError(INCOMPLETE, "missing '$' start delimiter")
    star = body.rfind(CHECKSUM_DELIM)
    if star < 0:
        raise ProtocolError(INCOMPLETE, "missing '*' checksum delimiter")
    hex_part = body[star + 1:]
    if not _HEX_RE.match(hex_part):
        raise ProtocolError(CHECKSUM_MISMATCH, f"checksum field {hex_part!r} is not two uppercase hex digits")
    payload = body[1:star]
    computed = checksum(payload)
    received = int(hex_part, 16)
    if computed != received:
        raise ProtocolError(
            CHECKSUM_MISMATCH,
            f"computed 0x{computed:02X}, frame carries 0x{received:02X}",
        )

    fields = payload.split(b",")
    kind = fields[0]
    if kind == b"RQ":
        if len(fields) != 2:
            raise ProtocolError(BAD_FIELD_COUNT, f"RQ expects 2 fields, got {len(fields)}")
        station_id = _parse_int("station_id", fields[1])
        _check_range("station_id", station_id, *STATION_ID_RANGE)
        return Poll(station_id)
    if kind == b"WX":
        if len(fields) != 8:
            raise ProtocolError(BAD_FIELD_COUNT, f"WX expects 8 fields, got {len(fields)}")
        if not _SEQ_RE.match(fields[2]):
            raise ProtocolError(RANGE_ERROR, f"seq={fields[2]!r} is not four digits")
        return Reading(
            station_id=_parse_int("station_id", fields[1]),
            seq=int(fields[2]),
            temperature=_parse_decimal("temperature", fields[3]),
            humidity=_parse_decimal("humidity", fields[4]),
            irradiance=_parse_int("irradiance", fields[5]),
            wind_speed=_parse_decimal("wind_speed", fields[6]),
            wind_dir=_parse_int("wind_dir", fields[7]),
        )
    raise ProtocolError(UNKNOWN_KIND, f"payload kind {kind!r} is neither WX nor RQ")


class FrameScanner:
    """Incremental frame scanner with resynchronisation.

    Feed arbitrary chunks; get back decoded frames and inline
    :class:`ProtocolError` values, in stream order.  Garbage between frames is
    discarded up to the next ``$`` and reported as a single error per
    discarded run.  The emitted sequence does not depend on how the byte
    stream was chunked (exact for spans up to ``MAX_SPAN``).

    Not thread-safe: one scanner per stream, one feeding thread.
    """

    def __init__(self):
        self._buf = bytearray()
        self._dropped = 0

    @property
    def pending(self) -> bytes:
        """Retained partial tail, waiting for more bytes."""
        return bytes(self._buf)

    def feed(self, data: bytes) -> list[Poll | Reading | ProtocolError]:
        self._buf += data
        out: list[Poll | Reading | ProtocolError] = []
        while True:
            if not self._buf:
                break
            if self._buf[0] != FRAME_START[0]:
                cut = self._buf.find(FRAME_START)
                if cut < 0:
                    self._dropped += len(self._buf)
                    self._buf.clear()
                    break
                self._dropped += cut
                del self._buf[:cut]
                continue
            if self._dropped:
                out.append(ProtocolError(INCOMPLETE, f"discarded {self._dropped} bytes before frame start"))
                self._dropped = 0
            nl = self._buf.find(b"\n")
            restart = self._buf.find(FRAME_START, 1)
            if 0 <= restart and (nl < 0 or restart < nl):
                # a new '$' before any terminator: the current span is garbage
                self._dropped += restart
                del self._buf[:restart]
                continue
            if nl < 0:
                if len(self._buf) > MAX_SPAN:
                    self._dropped += len(self._buf)
                    self._buf.clear()
                break
            span = bytes(self._buf[: nl + 1])
            del self._buf[: nl + 1]
            try:
                out.append(decode_frame(span))
            except ProtocolError as err:
                out.append(err)
        return out
