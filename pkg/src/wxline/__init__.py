"""wxline: a simulated serial weather-station network.

A poll-driven sensor node emulator and a collecting service that logs
readings to CSV day files and serves a periodically regenerated station
page plus a JSON API.
"""

__version__ = "0.1.0"

from .protocol import Poll, ProtocolError, Reading

__all__ = ["Poll", "ProtocolError", "Reading", "__version__"]
