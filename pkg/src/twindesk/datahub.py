"""Time-series, event and command hub shared by physical and digital twins.

The hub outlives any twin's lifecycle: connectors keep appending while the
corresponding twin is terminated, and a restarted hub replays its logs to
reproduce exactly the pre-restart query results.

Storage formats (little-endian, versioned by a magic header):

* one append-only binary log per series at ``data/<series_key>.log``:
  an 8-byte magic ``TSLOG\\x00\\x00\\x01`` followed by fixed-width records of
  8-byte signed timestamp (ms) + 8-byte float64 value;
* a single line-delimited JSON event log at ``data/events.log`` whose first
  line is a format header.

Commands are held in memory with at-most-once delivery; they are not part of
the durability contract.
"""

from __future__ import annotations

import json
import math
import re
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import BadRequestError, UnknownTargetError
from .util import fresh_id, now_ms

SERIES_MAGIC = b"TSLOG\x00\x00\x01"
RECORD = struct.Struct("<qd")
EVENT_LOG = "events.log"
EVENT_HEADER = '{"format": "event-log", "version": 1}'

_KEY_RE = re.compile(r"^[A-Za-z0-9._-]+$")


@dataclass(frozen=True)
class SeriesPoint:
    series_key: str
    timestamp: int
    value: float

    def as_pair(self) -> list:
        return [self.timestamp, self.value]


@dataclass
class Event:
    id: int
    source: str  # "PT" | "DT" | "User"
    type: str
    payload: dict
    timestamp: int

    def to_dict(self) -> dict:
        return {"id": self.id, "source": self.source, "type": self.type,
                "payload": self.payload, "timestamp": self.timestamp}


@dataclass
class Command:
    id: str
    target: str
    name: str
    args: dict
    timestamp: int
    status: str = "Pending"  # "Pending" | "Delivered"

    def to_dict(self) -> dict:
        return {"id": self.id, "target": self.target, "name": self.name,
                "args": self.args, "timestamp": self.timestamp, "status": self.status}


class _Series:
    """One series: in-memory points in insertion order plus the on-disk log."""

    def __init__(self, path: Path):
        self.path = path
        self.lock = threading.Lock()
        self.points: list[tuple[int, float]] = []
        self._fh = None
        if path.exists():
            self._load()
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(SERIES_MAGIC)

    def _load(self) -> None:
        raw = self.path.read_bytes()
        if raw[: len(SERIES_MAGIC)] != SERIES_MAGIC:
            raise BadRequestError(f"{self.path} is not a series log")
        body = raw[len(SERIES_MAGIC):]
        usable = len(body) - len(body) % RECORD.size  # drop a torn tail record
        for off in range(0, usable, RECORD.size):
            t, v = RECORD.unpack_from(body, off)
            self.points.append((t, v))

    def append(self, timestamp: int, value: float) -> None:
        with self.lock:
            if self._fh is None:
                self._fh = self.path.open("ab")
            self._fh.write(RECORD.pack(timestamp, value))
            self._fh.flush()
            self.points.append((timestamp, value))

    def append_many(self, pairs: list[tuple[int, float]]) -> None:
        with self.lock:
            if self._fh is None:
                self._fh = self.path.open("ab")
            self._fh.write(b"".join(RECORD.pack(t, v) for t, v in pairs))
            self._fh.flush()
            self.points.extend(pairs)

    def close(self) -> None:
        with self.lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


class DataHub:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._series: dict[str, _Series] = {}
        self._series_lock = threading.Lock()
        self._events: list[Event] = []
        self._event_lock = threading.Lock()
        self._commands: list[Command] = []
        self._command_lock = threading.Lock()
        self._targets: set[str] = set()
        self._event_log = self.root / EVENT_LOG
        self._replay_events()
        # recover series lazily but discover existing keys up front
        for p in sorted(self.root.glob("*.log")):
            if p.name != EVENT_LOG:
                self._get_series(p.stem)

    # -- series --------------------------------------------------------------

    @staticmethod
    def _check_key(series_key: str) -> None:
        if not _KEY_RE.match(series_key):
            raise BadRequestError(
                f"series key {series_key!r} must match [A-Za-z0-9._-]+")

    def _get_series(self, series_key: str) -> _Series:
        with self._series_lock:
            s = self._series.get(series_key)
            if s is None:
                self._check_key(series_key)
                s = _Series(self.root / f"{series_key}.log")
                self._series[series_key] = s
            return s

    def append_point(self, point: SeriesPoint) -> None:
        if not math.isfinite(point.value):
            raise BadRequestError(f"non-finite value for {point.series_key!r}")
        self._get_series(point.series_key).append(point.timestamp, float(point.value))

    def append_batch(self, points: list[SeriesPoint]) -> None:
        for p in points:
            if not math.isfinite(p.value):
                raise BadRequestError(f"non-finite value for {p.series_key!r}")
        grouped: dict[str, list[tuple[int, float]]] = {}
        for p in points:
            grouped.setdefault(p.series_key, []).append((p.timestamp, float(p.value)))
        for key, pairs in grouped.items():
            self._get_series(key).append_many(pairs)

    def series_keys(self) -> list[str]:
        with self._series_lock:
            return sorted(self._series)

    def count(self, series_key: str) -> int:
        if series_key not in self._series:
            return 0
        return len(self._series[series_key].points)

    def query_range(self, series_key: str, t0: int, t1: int) -> list[SeriesPoint]:
        """All points with t0 <= t <= t1 sorted by timestamp, stable on
        insertion order."""
        if t0 > t1:
            raise BadRequestError(f"inverted range: {t0} > {t1}")
        if series_key not in self._series:
            return []
        s = self._series[series_key]
        with s.lock:
            hits = [(t, v) for t, v in s.points if t0 <= t <= t1]
        hits.sort(key=lambda p: p[0])
        return [SeriesPoint(series_key, t, v) for t, v in hits]

    def latest(self, series_key: str) -> Optional[SeriesPoint]:
        if series_key not in self._series:
            return None
        s = self._series[series_key]
        with s.lock:
            if not s.points:
                return None
            t, v = max(reversed(s.points), key=lambda p: p[0])
        return SeriesPoint(series_key, t, v)

    # -- events ---------------------------------------------------------------

    def _replay_events(self) -> None:
        if not self._event_log.exists():
            self._event_log.write_text(EVENT_HEADER + "\n", encoding="utf-8")
            return
        with self._event_log.open(encoding="utf-8") as fh:
            fh.readline()  # header
            for line in fh:
                line = line.strip()
                if line:
                    d = json.loads(line)
                    self._events.append(Event(id=d["id"], source=d["source"],
                                              type=d["type"], payload=d["payload"],
                                              timestamp=d["timestamp"]))

    def publish_event(self, source: str, type: str, payload: Optional[dict] = None,
                      timestamp: Optional[int] = None) -> Event:
        with self._event_lock:
            ev = Event(id=len(self._events) + 1, source=source, type=type,
                       payload=payload or {},
                       timestamp=timestamp if timestamp is not None else now_ms())
            with self._event_log.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(ev.to_dict(), sort_keys=True) + "\n")
            self._events.append(ev)
            return ev

    def poll_events(self, after: int = 0, type: Optional[str] = None) -> list[Event]:
        """Events with id strictly greater than ``after``, oldest first."""
        with self._event_lock:
            out = [e for e in self._events if e.id > after]
        if type is not None:
            out = [e for e in out if e.type == type]
        return out

    # -- commands ---------------------------------------------------------------

    def register_target(self, target: str) -> None:
        with self._command_lock:
            self._targets.add(target)

    def unregister_target(self, target: str) -> None:
        with self._command_lock:
            self._targets.discard(target)

    def targets(self) -> list[str]:
        with self._command_lock:
            return sorted(self._targets)

    def send_command(self, target: str, name: str, args: Optional[dict] = None,
                     timestamp: Optional[int] = None) -> Command:
        with self._command_lock:
            if target not in self._targets:
                raise UnknownTargetError(f"no connector listens on {target!r}")
            cmd = Command(id=fresh_id("cmd"), target=target, name=name,
                          args=args or {},
                          timestamp=timestamp if timestamp is not None else now_ms())
            self._commands.append(cmd)
            return cmd

    def fetch_commands(self, target: str) -> list[Command]:
        """Pending commands for the target, marked Delivered exactly once."""
        with self._command_lock:
            out = [c for c in self._commands if c.target == target and c.status == "Pending"]
            for c in out:
                c.status = "Delivered"
            return out

    # -- lifecycle ----------------------------------------------------------------

    def close(self) -> None:
        with self._series_lock:
            for s in self._series.values():
                s.close()
