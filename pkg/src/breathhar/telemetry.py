"""Mask-to-phone link emulation: an NDJSON-over-TCP device emulator with
configurable loss and timestamp jitter, an ingester that logs streams to CSV
with sequence-gap accounting, and the CSV format shared by every stage.

Wire format: one JSON object per line, UTF-8, newline-delimited, fields
exactly device_id, seq, timestamp, temperature, humidity, aqi_raw. Sequence
numbers count every record offered to the link, so dropped records leave
detectable gaps; conservation sent == received + dropped holds per session.

CSV format: columns ``timestamp_s,temperature_c,humidity_pct,aqi_raw`` after
comment lines ``# device_id=...``, ``# activity=...``, ``# sampling_hz=...``
(plus ``# subject_id=...``). Floats are written with repr precision so a
write/read round-trip is lossless; missing readings are empty cells.
"""

from __future__ import annotations

import json
import logging
import math
import socket
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .domain import ActivityLabel, LabeledSeries
from .errors import FormatError, InsufficientDataError, TransportError, ValidationError

log = logging.getLogger(__name__)

CSV_HEADER = "timestamp_s,temperature_c,humidity_pct,aqi_raw"

WIRE_FIELDS = ("device_id", "seq", "timestamp", "temperature", "humidity", "aqi_raw")


@dataclass(frozen=True)
class WireRecord:
    device_id: str
    seq: int
    timestamp: float
    temperature: float
    humidity: float
    aqi_raw: Optional[float] = None

    def to_json_line(self) -> str:
        return json.dumps({
            "device_id": self.device_id,
            "seq": self.seq,
            "timestamp": self.timestamp,
            "temperature": self.temperature,
            "humidity": self.humidity,
            "aqi_raw": self.aqi_raw,
        }) + "\n"

    @classmethod
    def from_json_line(cls, line: str) -> "WireRecord":
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed wire line: {exc}") from exc
        if not isinstance(doc, dict) or not all(key in doc for key in WIRE_FIELDS):
            raise FormatError("wire record missing required fields")
        try:
            return cls(
                device_id=str(doc["device_id"]),
                seq=int(doc["seq"]),
                timestamp=float(doc["timestamp"]),
                temperature=float(doc["temperature"]),
                humidity=float(doc["humidity"]),
                aqi_raw=None if doc["aqi_raw"] is None else float(doc["aqi_raw"]),
            )
        except (TypeError, ValueError) as exc:
            raise FormatError(f"malformed wire record values: {exc}") from exc


@dataclass(frozen=True)
class LinkConfig:
    drop_probability: float = 0.0
    max_jitter_ms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.drop_probability < 1.0):
            raise ValidationError(
                f"drop_probability must be in [0, 1), got {self.drop_probability}"
            )
        if self.max_jitter_ms < 0:
            raise ValidationError(f"max_jitter_ms must be >= 0, got {self.max_jitter_ms}")


@dataclass(frozen=True)
class SessionSummary:
    """sent counts every record offered to the link (including dropped ones)."""

    sent: int
    dropped: int
    delayed: int
    dropped_seqs: tuple

    @property
    def transmitted(self) -> int:
        return self.sent - self.dropped


@dataclass(frozen=True)
class IngestReport:
    device_id: str
    received: int
    parse_errors: int
    max_seq: int  # -1 when nothing was received
    gaps_detected: tuple  # ((first_missing, last_missing), ...)
    out_path: str
    partial: bool = False  # log write aborted (e.g. disk full)

    @property
    def missing_seqs(self) -> tuple:
        out = []
        for lo, hi in self.gaps_detected:
            out.extend(range(lo, hi + 1))
        return tuple(out)


def serve_stream(series: LabeledSeries, link: LinkConfig, endpoint: tuple,
                 time_scale: float = 0.0) -> SessionSummary:
    """Stream a series to the ingester in seq order at the sampling cadence.

    time_scale accelerates pacing (0 disables pacing entirely). Jitter models
    device-side timestamping delay: a delayed record carries its shifted
    timestamp. Dropped records consume a seq and are never retransmitted.
    """
    host, port = endpoint
    rng = np.random.default_rng(link.seed)
    cadence = 1.0 / series.sampling_hz / time_scale if time_scale > 0 else 0.0
    sent = dropped = delayed = 0
    dropped_seqs: list[int] = []
    aqi = series.aqi_raw
    try:
        with socket.create_connection((host, port), timeout=10.0) as conn:
            for i in range(len(series)):
                drop = rng.random() < link.drop_probability
                jitter_s = rng.uniform(0.0, link.max_jitter_ms / 1000.0)
                sent += 1
                if drop:
                    dropped += 1
                    dropped_seqs.append(i)
                    continue
                if jitter_s > 0:
                    delayed += 1
                record = WireRecord(
                    device_id=series.device_id,
                    seq=i,
                    timestamp=float(series.timestamps[i] + jitter_s),
                    temperature=float(series.temperature[i]),
                    humidity=float(series.humidity[i]),
                    aqi_raw=None if aqi is None else float(aqi[i]),
                )
                conn.sendall(record.to_json_line().encode("utf-8"))
                if cadence > 0:
                    time.sleep(cadence + jitter_s / time_scale)
    except OSError as exc:
        partial = SessionSummary(sent, dropped, delayed, tuple(dropped_seqs))
        raise TransportError(f"stream to {host}:{port} failed: {exc}", summary=partial) from exc
    return SessionSummary(sent, dropped, delayed, tuple(dropped_seqs))


def _gap_ranges(received_seqs: set, max_seq: int) -> tuple:
    missing = sorted(set(range(max_seq + 1)) - received_seqs)
    ranges = []
    for seq in missing:
        if ranges and seq == ranges[-1][1] + 1:
            ranges[-1][1] = seq
        else:
            ranges.append([seq, seq])
    return tuple((lo, hi) for lo, hi in ranges)


def _format_value(value) -> str:
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value):
        return ""
    return repr(value)


def csv_row(values) -> str:
    """Comma-joined full-precision floats; None/NaN become empty cells."""
    return ",".join(_format_value(v) for v in values)


class Ingester:
    """Accepts concurrent device connections and logs each to its own CSV.

    Connections are handled independently; the only shared state is the
    report list, appended under a lock when a session closes.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, out_dir=None):
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen()
        self._listener.settimeout(0.1)  # lets the accept loop observe stop()
        self.out_dir = Path(out_dir) if out_dir is not None else Path.cwd()
        self._threads: list[threading.Thread] = []
        self._reports: list[IngestReport] = []
        self._lock = threading.Lock()
        self._accept_thread: Optional[threading.Thread] = None
        self._stopping = threading.Event()

    @property
    def endpoint(self) -> tuple:
        return self._listener.getsockname()[:2]

    def start(self) -> None:
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            worker = threading.Thread(target=self._handle, args=(conn,), daemon=True)
            worker.start()
            self._threads.append(worker)

    def _unique_path(self, device_id: str) -> Path:
        safe = device_id.replace("/", "_") or "device"
        path = self.out_dir / f"{safe}.csv"
        n = 1
        while path.exists():
            path = self.out_dir / f"{safe}_{n}.csv"
            n += 1
        return path

    def _handle(self, conn: socket.socket) -> None:
        rows: list[WireRecord] = []
        parse_errors = 0
        with conn, conn.makefile("r", encoding="utf-8", errors="replace") as stream:
            for line in stream:
                line = line.strip()
                if not line:
                    continue
                try:
                    rows.append(WireRecord.from_json_line(line))
                except FormatError:
                    parse_errors += 1
        device_id = rows[0].device_id if rows else "unknown"
        partial = False
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            path = self._unique_path(device_id)
            sampling_hz = _estimate_rate([r.timestamp for r in rows])
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(f"# device_id={device_id}\n")
                fh.write("# activity=unknown\n")
                fh.write(f"# sampling_hz={sampling_hz!r}\n")
                fh.write(f"{CSV_HEADER}\n")
                for r in rows:  # arrival order
                    fh.write(
                        f"{_format_value(r.timestamp)},{_format_value(r.temperature)},"
                        f"{_format_value(r.humidity)},{_format_value(r.aqi_raw)}\n"
                    )
        except OSError as exc:
            log.error("aborting log for %s: %s", device_id, exc)
            partial = True
            path = self.out_dir / f"{device_id}.csv"
            try:  # best effort: leave a marker next to the broken log
                (self.out_dir / f"{device_id}.csv.PARTIAL").write_text(
                    f"{exc}\n", encoding="utf-8")
            except OSError:
                pass
        seqs = {r.seq for r in rows}
        max_seq = max(seqs) if seqs else -1
        report = IngestReport(
            device_id=device_id,
            received=len(rows),
            parse_errors=parse_errors,
            max_seq=max_seq,
            gaps_detected=_gap_ranges(seqs, max_seq) if seqs else (),
            out_path=str(path),
            partial=partial,
        )
        with self._lock:
            self._reports.append(report)

    def wait_for_sessions(self, n: int, timeout: float = 30.0) -> list:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._lock:
                if len(self._reports) >= n:
                    return list(self._reports)
            time.sleep(0.01)
        raise TransportError(f"timed out waiting for {n} session(s)")

    def stop(self) -> list:
        self._stopping.set()
        self._listener.close()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=5.0)
        for worker in self._threads:
            worker.join(timeout=5.0)
        with self._lock:
            return list(self._reports)


def _estimate_rate(timestamps) -> float:
    if len(timestamps) < 2:
        return 1.0
    diffs = np.diff(np.asarray(timestamps, dtype=float))
    diffs = diffs[diffs > 0]
    if diffs.size == 0:
        return 1.0
    return float(round(1.0 / float(np.median(diffs)), 6))


def ingest(listen_endpoint: tuple, out_dir, n_sessions: int = 1,
           timeout: float = 60.0) -> list:
    """Listen for n sessions, log them to CSV, and return the reports."""
    host, port = listen_endpoint
    server = Ingester(host, port, out_dir)
    server.start()
    try:
        return server.wait_for_sessions(n_sessions, timeout=timeout)
    finally:
        server.stop()


# ---------------------------------------------------------------------------
# CSV read/write
# ---------------------------------------------------------------------------

def write_csv(series: LabeledSeries, path) -> None:
    """Lossless CSV: full repr precision, activity in a header comment."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    activity = series.label.name.lower() if series.label is not None else "unknown"
    aqi = series.aqi_raw
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# device_id={series.device_id}\n")
        fh.write(f"# activity={activity}\n")
        fh.write(f"# sampling_hz={series.sampling_hz!r}\n")
        fh.write(f"# subject_id={series.subject_id}\n")
        fh.write(f"{CSV_HEADER}\n")
        for i in range(len(series)):
            aqi_val = None if aqi is None else aqi[i]
            fh.write(
                f"{_format_value(series.timestamps[i])},"
                f"{_format_value(series.temperature[i])},"
                f"{_format_value(series.humidity[i])},"
                f"{_format_value(aqi_val)}\n"
            )


def _parse_cell(cell: str, row: int, column: str) -> float:
    cell = cell.strip()
    if cell == "":
        return math.nan
    try:
        return float(cell)
    except ValueError as exc:
        raise FormatError(f"bad {column} value {cell!r}", row=row) from exc


def read_csv(path) -> LabeledSeries:
    """Inverse of write_csv. Raises on missing columns, non-monotonic
    timestamps (naming the row), or an empty series."""
    path = Path(path)
    meta: dict[str, str] = {}
    header_seen = False
    timestamps, temperature, humidity, aqi = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for row, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    meta[key.strip()] = value.strip()
                continue
            if not header_seen:
                if line != CSV_HEADER:
                    raise FormatError(
                        f"expected header {CSV_HEADER!r}, got {line!r}", row=row
                    )
                header_seen = True
                continue
            cells = line.split(",")
            if len(cells) != 4:
                raise FormatError(f"expected 4 columns, got {len(cells)}", row=row)
            ts = _parse_cell(cells[0], row, "timestamp_s")
            if math.isnan(ts):
                raise FormatError("missing timestamp", row=row)
            if timestamps and ts <= timestamps[-1]:
                raise FormatError(
                    f"non-monotonic timestamp {ts} after {timestamps[-1]}", row=row
                )
            timestamps.append(ts)
            temperature.append(_parse_cell(cells[1], row, "temperature_c"))
            humidity.append(_parse_cell(cells[2], row, "humidity_pct"))
            aqi.append(_parse_cell(cells[3], row, "aqi_raw"))
    if not header_seen:
        raise FormatError(f"{path} has no column header")
    if not timestamps:
        raise InsufficientDataError(f"{path} holds an empty series")

    activity = meta.get("activity", "unknown")
    label = None if activity in ("", "unknown") else ActivityLabel.from_name(activity)
    try:
        sampling_hz = float(meta.get("sampling_hz", "1.0"))
    except ValueError as exc:
        raise FormatError(f"bad sampling_hz comment: {meta.get('sampling_hz')!r}") from exc
    aqi_arr = np.array(aqi, dtype=float)
    return LabeledSeries(
        timestamps=np.array(timestamps, dtype=float),
        temperature=np.array(temperature, dtype=float),
        humidity=np.array(humidity, dtype=float),
        aqi_raw=None if np.all(np.isnan(aqi_arr)) else aqi_arr,
        label=label,
        sampling_hz=sampling_hz,
        subject_id=meta.get("subject_id", "s00"),
        device_id=meta.get("device_id", "dev-00"),
    )
