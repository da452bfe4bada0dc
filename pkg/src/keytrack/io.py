"""File and stream formats. Byte layouts are documented in docs/FORMATS.md.

Covers:
  - PGM (P5) / PPM (P6) images, the simulator's on-disk frame format
  - raw concatenated frame streams with a text sidecar header
  - the deviation record stream, text (CSV) and binary (fixed 40-byte
    little-endian records) variants
  - ground-truth displacement files and sequence manifests

All float fields in text formats are written with ``repr``, which is the
shortest string that round-trips the exact float64 value, so text output is
as lossless as the binary variant.
"""

from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, TextIO

import numpy as np

from .errors import StreamFormatError
from .layout import MarkerLayout, load_layout
from .pipeline import GrayFrame, to_gray
from .tracker import STATUS_BY_NAME, DeviationRecord, TrackStatus

RAW_HEADER_MAGIC = "keytrack-raw"
BINARY_STREAM_MAGIC = b"KEYTRACKDEV1"
BINARY_RECORD = struct.Struct("<IdHBxddd")  # frame, timestamp, marker, status, dx, dy, cov_trace
TEXT_STREAM_HEADER = "frame_index,timestamp,marker_id,dx,dy,cov_trace,status"

_U8_SCALE = np.float32(255.0)


def gray_from_u8(u8: np.ndarray, timestamp: float = 0.0) -> GrayFrame:
    """Map an 8-bit single-channel image linearly onto [0, 1]."""
    u8 = np.asarray(u8)
    if u8.ndim == 3:
        return to_gray(u8.astype(np.float64) / 255.0, timestamp=timestamp)
    h, w = u8.shape
    return GrayFrame(width=w, height=h, pixels=u8.astype(np.float32) / _U8_SCALE,
                     timestamp=timestamp)


# --------------------------------------------------------------------------
# PGM / PPM


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a uint8 (H, W) array as binary PGM (P5)."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise StreamFormatError(f"PGM wants a 2-D array, got shape {image.shape}")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_image(path: str | Path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file to uint8 (H, W[, 3])."""
    data = Path(path).read_bytes()
    if data[:2] not in (b"P5", b"P6"):
        raise StreamFormatError(f"{path}: not a binary PGM/PPM file")
    channels = 1 if data[:2] == b"P5" else 3

    # Header = magic + three decimal fields (width, height, maxval), with
    # comments allowed; a single whitespace byte separates header and payload.
    pos, fields = 2, []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # the single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise StreamFormatError(f"{path}: only 8-bit images supported, maxval={maxval}")
    expected = w * h * channels
    payload = data[pos : pos + expected]
    if len(payload) != expected:
        raise StreamFormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape((h, w) if channels == 1 else (h, w, 3))


_FRAME_FILE_RE = re.compile(r"(\d+)\.(pgm|ppm)$", re.IGNORECASE)


def list_frame_files(directory: str | Path) -> list[Path]:
    """Numbered frame files in a directory, sorted by their number."""
    directory = Path(directory)
    found = []
    for p in directory.iterdir():
        m = _FRAME_FILE_RE.search(p.name)
        if m:
            found.append((int(m.group(1)), p))
    found.sort(key=lambda item: item[0])
    return [p for _, p in found]


# --------------------------------------------------------------------------
# Raw concatenated frame streams


@dataclass(frozen=True)
class RawHeader:
    """Sidecar description of a raw frame stream."""

    width: int
    height: int
    channels: int = 1
    n_frames: int | None = None  # None: read until EOF
    fps: float = 120.0

    @property
    def frame_bytes(self) -> int:
        return self.width * self.height * self.channels

    def to_text(self) -> str:
        lines = [f"{RAW_HEADER_MAGIC} 1",
                 f"width {self.width}",
                 f"height {self.height}",
                 f"channels {self.channels}"]
        if self.n_frames is not None:
            lines.append(f"frames {self.n_frames}")
        lines.append(f"fps {self.fps!r}")
        return "\n".join(lines) + "\n"


def parse_raw_header(text: str) -> RawHeader:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith(RAW_HEADER_MAGIC):
        raise StreamFormatError(f"raw header must start with '{RAW_HEADER_MAGIC} 1'")
    fields: dict[str, str] = {}
    for ln in lines[1:]:
        key, _, value = ln.partition(" ")
        fields[key] = value.strip()
    try:
        header = RawHeader(
            width=int(fields["width"]),
            height=int(fields["height"]),
            channels=int(fields.get("channels", "1")),
            n_frames=int(fields["frames"]) if "frames" in fields else None,
            fps=float(fields.get("fps", "120.0")),
        )
    except KeyError as exc:
        raise StreamFormatError(f"raw header missing field {exc.args[0]!r}") from None
    if header.channels not in (1, 3):
        raise StreamFormatError(f"raw streams carry 1 or 3 channels, not {header.channels}")
    if header.width < 1 or header.height < 1:
        raise StreamFormatError("raw frame dimensions must be positive")
    return header


def raw_sidecar_path(raw_path: str | Path) -> Path:
    return Path(str(raw_path) + "hdr") if str(raw_path).endswith(".raw") \
        else Path(str(raw_path) + ".rawhdr")


def write_raw_sequence(path: str | Path, header: RawHeader,
                       frames: Iterable[np.ndarray]) -> None:
    """Write frames (uint8 arrays) plus the sidecar header file."""
    path = Path(path)
    count = 0
    with open(path, "wb") as f:
        for frame in frames:
            arr = np.ascontiguousarray(frame, dtype=np.uint8)
            if arr.size != header.frame_bytes:
                raise StreamFormatError(
                    f"frame {count} has {arr.size} bytes, header says {header.frame_bytes}"
                )
            f.write(arr.tobytes())
            count += 1
    if header.n_frames is not None and header.n_frames != count:
        raise StreamFormatError(f"header declares {header.n_frames} frames, wrote {count}")
    raw_sidecar_path(path).write_text(header.to_text(), encoding="utf-8")


def _decode_raw_frame(buf: bytes, header: RawHeader, index: int) -> GrayFrame:
    arr = np.frombuffer(buf, dtype=np.uint8)
    ts = index / header.fps
    if header.channels == 1:
        return gray_from_u8(arr.reshape(header.height, header.width), timestamp=ts)
    return gray_from_u8(arr.reshape(header.height, header.width, 3), timestamp=ts)


def iter_raw_frames(path: str | Path, header: RawHeader | None = None) -> Iterator[GrayFrame]:
    """Iterate frames of an on-disk raw stream (sidecar header by default)."""
    if header is None:
        header = parse_raw_header(raw_sidecar_path(path).read_text(encoding="utf-8"))
    with open(path, "rb") as f:
        yield from iter_raw_stream(f, header)


def iter_raw_stream(stream: BinaryIO, header: RawHeader) -> Iterator[GrayFrame]:
    """Iterate frames from an open binary stream; stops at EOF or declared count."""
    index = 0
    while header.n_frames is None or index < header.n_frames:
        buf = stream.read(header.frame_bytes)
        if not buf:
            break
        if len(buf) != header.frame_bytes:
            raise StreamFormatError(
                f"stream truncated mid-frame at index {index}: got {len(buf)} bytes"
            )
        yield _decode_raw_frame(buf, header, index)
        index += 1
    if header.n_frames is not None and index < header.n_frames:
        raise StreamFormatError(f"stream ended after {index} of {header.n_frames} frames")


def read_stream_preamble(stream: BinaryIO) -> RawHeader:
    """Read the text preamble (header lines, then one blank line) from a pipe."""
    lines = []
    while True:
        line = b""
        while True:
            ch = stream.read(1)
            if not ch:
                raise StreamFormatError("stream ended inside the raw preamble")
            if ch == b"\n":
                break
            line += ch
        if not line.strip():
            break
        lines.append(line.decode("ascii"))
    return parse_raw_header("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Deviation record streams


def format_record_text(rec: DeviationRecord) -> str:
    return (f"{rec.frame_index},{rec.timestamp!r},{rec.marker_id},"
            f"{rec.deviation[0]!r},{rec.deviation[1]!r},{rec.cov_trace!r},"
            f"{rec.status.wire_name}")


def write_records_text(out: TextIO, records: Iterable[DeviationRecord],
                       header: bool = True) -> None:
    if header:
        out.write(TEXT_STREAM_HEADER + "\n")
    for rec in records:
        out.write(format_record_text(rec) + "\n")


def parse_record_text(line: str) -> DeviationRecord:
    parts = line.rstrip("\n").split(",")
    if len(parts) != 7:
        raise StreamFormatError(f"expected 7 fields, got {len(parts)}: {line!r}")
    try:
        status = STATUS_BY_NAME[parts[6]]
    except KeyError:
        raise StreamFormatError(f"unknown status {parts[6]!r}") from None
    dx, dy = float(parts[3]), float(parts[4])
    mean = (float("nan"), float("nan"))  # the stream does not carry the posterior mean
    return DeviationRecord(
        frame_index=int(parts[0]), timestamp=float(parts[1]), marker_id=int(parts[2]),
        deviation=(dx, dy), mean=mean, cov_trace=float(parts[5]), status=status,
    )


def read_records_text(path: str | Path) -> list[DeviationRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        if first.strip() != TEXT_STREAM_HEADER:
            raise StreamFormatError(f"{path}: missing deviation stream header line")
        for line in f:
            if line.strip():
                records.append(parse_record_text(line))
    return records


def write_binary_stream_header(out: BinaryIO) -> None:
    out.write(BINARY_STREAM_MAGIC + struct.pack("<HH", 1, BINARY_RECORD.size))


def pack_record(rec: DeviationRecord) -> bytes:
    return BINARY_RECORD.pack(rec.frame_index, rec.timestamp, rec.marker_id,
                              int(rec.status), rec.deviation[0], rec.deviation[1],
                              rec.cov_trace)


def read_records_binary(path: str | Path) -> list[DeviationRecord]:
    data = Path(path).read_bytes()
    if data[: len(BINARY_STREAM_MAGIC)] != BINARY_STREAM_MAGIC:
        raise StreamFormatError(f"{path}: bad binary stream magic")
    version, rec_size = struct.unpack_from("<HH", data, len(BINARY_STREAM_MAGIC))
    if version != 1 or rec_size != BINARY_RECORD.size:
        raise StreamFormatError(f"{path}: unsupported stream version {version}/{rec_size}")
    offset = len(BINARY_STREAM_MAGIC) + 4
    if (len(data) - offset) % BINARY_RECORD.size:
        raise StreamFormatError(f"{path}: truncated binary record stream")
    records = []
    for fields in BINARY_RECORD.iter_unpack(data[offset:]):
        frame_index, timestamp, marker_id, status, dx, dy, cov_trace = fields
        records.append(DeviationRecord(
            frame_index=frame_index, timestamp=timestamp, marker_id=marker_id,
            deviation=(dx, dy), mean=(float("nan"), float("nan")),
            cov_trace=cov_trace, status=TrackStatus(status),
        ))
    return records


# --------------------------------------------------------------------------
# Ground truth files

TRUTH_HEADER = "frame_index,marker_id,dx_true,dy_true"


def write_truth(out: TextIO, frame_index: int, displacements: np.ndarray) -> None:
    for marker_id, (dx, dy) in enumerate(np.asarray(displacements, dtype=np.float64)):
        out.write(f"{frame_index},{marker_id},{float(dx)!r},{float(dy)!r}\n")


def read_truth(path: str | Path) -> dict[tuple[int, int], tuple[float, float]]:
    """(frame_index, marker_id) -> (dx_true, dy_true)."""
    table = {}
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        if first.strip() != TRUTH_HEADER:
            raise StreamFormatError(f"{path}: missing truth header line")
        for line in f:
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise StreamFormatError(f"{path}: bad truth row {line!r}")
            table[(int(parts[0]), int(parts[1]))] = (float(parts[2]), float(parts[3]))
    return table


# --------------------------------------------------------------------------
# Sequence manifests


@dataclass(frozen=True)
class SequenceManifest:
    """Everything needed to re-ingest a written frame sequence."""

    directory: Path
    layout_file: str
    truth_file: str | None
    frame_pattern: str
    n_frames: int
    fps: float
    name: str = ""

    @property
    def layout_path(self) -> Path:
        return self.directory / self.layout_file

    @property
    def truth_path(self) -> Path | None:
        return None if self.truth_file is None else self.directory / self.truth_file

    def load_layout(self) -> MarkerLayout:
        return load_layout(self.layout_path)

    def frame_path(self, index: int) -> Path:
        return self.directory / self.frame_pattern.format(index=index)


MANIFEST_NAME = "manifest.txt"


def write_manifest(manifest: SequenceManifest, extra_lines: list[str] | None = None) -> Path:
    lines = [
        "format_version 1",
        "kind sequence",
        f"name {manifest.name}" if manifest.name else "name unnamed",
        f"layout_file {manifest.layout_file}",
        f"frame_pattern {manifest.frame_pattern}",
        f"n_frames {manifest.n_frames}",
        f"fps {manifest.fps!r}",
    ]
    if manifest.truth_file:
        lines.append(f"truth_file {manifest.truth_file}")
    if extra_lines:
        lines.extend(f"# {ln}" for ln in extra_lines)
    path = manifest.directory / MANIFEST_NAME
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(directory: str | Path) -> SequenceManifest:
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.is_file():
        raise StreamFormatError(f"{directory}: no {MANIFEST_NAME} found")
    fields: dict[str, str] = {}
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        fields[key] = value.strip()
    try:
        if int(fields["format_version"]) != 1 or fields.get("kind") != "sequence":
            raise StreamFormatError(f"{path}: unsupported manifest")
        return SequenceManifest(
            directory=directory,
            layout_file=fields["layout_file"],
            truth_file=fields.get("truth_file"),
            frame_pattern=fields["frame_pattern"],
            n_frames=int(fields["n_frames"]),
            fps=float(fields["fps"]),
            name=fields.get("name", ""),
        )
    except KeyError as exc:
        raise StreamFormatError(f"{path}: missing manifest field {exc.args[0]!r}") from None


def worker_count(task_count: int | None = None) -> int:
    """Parallelism cap honoring the KEYTRACK_THREADS environment variable."""
    env = os.environ.get("KEYTRACK_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    cap = max(1, cap)
    if task_count is not None:
        cap = min(cap, max(1, task_count))
    return cap


def prefetch(frames: Iterable[GrayFrame], depth: int = 4) -> Iterator[GrayFrame]:
    """Decode ahead on a background thread, preserving order.

    Lets file decoding overlap with tracking without changing any result;
    disabled (plain iteration) when KEYTRACK_THREADS caps workers to 1.
    """
    if worker_count() <= 1:
        yield from frames
        return

    import queue
    import threading

    q: queue.Queue = queue.Queue(maxsize=max(1, depth))
    done = object()

    def fill() -> None:
        try:
            for frame in frames:
                q.put(frame)
            q.put(done)
        except BaseException as exc:  # surfaced on the consuming side
            q.put(exc)

    worker = threading.Thread(target=fill, daemon=True)
    worker.start()
    while True:
        item = q.get()
        if item is done:
            break
        if isinstance(item, BaseException):
            raise item
        yield item
    worker.join()
