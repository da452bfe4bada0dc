/**
 * Deviation record stream decoding, matching docs/FORMATS.md in the core
 * repository byte for byte. Both the text (CSV) and binary (fixed 40-byte
 * little-endian records) variants decode to the same numbers: text floats
 * are shortest round-trip representations, so parsing them recovers the
 * exact IEEE-754 double the producer held.
 */

export enum TrackStatus {
  Associated = 0,
  Gated = 1,
  NoCandidates = 2,
}

const STATUS_WIRE_NAMES: Record<string, TrackStatus> = {
  associated: TrackStatus.Associated,
  gated: TrackStatus.Gated,
  no_candidates: TrackStatus.NoCandidates,
};

export function statusName(status: TrackStatus): string {
  switch (status) {
    case TrackStatus.Associated: return "associated";
    case TrackStatus.Gated: return "gated";
    case TrackStatus.NoCandidates: return "no_candidates";
  }
}

/** One marker in one frame: deviation from its fabrication position. */
export interface DeviationRecord {
  frameIndex: number;
  /** Seconds. */
  timestamp: number;
  markerId: number;
  /** Deviation of the tracked position from the initial position, px. */
  dx: number;
  dy: number;
  /** Trace of the posterior covariance, px^2 (0 for stateless variants). */
  covTrace: number;
  status: TrackStatus;
}

export const TEXT_STREAM_HEADER =
  "frame_index,timestamp,marker_id,dx,dy,cov_trace,status";

export const BINARY_STREAM_MAGIC = "KEYTRACKDEV1";
export const BINARY_HEADER_SIZE = 16;
export const BINARY_RECORD_SIZE = 40;

export function parseTextRecord(line: string): DeviationRecord {
  const parts = line.split(",");
  if (parts.length !== 7) {
    throw new Error(`expected 7 fields, got ${parts.length}: ${JSON.stringify(line)}`);
  }
  const status = STATUS_WIRE_NAMES[parts[6]!];
  if (status === undefined) {
    throw new Error(`unknown status ${JSON.stringify(parts[6])}`);
  }
  return {
    frameIndex: parseInt(parts[0]!, 10),
    timestamp: Number(parts[1]!),
    markerId: parseInt(parts[2]!, 10),
    dx: Number(parts[3]!),
    dy: Number(parts[4]!),
    covTrace: Number(parts[5]!),
    status,
  };
}

export function parseTextStream(text: string): DeviationRecord[] {
  const lines = text.split("\n").filter((ln) => ln.trim().length > 0);
  if (lines[0] !== TEXT_STREAM_HEADER) {
    throw new Error("missing deviation stream header line");
  }
  return lines.slice(1).map(parseTextRecord);
}

/** Validate and strip the 16-byte binary stream header. */
export function checkBinaryHeader(buf: Buffer): void {
  if (buf.length < BINARY_HEADER_SIZE) {
    throw new Error("binary stream shorter than its header");
  }
  if (buf.toString("ascii", 0, 12) !== BINARY_STREAM_MAGIC) {
    throw new Error("bad binary stream magic");
  }
  const version = buf.readUInt16LE(12);
  const recordSize = buf.readUInt16LE(14);
  if (version !== 1 || recordSize !== BINARY_RECORD_SIZE) {
    throw new Error(`unsupported binary stream version ${version}/${recordSize}`);
  }
}

/** Decode one 40-byte record at `offset`. */
export function parseBinaryRecord(buf: Buffer, offset: number): DeviationRecord {
  const statusByte = buf.readUInt8(offset + 14);
  if (!(statusByte in TrackStatus)) {
    throw new Error(`unknown status code ${statusByte}`);
  }
  return {
    frameIndex: buf.readUInt32LE(offset),
    timestamp: buf.readDoubleLE(offset + 4),
    markerId: buf.readUInt16LE(offset + 12),
    status: statusByte as TrackStatus,
    dx: buf.readDoubleLE(offset + 16),
    dy: buf.readDoubleLE(offset + 24),
    covTrace: buf.readDoubleLE(offset + 32),
  };
}

/** Decode a whole binary stream file (header + records). */
export function parseBinaryStream(buf: Buffer): DeviationRecord[] {
  checkBinaryHeader(buf);
  const body = buf.length - BINARY_HEADER_SIZE;
  if (body % BINARY_RECORD_SIZE !== 0) {
    throw new Error("truncated binary record stream");
  }
  const records: DeviationRecord[] = [];
  for (let off = BINARY_HEADER_SIZE; off < buf.length; off += BINARY_RECORD_SIZE) {
    records.push(parseBinaryRecord(buf, off));
  }
  return records;
}
