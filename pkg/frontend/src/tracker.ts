/**
 * Streaming tracker handle.
 *
 * Spawns one `keytrack run --input - --output - --format binary` process
 * and speaks its documented stdin/stdout protocol: a raw-stream header
 * preamble, then one frame of bytes per request, with the full record
 * block for that frame flushed back before the next frame is read. The
 * numbers returned are exactly what the native tracker computed; this
 * class only moves bytes and decodes the lossless record format.
 *
 * A handle is single-owner: one frame may be in flight at a time, and a
 * concurrent trackFrame call is rejected rather than queued. Handles are
 * cheap, so use one per stream.
 */

import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import { readFileSync } from "node:fs";

import { parseLayout, rawStreamHeader, type Layout } from "./formats.js";
import {
  BINARY_HEADER_SIZE,
  BINARY_RECORD_SIZE,
  checkBinaryHeader,
  parseBinaryRecord,
  type DeviationRecord,
} from "./records.js";

export type TrackingMode = "solid" | "keyline-unfiltered" | "keyline-filtered";

export interface TrackerOptions {
  /** Path to a keytrack layout file; defines marker count and frame size. */
  layoutPath: string;
  mode?: TrackingMode;
  /** Timestamp rate for the stream; timestamps are frameIndex / fps. */
  fps?: number;
  tau?: number;
  areaMin?: number;
  areaMax?: number;
  sigmaW?: number;
  sigmaV?: number;
  gatePx?: number;
  p0?: number;
  /** Executable to spawn, default "keytrack" from PATH. */
  binary?: string;
}

/** Accepted frame payloads: 8-bit, or floats in [0, 1]. */
export type FramePixels = Uint8Array | Float32Array | Float64Array | number[];

interface Pending {
  resolve: (records: DeviationRecord[]) => void;
  reject: (err: Error) => void;
}

export class Tracker {
  readonly layout: Layout;
  readonly mode: TrackingMode;

  private readonly proc: ChildProcessWithoutNullStreams;
  private readonly frameBytes: number;
  private chunks: Buffer[] = [];
  private buffered = 0;
  private headerChecked = false;
  private pending: Pending | null = null;
  private stderrText = "";
  private exited: Promise<number>;
  private exitCode: number | null = null;
  private framesSent = 0;

  constructor(options: TrackerOptions) {
    this.layout = parseLayout(readFileSync(options.layoutPath, "utf-8"));
    this.mode = options.mode ?? "keyline-filtered";
    const [width, height] = this.layout.frameSizePx;
    this.frameBytes = width * height;

    const args = [
      "run",
      "--input", "-",
      "--layout", options.layoutPath,
      "--output", "-",
      "--format", "binary",
      "--mode", this.mode,
    ];
    const numericFlags: Array<[string, number | undefined]> = [
      ["--tau", options.tau],
      ["--area-min", options.areaMin],
      ["--area-max", options.areaMax],
      ["--sigma-w", options.sigmaW],
      ["--sigma-v", options.sigmaV],
      ["--gate", options.gatePx],
      ["--p0", options.p0],
    ];
    for (const [flag, value] of numericFlags) {
      if (value !== undefined) args.push(flag, String(value));
    }

    this.proc = spawn(options.binary ?? "keytrack", args, {
      stdio: ["pipe", "pipe", "pipe"],
    });
    this.proc.stdout.on("data", (chunk: Buffer) => this.onData(chunk));
    this.proc.stderr.on("data", (chunk: Buffer) => {
      this.stderrText += chunk.toString();
    });
    this.exited = new Promise((resolve) => {
      this.proc.on("close", (code) => {
        this.exitCode = code ?? -1;
        if (this.pending !== null) {
          const pending = this.pending;
          this.pending = null;
          pending.reject(new Error(
            `keytrack exited (code ${this.exitCode}) mid-frame: ${this.stderrText.trim()}`));
        }
        resolve(this.exitCode);
      });
    });
    this.proc.on("error", (err) => {
      if (this.pending !== null) {
        const pending = this.pending;
        this.pending = null;
        pending.reject(err);
      }
    });

    this.proc.stdin.write(rawStreamHeader({ width, height, fps: options.fps ?? 120.0 }));
  }

  get nMarkers(): number {
    return this.layout.nMarkers;
  }

  /** Frames streamed so far. */
  get frameCount(): number {
    return this.framesSent;
  }

  /**
   * Track one frame and resolve with its full record block (one record per
   * marker, in marker-id order). The frame must be row-major with exactly
   * width*height samples. Uint8Array input is written as-is (no copy);
   * float input is quantized to 8 bits (documented copy).
   */
  trackFrame(frame: FramePixels): Promise<DeviationRecord[]> {
    if (this.exitCode !== null) {
      throw new Error("tracker process has already exited");
    }
    if (this.pending !== null) {
      throw new Error("trackFrame already in flight; a Tracker handle is single-owner");
    }
    const payload = this.encodeFrame(frame); // throws on bad shape, handle unaffected

    this.framesSent += 1;
    return new Promise<DeviationRecord[]>((resolve, reject) => {
      this.pending = { resolve, reject };
      this.proc.stdin.write(payload, (err) => {
        if (err && this.pending !== null) {
          const pending = this.pending;
          this.pending = null;
          pending.reject(err);
        }
      });
      this.drain();
    });
  }

  /** Close the stream and wait for the process; resolves with its exit code. */
  async close(): Promise<number> {
    if (this.exitCode === null) {
      this.proc.stdin.end();
    }
    return this.exited;
  }

  private encodeFrame(frame: FramePixels): Buffer {
    if (frame.length !== this.frameBytes) {
      const [w, h] = this.layout.frameSizePx;
      throw new TypeError(
        `frame has ${frame.length} samples but the layout needs ${w}x${h} = ${this.frameBytes}`);
    }
    if (frame instanceof Uint8Array) {
      return Buffer.from(frame.buffer, frame.byteOffset, frame.byteLength);
    }
    const out = Buffer.allocUnsafe(this.frameBytes);
    for (let i = 0; i < frame.length; i++) {
      const v = frame[i]!;
      if (!(v >= 0.0 && v <= 1.0)) {
        throw new TypeError(`float frames must hold values in [0, 1], got ${v} at ${i}`);
      }
      out[i] = Math.round(v * 255.0);
    }
    return out;
  }

  private onData(chunk: Buffer): void {
    this.chunks.push(chunk);
    this.buffered += chunk.length;
    this.drain();
  }

  private drain(): void {
    if (this.pending === null) return;
    const headerBytes = this.headerChecked ? 0 : BINARY_HEADER_SIZE;
    const need = headerBytes + this.nMarkers * BINARY_RECORD_SIZE;
    if (this.buffered < need) return;

    let buf = this.chunks.length === 1 ? this.chunks[0]! : Buffer.concat(this.chunks);
    if (!this.headerChecked) {
      checkBinaryHeader(buf);
      buf = buf.subarray(BINARY_HEADER_SIZE);
      this.headerChecked = true;
    }
    const records: DeviationRecord[] = [];
    for (let i = 0; i < this.nMarkers; i++) {
      records.push(parseBinaryRecord(buf, i * BINARY_RECORD_SIZE));
    }
    const rest = buf.subarray(this.nMarkers * BINARY_RECORD_SIZE);
    this.chunks = rest.length > 0 ? [Buffer.from(rest)] : [];
    this.buffered = rest.length;

    const pending = this.pending;
    this.pending = null;
    pending.resolve(records);
  }
}
