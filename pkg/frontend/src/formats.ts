/**
 * Parsers for the keytrack file formats a client needs: layout files,
 * sequence manifests, ground-truth tables, PGM frames, and the raw-stream
 * header used when feeding frames over stdin. See docs/FORMATS.md in the
 * core repository for the byte-exact definitions.
 */

export type MarkerStyle = "keyline" | "solid";

export interface MarkerGeometry {
  rInMm: number;
  rOutMm: number;
  innerColor: number;
  outerColor: number;
  style: MarkerStyle;
}

export interface Layout {
  nMarkers: number;
  spacingMm: number;
  sensorMm: [number, number];
  pxPerMm: number;
  geometry: MarkerGeometry;
  /** positionsPx[id] = [x, y] in pixel coordinates. */
  positionsPx: Array<[number, number]>;
  /** Sensor bounds in pixels, (width, height). */
  frameSizePx: [number, number];
}

export interface Manifest {
  name: string;
  layoutFile: string;
  truthFile: string | null;
  framePattern: string;
  nFrames: number;
  fps: number;
}

export interface RawStreamHeader {
  width: number;
  height: number;
  channels?: 1 | 3;
  /** Omit to stream until EOF. */
  frames?: number;
  fps?: number;
}

function keyValueLines(text: string): Map<string, string> {
  const fields = new Map<string, string>();
  for (const raw of text.split("\n")) {
    const line = raw.trim();
    if (!line || line.startsWith("#")) continue;
    const space = line.indexOf(" ");
    if (space < 0) continue;
    fields.set(line.slice(0, space), line.slice(space + 1).trim());
  }
  return fields;
}

function required(fields: Map<string, string>, key: string, what: string): string {
  const value = fields.get(key);
  if (value === undefined) throw new Error(`${what} missing field ${JSON.stringify(key)}`);
  return value;
}

export function parseLayout(text: string): Layout {
  const lines = text.split("\n");
  const headerLines: string[] = [];
  const positionLines: string[] = [];
  let inPositions = false;
  let sawEnd = false;
  for (const raw of lines) {
    const line = raw.trim();
    if (!line || line.startsWith("#")) continue;
    if (line === "positions_px") { inPositions = true; continue; }
    if (inPositions) {
      if (line === "end") { inPositions = false; sawEnd = true; continue; }
      positionLines.push(line);
    } else {
      headerLines.push(line);
    }
  }
  if (inPositions || !sawEnd) throw new Error("layout positions_px block missing 'end'");

  const fields = keyValueLines(headerLines.join("\n"));
  if (required(fields, "format_version", "layout") !== "1") {
    throw new Error(`unsupported layout format_version ${fields.get("format_version")}`);
  }
  const nMarkers = parseInt(required(fields, "n_markers", "layout"), 10);
  const sensorParts = required(fields, "sensor_mm", "layout").split(/\s+/).map(Number);
  if (sensorParts.length !== 2) throw new Error("sensor_mm must hold two values");
  const style = required(fields, "style", "layout");
  if (style !== "keyline" && style !== "solid") {
    throw new Error(`unknown marker style ${JSON.stringify(style)}`);
  }
  const pxPerMm = Number(required(fields, "px_per_mm", "layout"));

  const positions: Array<[number, number]> = new Array(nMarkers);
  let seen = 0;
  for (const line of positionLines) {
    const parts = line.split(/\s+/);
    if (parts.length !== 3) throw new Error(`bad layout position line: ${JSON.stringify(line)}`);
    const id = parseInt(parts[0]!, 10);
    if (!(id >= 0 && id < nMarkers) || positions[id] !== undefined) {
      throw new Error(`bad or duplicate marker id ${id}`);
    }
    positions[id] = [Number(parts[1]!), Number(parts[2]!)];
    seen += 1;
  }
  if (seen !== nMarkers) throw new Error(`layout declares ${nMarkers} markers, lists ${seen}`);

  return {
    nMarkers,
    spacingMm: Number(required(fields, "spacing_mm", "layout")),
    sensorMm: [sensorParts[0]!, sensorParts[1]!],
    pxPerMm,
    geometry: {
      rInMm: Number(required(fields, "r_in_mm", "layout")),
      rOutMm: Number(required(fields, "r_out_mm", "layout")),
      innerColor: Number(required(fields, "inner_color", "layout")),
      outerColor: Number(required(fields, "outer_color", "layout")),
      style,
    },
    positionsPx: positions,
    frameSizePx: [
      Math.round(sensorParts[0]! * pxPerMm),
      Math.round(sensorParts[1]! * pxPerMm),
    ],
  };
}

export function parseManifest(text: string): Manifest {
  const fields = keyValueLines(text);
  if (required(fields, "format_version", "manifest") !== "1"
      || fields.get("kind") !== "sequence") {
    throw new Error("unsupported manifest");
  }
  return {
    name: fields.get("name") ?? "",
    layoutFile: required(fields, "layout_file", "manifest"),
    truthFile: fields.get("truth_file") ?? null,
    framePattern: required(fields, "frame_pattern", "manifest"),
    nFrames: parseInt(required(fields, "n_frames", "manifest"), 10),
    fps: Number(required(fields, "fps", "manifest")),
  };
}

/** Ground truth displacements keyed "frameIndex,markerId". */
export function parseTruth(text: string): Map<string, [number, number]> {
  const lines = text.split("\n").filter((ln) => ln.trim().length > 0);
  if (lines[0] !== "frame_index,marker_id,dx_true,dy_true") {
    throw new Error("missing truth header line");
  }
  const table = new Map<string, [number, number]>();
  for (const line of lines.slice(1)) {
    const parts = line.split(",");
    if (parts.length !== 4) throw new Error(`bad truth row: ${JSON.stringify(line)}`);
    table.set(`${parseInt(parts[0]!, 10)},${parseInt(parts[1]!, 10)}`,
              [Number(parts[2]!), Number(parts[3]!)]);
  }
  return table;
}

export interface PgmImage {
  width: number;
  height: number;
  /** Row-major 8-bit intensities, length width*height. */
  pixels: Uint8Array;
}

/** Decode a binary PGM (P5, maxval 255). */
export function parsePgm(data: Buffer): PgmImage {
  if (data.length < 2 || data.toString("ascii", 0, 2) !== "P5") {
    throw new Error("not a binary PGM (P5) file");
  }
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < data.length && isSpace(data[pos]!)) pos += 1;
    if (data[pos] === 0x23) { // '#' comment
      while (pos < data.length && data[pos] !== 0x0a) pos += 1;
      continue;
    }
    const start = pos;
    while (pos < data.length && !isSpace(data[pos]!)) pos += 1;
    fields.push(parseInt(data.toString("ascii", start, pos), 10));
  }
  pos += 1; // single whitespace byte after maxval
  const [width, height, maxval] = fields as [number, number, number];
  if (maxval !== 255) throw new Error(`only 8-bit PGM supported, maxval=${maxval}`);
  const expected = width * height;
  if (data.length - pos !== expected) {
    throw new Error(`PGM payload has ${data.length - pos} bytes, expected ${expected}`);
  }
  return { width, height, pixels: new Uint8Array(data.buffer, data.byteOffset + pos, expected) };
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}

/** Build the raw-stream header preamble sent before frame bytes. */
export function rawStreamHeader(header: RawStreamHeader): string {
  const lines = [
    "keytrack-raw 1",
    `width ${header.width}`,
    `height ${header.height}`,
    `channels ${header.channels ?? 1}`,
  ];
  if (header.frames !== undefined) lines.push(`frames ${header.frames}`);
  lines.push(`fps ${formatFloat(header.fps ?? 120.0)}`);
  return lines.join("\n") + "\n\n";
}

/** Render a float the way the header parser expects (always with a dot). */
function formatFloat(value: number): string {
  const text = String(value);
  return Number.isInteger(value) && !text.includes("e") ? `${text}.0` : text;
}
