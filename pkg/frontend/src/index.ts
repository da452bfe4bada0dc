export {
  TrackStatus,
  statusName,
  parseTextRecord,
  parseTextStream,
  parseBinaryRecord,
  parseBinaryStream,
  checkBinaryHeader,
  TEXT_STREAM_HEADER,
  BINARY_STREAM_MAGIC,
  BINARY_HEADER_SIZE,
  BINARY_RECORD_SIZE,
  type DeviationRecord,
} from "./records.js";

export {
  parseLayout,
  parseManifest,
  parseTruth,
  parsePgm,
  rawStreamHeader,
  type Layout,
  type Manifest,
  type MarkerGeometry,
  type MarkerStyle,
  type PgmImage,
  type RawStreamHeader,
} from "./formats.js";

export {
  Tracker,
  type TrackerOptions,
  type TrackingMode,
  type FramePixels,
} from "./tracker.js";

export {
  Sequence,
  simulate,
  type ScenarioPreset,
  type SequenceFrame,
  type SimulateOptions,
} from "./simulator.js";
