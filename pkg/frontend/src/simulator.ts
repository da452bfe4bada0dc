/**
 * Synthetic-sequence access: render the built-in scenarios through the
 * `keytrack simulate` CLI and load the resulting directory (frames, layout,
 * ground truth) as typed objects.
 */

import { execFile } from "node:child_process";
import { promises as fs } from "node:fs";
import * as path from "node:path";
import { promisify } from "node:util";

import { parseLayout, parseManifest, parsePgm, parseTruth,
         type Layout, type Manifest, type PgmImage } from "./formats.js";

const execFileAsync = promisify(execFile);

export type ScenarioPreset =
  | "fig4-keyline"
  | "fig4-solid"
  | "idle"
  | "indent"
  | "shear";

export interface SimulateOptions {
  frames?: number;
  seed?: number;
  noiseStd?: number;
  blurPx?: number;
  /** Executable to spawn, default "keytrack" from PATH. */
  binary?: string;
}

export interface SequenceFrame extends PgmImage {
  index: number;
  /** Seconds, index / fps. */
  timestamp: number;
}

/** A written sequence directory: manifest + layout + frames + truth. */
export class Sequence {
  private constructor(
    readonly directory: string,
    readonly manifest: Manifest,
    readonly layout: Layout,
  ) {}

  static async load(directory: string): Promise<Sequence> {
    const manifest = parseManifest(
      await fs.readFile(path.join(directory, "manifest.txt"), "utf-8"));
    const layout = parseLayout(
      await fs.readFile(path.join(directory, manifest.layoutFile), "utf-8"));
    return new Sequence(directory, manifest, layout);
  }

  get frameCount(): number {
    return this.manifest.nFrames;
  }

  framePath(index: number): string {
    return path.join(this.directory,
                     this.manifest.framePattern.replace("{index:06d}",
                                                        String(index).padStart(6, "0")));
  }

  async frame(index: number): Promise<SequenceFrame> {
    if (index < 0 || index >= this.manifest.nFrames) {
      throw new RangeError(`frame ${index} outside 0..${this.manifest.nFrames - 1}`);
    }
    const image = parsePgm(await fs.readFile(this.framePath(index)));
    return { ...image, index, timestamp: index / this.manifest.fps };
  }

  /** Ground truth displacements keyed "frameIndex,markerId"; null if absent. */
  async truth(): Promise<Map<string, [number, number]> | null> {
    if (this.manifest.truthFile === null) return null;
    return parseTruth(
      await fs.readFile(path.join(this.directory, this.manifest.truthFile), "utf-8"));
  }
}

/** Render a preset scenario into `outDir` and load it. */
export async function simulate(
  preset: ScenarioPreset,
  outDir: string,
  options: SimulateOptions = {},
): Promise<Sequence> {
  const args = ["simulate", "--preset", preset, "--out", outDir];
  if (options.frames !== undefined) args.push("--frames", String(options.frames));
  if (options.seed !== undefined) args.push("--seed", String(options.seed));
  if (options.noiseStd !== undefined) args.push("--noise-std", String(options.noiseStd));
  if (options.blurPx !== undefined) args.push("--blur", String(options.blurPx));
  await execFileAsync(options.binary ?? "keytrack", args);
  return Sequence.load(outDir);
}
