/**
 * Node bindings for the vecmap toolkit.
 *
 * Every function shells out to the vecmap CLI (the canonical implementation)
 * with JSON documents at the boundary, so results are byte- and bit-identical
 * to what the CLI itself produces. Dense results come back as BoundArray:
 * a shape plus a Float64Array view established directly over the checkpoint
 * payload bytes with no copy; treat the view as read-only.
 *
 * The python interpreter defaults to `python3` and can be overridden with
 * the VECMAP_PYTHON environment variable.
 */
import { spawnSync } from "node:child_process";
import {
  closeSync,
  fstatSync,
  mkdirSync,
  mkdtempSync,
  openSync,
  readFileSync,
  readSync,
  rmSync,
  writeFileSync,
} from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export interface BoundArray {
  /** Row-major extents of the tensor. */
  readonly shape: readonly number[];
  /** Zero-copy little-endian float64 view; do not mutate. */
  readonly data: Float64Array;
}

export interface EvalOptions {
  matching?: "greedy" | "hungarian";
  nEvalPoints?: number;
}

export class VecmapError extends Error {
  constructor(message: string, readonly exitCode: number | null) {
    super(message);
    this.name = "VecmapError";
  }
}

function pythonBin(): string {
  return process.env.VECMAP_PYTHON ?? "python3";
}

function runCli(args: string[]): string {
  const res = spawnSync(pythonBin(), ["-m", "vecmap.cli", ...args], {
    encoding: "utf-8",
    maxBuffer: 256 * 1024 * 1024,
  });
  if (res.error) {
    throw new VecmapError(`failed to launch vecmap CLI: ${res.error.message}`, null);
  }
  if (res.status !== 0) {
    const detail = (res.stderr || res.stdout || "").trim();
    throw new VecmapError(detail || `vecmap exited with code ${res.status}`, res.status);
  }
  return res.stdout;
}

function withTempDir<T>(fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "vecmap-"));
  try {
    return fn(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

interface Manifest {
  format: string;
  tensors: { name: string; shape: number[] }[];
}

/** Parse the vecmap checkpoint format: one space-padded JSON manifest line
 * (the padding 8-byte aligns the payload), then raw little-endian float64
 * payloads in manifest order. The file is read into a dedicated buffer and
 * the returned views alias it without copying. */
export function readTensorFile(path: string): Map<string, BoundArray> {
  const fd = openSync(path, "r");
  let bytes: Uint8Array;
  try {
    const size = fstatSync(fd).size;
    bytes = new Uint8Array(new ArrayBuffer(size));
    readSync(fd, bytes, 0, size, 0);
  } finally {
    closeSync(fd);
  }
  const buf = Buffer.from(bytes.buffer);
  const newline = buf.indexOf(0x0a);
  if (newline < 0) {
    throw new VecmapError(`bad checkpoint header in ${path}`, null);
  }
  const manifest = JSON.parse(buf.subarray(0, newline).toString("utf-8")) as Manifest;
  if (manifest.format !== "vecmap-tensors-v1") {
    throw new VecmapError(`unknown checkpoint format in ${path}`, null);
  }
  const out = new Map<string, BoundArray>();
  let offset = newline + 1;
  for (const entry of manifest.tensors) {
    if (offset % 8 !== 0) {
      throw new VecmapError(`misaligned payload in ${path}`, null);
    }
    const count = entry.shape.reduce((a, b) => a * b, 1);
    const data = new Float64Array(bytes.buffer, offset, count);
    out.set(entry.name, { shape: entry.shape, data });
    offset += count * 8;
  }
  return out;
}

function asFrames(doc: unknown): unknown[] {
  return Array.isArray(doc) ? doc : [doc];
}

/**
 * Chamfer-distance AP evaluation; returns the report JSON exactly as the
 * CLI writes it. Inputs are canonical map documents (or arrays of them, one
 * per frame).
 */
export function evaluate(predsJson: string, gtsJson: string, cfgJson = "{}"): string {
  const preds = asFrames(JSON.parse(predsJson));
  const gts = asFrames(JSON.parse(gtsJson));
  const cfg = JSON.parse(cfgJson) as EvalOptions & {
    matching?: string;
    n_eval_points?: number;
  };
  if (preds.length !== gts.length) {
    throw new VecmapError(
      `prediction frames (${preds.length}) != ground-truth frames (${gts.length})`,
      null,
    );
  }
  return withTempDir((dir) => {
    const predDir = join(dir, "pred");
    const gtDir = join(dir, "gt");
    for (let i = 0; i < gts.length; i++) {
      const fid = `frame_${String(i).padStart(6, "0")}`;
      const pd = join(predDir, "frames", fid);
      const gd = join(gtDir, "frames", fid);
      for (const d of [pd, gd]) {
        mkdirSync(d, { recursive: true });
      }
      writeFileSync(join(pd, "pred.json"), JSON.stringify(preds[i]));
      writeFileSync(join(gd, "gt.json"), JSON.stringify(gts[i]));
    }
    const report = join(dir, "report.json");
    const args = ["eval", "--pred", predDir, "--gt", gtDir, "--out", report];
    const matching = cfg.matching;
    if (matching) {
      args.push("--matching", matching);
    }
    const nEval = cfg.nEvalPoints ?? cfg.n_eval_points;
    if (nEval !== undefined) {
      args.push("--n-eval-points", String(nEval));
    }
    runCli(args);
    return readFileSync(report, "utf-8");
  });
}

export interface ChamferOptions {
  closedA?: boolean;
  closedB?: boolean;
}

function instanceDoc(points: number[][], closed: boolean): string {
  return JSON.stringify({
    category: closed ? "ped" : "div",
    closed,
    confidence: 1.0,
    points,
  });
}

/**
 * Symmetric Chamfer distance between two point chains after resampling each
 * to nEvalPoints. Exactly the CLI's number: the stdout repr is parsed back
 * to a double, which round-trips bit-exactly.
 */
export function chamfer(
  aPoints: number[][],
  bPoints: number[][],
  nEvalPoints = 100,
  options: ChamferOptions = {},
): number {
  return withTempDir((dir) => {
    const a = join(dir, "a.json");
    const b = join(dir, "b.json");
    writeFileSync(a, instanceDoc(aPoints, options.closedA ?? false));
    writeFileSync(b, instanceDoc(bPoints, options.closedB ?? false));
    const out = runCli([
      "chamfer", "--a", a, "--b", b, "--n-eval-points", String(nEvalPoints),
    ]);
    return Number.parseFloat(out.trim());
  });
}

/**
 * Rasterize a map document onto a BEV grid; [height, width, 3] mask with
 * ground-truth semantics (value 1), or confidence values when
 * useConfidence is set.
 */
export function rasterize(
  mapJson: string,
  gridJson: string,
  width = 1,
  useConfidence = false,
): BoundArray {
  return withTempDir((dir) => {
    const mapPath = join(dir, "map.json");
    const gridPath = join(dir, "grid.json");
    const outPath = join(dir, "raster.bin");
    writeFileSync(mapPath, mapJson);
    writeFileSync(gridPath, gridJson);
    const args = [
      "rasterize", "--map", mapPath, "--grid", gridPath,
      "--width", String(width), "--out", outPath,
    ];
    if (useConfidence) {
      args.push("--use-confidence");
    }
    runCli(args);
    const tensors = readTensorFile(outPath);
    const raster = tensors.get("raster");
    if (!raster) {
      throw new VecmapError("rasterize output missing 'raster' tensor", null);
    }
    return raster;
  });
}

/**
 * Perspective-view Gaussian keypoint heatmap target for a map document and
 * camera rig; [n_cameras, image_h, image_w, 3].
 */
export function heatmapTarget(
  mapJson: string,
  rigJson: string,
  sigma = 3.0,
): BoundArray {
  return withTempDir((dir) => {
    const mapPath = join(dir, "map.json");
    const rigPath = join(dir, "rig.json");
    const outPath = join(dir, "heatmap.bin");
    writeFileSync(mapPath, mapJson);
    writeFileSync(rigPath, rigJson);
    runCli([
      "heatmap", "--map", mapPath, "--rig", rigPath,
      "--sigma", String(sigma), "--out", outPath,
    ]);
    const tensors = readTensorFile(outPath);
    const heatmap = tensors.get("heatmap");
    if (!heatmap) {
      throw new VecmapError("heatmap output missing 'heatmap' tensor", null);
    }
    return heatmap;
  });
}

/** Version stamp of the underlying toolkit. */
export function version(): string {
  return runCli(["--version"]).trim();
}
