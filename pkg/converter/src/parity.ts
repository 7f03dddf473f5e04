/**
 * Numerical parity verification: run the engine's feature extractor on
 * sample images with converted weights and compare against a reference
 * feature file computed independently (an upstream implementation, or a
 * trusted earlier run).
 */

import { spawnSync } from 'node:child_process';
import { mkdtempSync, rmSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join, resolve } from 'node:path';
import { FormatError, UsageError } from './errors.js';
import { readFeatures } from './msf.js';

export const PARITY_THRESHOLD = 1e-3;

export interface ParityOptions {
  weightsPath: string;
  referencePath: string;
  imagePaths: string[];
  /** Engine command, split into argv (default: ["morphscope"]). */
  engine?: string[];
  /** Extra arguments appended to the engine's extract invocation. */
  extractArgs?: string[];
  threshold?: number;
}

export interface ParityImageResult {
  index: number;
  id: string;
  reference_id: string;
  max_abs_delta: number;
}

export interface ParityReport {
  pass: boolean;
  threshold: number;
  max_abs_delta: number;
  dim: number;
  images: ParityImageResult[];
  engine_command: string[];
}

/** Largest |a-b| over two equally long float32 vectors. */
export function maxAbsDelta(a: Float32Array, b: Float32Array): number {
  let worst = 0;
  for (let i = 0; i < a.length; i++) {
    const d = Math.abs(a[i]! - b[i]!);
    if (d > worst) worst = d;
  }
  return worst;
}

/**
 * Extract features for `images` through the engine CLI and compare them,
 * record by record, against the reference feature file.
 */
export function verifyParity(options: ParityOptions): ParityReport {
  const engine = options.engine ?? ['morphscope'];
  const threshold = options.threshold ?? PARITY_THRESHOLD;
  if (options.imagePaths.length === 0) {
    throw new UsageError('verify-parity needs at least one sample image');
  }

  const workdir = mkdtempSync(join(tmpdir(), 'msw-parity-'));
  try {
    const manifestPath = join(workdir, 'manifest.jsonl');
    const lines = options.imagePaths.map((p) =>
      JSON.stringify({ path: resolve(p), label: 'bona', processing: 'digital' }),
    );
    writeFileSync(manifestPath, lines.join('\n') + '\n');

    const outPath = join(workdir, 'extracted.msf');
    const argv = [
      ...engine.slice(1),
      'extract',
      '--weights',
      options.weightsPath,
      '--manifest',
      manifestPath,
      '--out',
      outPath,
      ...(options.extractArgs ?? []),
    ];
    const run = spawnSync(engine[0]!, argv, { encoding: 'utf-8' });
    if (run.error) {
      throw new FormatError(`failed to launch engine ${engine[0]}: ${run.error.message}`);
    }
    if (run.status !== 0) {
      throw new FormatError(
        `engine extract failed with exit ${run.status}:\n${run.stderr || run.stdout}`,
      );
    }

    const extracted = readFeatures(outPath);
    const reference = readFeatures(options.referencePath);
    if (extracted.dim !== reference.dim) {
      throw new FormatError(
        `feature dimension mismatch: extracted ${extracted.dim}, reference ${reference.dim}`,
      );
    }
    if (extracted.records.length !== reference.records.length) {
      throw new FormatError(
        `record count mismatch: extracted ${extracted.records.length}, ` +
          `reference ${reference.records.length}`,
      );
    }

    const images: ParityImageResult[] = extracted.records.map((rec, index) => {
      const ref = reference.records[index]!;
      return {
        index,
        id: rec.id,
        reference_id: ref.id,
        max_abs_delta: maxAbsDelta(rec.values, ref.values),
      };
    });
    const worst = images.reduce((m, r) => Math.max(m, r.max_abs_delta), 0);
    return {
      pass: worst <= threshold,
      threshold,
      max_abs_delta: worst,
      dim: extracted.dim,
      images,
      engine_command: engine,
    };
  } finally {
    rmSync(workdir, { recursive: true, force: true });
  }
}
