/**
 * Checkpoint conversion: stream tensors from a public checkpoint through a
 * name map into an MSW1 weight file.
 */

import { ConversionError, FormatError, MapError } from './errors.js';
import { dimensions, schema, totalParameterCount, writeMsw, type Geometry } from './msw.js';
import { applyOps, expandRules, type NameMap } from './namemap.js';
import { openNpz } from './npz.js';
import { openSafetensors } from './safetensors.js';
import type { Tensor } from './ops.js';

export interface CheckpointEntry {
  shape: number[];
  read: () => Tensor;
}

export type Checkpoint = Map<string, CheckpointEntry>;

/** Open a checkpoint archive by extension (.npz or .safetensors). */
export function openCheckpoint(path: string): Checkpoint {
  if (path.endsWith('.npz')) return openNpz(path);
  if (path.endsWith('.safetensors')) return openSafetensors(path);
  throw new FormatError(`${path}: unknown checkpoint format (expected .npz or .safetensors)`);
}

export interface ConvertResult {
  tensorCount: number;
  parameterCount: number;
}

/**
 * Convert `checkpoint` into an MSW1 file at `outPath`.
 *
 * The map must cover the canonical schema exactly; every mapped source must
 * exist in the checkpoint; every transformed tensor must land on its
 * canonical shape. Unmapped checkpoint tensors (classification heads and
 * the like) are ignored. Deterministic: identical inputs give identical
 * output bytes.
 */
export function convertCheckpoint(
  checkpoint: Checkpoint,
  map: NameMap,
  geometry: Geometry,
  outPath: string,
): ConvertResult {
  const rules = expandRules(map, geometry);
  const missingSources = [...rules.values()]
    .filter((rule) => !checkpoint.has(rule.source))
    .map((rule) => `${rule.source} (for ${rule.canonical})`);
  if (missingSources.length > 0) {
    throw new MapError(
      `checkpoint is missing mapped tensor${missingSources.length > 1 ? 's' : ''}: ` +
        missingSources.join(', '),
    );
  }

  const dims = dimensions(geometry);
  const want = new Map(schema(geometry).map((e) => [e.name, e.shape]));
  writeMsw(outPath, geometry, (name, shape) => {
    const rule = rules.get(name)!;
    const source = checkpoint.get(rule.source)!.read();
    let transformed: Tensor;
    try {
      transformed = applyOps(source, rule.ops, dims);
    } catch (err) {
      throw new ConversionError(
        `tensor ${name} (from ${rule.source}, shape [${source.shape}]): ${String(
          err instanceof Error ? err.message : err,
        )}`,
      );
    }
    if (
      transformed.shape.length !== shape.length ||
      transformed.shape.some((d, i) => d !== shape[i])
    ) {
      throw new ConversionError(
        `tensor ${name}: mapped shape [${transformed.shape}] does not match ` +
          `canonical shape [${shape}] (source ${rule.source} had [${source.shape}])`,
      );
    }
    return transformed.data;
  });
  return {
    tensorCount: want.size,
    parameterCount: totalParameterCount(geometry),
  };
}
