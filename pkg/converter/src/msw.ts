/**
 * MSW1 weight container: reader, writer, and the canonical tensor schema.
 *
 * File layout (all integers little endian):
 *
 *     bytes 0..3    magic "MSW1"
 *     bytes 4..7    header length L, unsigned 32-bit
 *     bytes 8..8+L  UTF-8 JSON header: { version, config, tensors }
 *     payload       raw float32 data, starting at the first 64-byte-aligned
 *                   offset after the header; every tensor offset (relative to
 *                   the data start) is itself 64-byte aligned
 *
 * Tensors appear in canonical schema order. Weight matrices are stored so
 * the consumer computes x @ W.
 */

import { openSync, readSync, writeSync, closeSync, readFileSync } from 'node:fs';
import { f32FromBuffer, bufferOf } from './bufutil.js';
import { FormatError } from './errors.js';
import { elementCount, type Tensor } from './ops.js';

export const MSW_MAGIC = 'MSW1';
export const MSW_FORMAT_VERSION = 1;
export const ALIGNMENT = 64;

export interface Geometry {
  image_side: number;
  patch_side: number;
  hidden_dim: number;
  depth: number;
  heads: number;
  mlp_dim: number;
  positional_mode: 'learned' | 'sinusoidal';
  final_layer_norm: boolean;
}

/** Default geometry: 384-input, 32-pixel patches, 24 blocks of width 1024. */
export const DEFAULT_GEOMETRY: Geometry = {
  image_side: 384,
  patch_side: 32,
  hidden_dim: 1024,
  depth: 24,
  heads: 16,
  mlp_dim: 4096,
  positional_mode: 'learned',
  final_layer_norm: true,
};

export function validateGeometry(g: Geometry): void {
  const positive: Array<keyof Geometry> = [
    'image_side',
    'patch_side',
    'hidden_dim',
    'depth',
    'heads',
    'mlp_dim',
  ];
  for (const key of positive) {
    const v = g[key];
    if (!Number.isInteger(v) || (v as number) <= 0) {
      throw new FormatError(`geometry ${key} must be a positive integer, got ${String(v)}`);
    }
  }
  if (g.image_side % g.patch_side !== 0) {
    throw new FormatError(
      `geometry image_side ${g.image_side} is not divisible by patch_side ${g.patch_side}`,
    );
  }
  if (g.hidden_dim % g.heads !== 0) {
    throw new FormatError(
      `geometry hidden_dim ${g.hidden_dim} is not divisible by heads ${g.heads}`,
    );
  }
  if (g.positional_mode !== 'learned' && g.positional_mode !== 'sinusoidal') {
    throw new FormatError(`geometry positional_mode must be learned|sinusoidal`);
  }
  if (typeof g.final_layer_norm !== 'boolean') {
    throw new FormatError('geometry final_layer_norm must be a boolean');
  }
}

/** Named dimensions resolvable inside name-map rules. */
export function dimensions(g: Geometry): Record<string, number> {
  const grid = g.image_side / g.patch_side;
  return {
    hidden: g.hidden_dim,
    mlp_dim: g.mlp_dim,
    heads: g.heads,
    head_dim: g.hidden_dim / g.heads,
    patch_side: g.patch_side,
    patch_dim: g.patch_side * g.patch_side * 3,
    n_patches: grid * grid,
    seq_len: grid * grid + 1,
    depth: g.depth,
  };
}

export interface SchemaEntry {
  name: string;
  shape: number[];
}

/** Canonical ordered tensor list for a geometry. */
export function schema(g: Geometry): SchemaEntry[] {
  const h = g.hidden_dim;
  const d = dimensions(g);
  const entries: SchemaEntry[] = [
    { name: 'embed.patch.weight', shape: [d.patch_dim!, h] },
    { name: 'embed.patch.bias', shape: [h] },
    { name: 'cls_token', shape: [h] },
  ];
  if (g.positional_mode === 'learned') {
    entries.push({ name: 'pos_embed', shape: [d.seq_len!, h] });
  }
  for (let layer = 0; layer < g.depth; layer++) {
    const p = `blocks.${layer}`;
    entries.push({ name: `${p}.ln1.gamma`, shape: [h] });
    entries.push({ name: `${p}.ln1.beta`, shape: [h] });
    for (const proj of ['q', 'k', 'v', 'out']) {
      entries.push({ name: `${p}.attn.${proj}.weight`, shape: [h, h] });
      entries.push({ name: `${p}.attn.${proj}.bias`, shape: [h] });
    }
    entries.push({ name: `${p}.ln2.gamma`, shape: [h] });
    entries.push({ name: `${p}.ln2.beta`, shape: [h] });
    entries.push({ name: `${p}.mlp.fc1.weight`, shape: [h, g.mlp_dim] });
    entries.push({ name: `${p}.mlp.fc1.bias`, shape: [g.mlp_dim] });
    entries.push({ name: `${p}.mlp.fc2.weight`, shape: [g.mlp_dim, h] });
    entries.push({ name: `${p}.mlp.fc2.bias`, shape: [h] });
  }
  if (g.final_layer_norm) {
    entries.push({ name: 'final_ln.gamma', shape: [h] });
    entries.push({ name: 'final_ln.beta', shape: [h] });
  }
  return entries;
}

export function totalParameterCount(g: Geometry): number {
  return schema(g).reduce((sum, e) => sum + elementCount(e.shape), 0);
}

function aligned(offset: number): number {
  return Math.ceil(offset / ALIGNMENT) * ALIGNMENT;
}

/**
 * Stream-write an MSW1 file. Tensors are pulled one at a time through
 * `getTensor`, so peak memory stays at one tensor regardless of model size.
 */
export function writeMsw(
  path: string,
  geometry: Geometry,
  getTensor: (name: string, shape: number[]) => Float32Array,
): void {
  validateGeometry(geometry);
  const order = schema(geometry);
  const table: Array<{ name: string; shape: number[]; byte_offset: number }> = [];
  let offset = 0;
  for (const { name, shape } of order) {
    offset = aligned(offset);
    table.push({ name, shape, byte_offset: offset });
    offset += elementCount(shape) * 4;
  }
  const header = {
    version: MSW_FORMAT_VERSION,
    config: {
      image_side: geometry.image_side,
      patch_side: geometry.patch_side,
      hidden_dim: geometry.hidden_dim,
      depth: geometry.depth,
      heads: geometry.heads,
      mlp_dim: geometry.mlp_dim,
      positional_mode: geometry.positional_mode,
      final_layer_norm: geometry.final_layer_norm,
    },
    tensors: table,
  };
  const headerBytes = Buffer.from(JSON.stringify(header), 'utf-8');

  const fd = openSync(path, 'w');
  try {
    const prefix = Buffer.alloc(8);
    prefix.write(MSW_MAGIC, 0, 'ascii');
    prefix.writeUInt32LE(headerBytes.length, 4);
    writeSync(fd, prefix);
    writeSync(fd, headerBytes);
    const dataStart = aligned(8 + headerBytes.length);
    writeSync(fd, Buffer.alloc(dataStart - 8 - headerBytes.length));

    let written = 0;
    for (const entry of table) {
      if (entry.byte_offset > written) {
        writeSync(fd, Buffer.alloc(entry.byte_offset - written));
        written = entry.byte_offset;
      }
      const values = getTensor(entry.name, entry.shape);
      if (values.length !== elementCount(entry.shape)) {
        throw new FormatError(
          `tensor ${entry.name}: got ${values.length} values, shape [${entry.shape}] needs ${elementCount(entry.shape)}`,
        );
      }
      const raw = bufferOf(values);
      writeSync(fd, raw);
      written += raw.length;
    }
  } finally {
    closeSync(fd);
  }
}

export interface MswFile {
  geometry: Geometry;
  version: number;
  tensors: Map<string, Tensor>;
}

/** Read a whole MSW1 file back (test-sized files; loads everything). */
export function readMsw(path: string): MswFile {
  const blob = readFileSync(path);
  if (blob.length < 8 || blob.toString('ascii', 0, 4) !== MSW_MAGIC) {
    throw new FormatError(`${path}: not an MSW1 weight file (bad magic)`);
  }
  const headerLen = blob.readUInt32LE(4);
  if (8 + headerLen > blob.length) {
    throw new FormatError(`${path}: header length ${headerLen} exceeds file size`);
  }
  let header: {
    version: number;
    config: Geometry;
    tensors: Array<{ name: string; shape: number[]; byte_offset: number }>;
  };
  try {
    header = JSON.parse(blob.toString('utf-8', 8, 8 + headerLen));
  } catch (err) {
    throw new FormatError(`${path}: header is not valid JSON (${String(err)})`);
  }
  const dataStart = aligned(8 + headerLen);
  const tensors = new Map<string, Tensor>();
  for (const item of header.tensors) {
    const count = elementCount(item.shape);
    const start = dataStart + item.byte_offset;
    if (start + count * 4 > blob.length) {
      throw new FormatError(`${path}: tensor ${item.name} extends past end of file`);
    }
    tensors.set(item.name, { shape: item.shape, data: f32FromBuffer(blob, start, count) });
  }
  return { geometry: header.config, version: header.version, tensors };
}

/** Parse just the header of an MSW1 file (cheap for gigabyte files). */
export function readMswHeader(path: string): {
  version: number;
  config: Geometry;
  tensors: Array<{ name: string; shape: number[]; byte_offset: number }>;
} {
  const fd = openSync(path, 'r');
  try {
    const prefix = Buffer.alloc(8);
    readSync(fd, prefix, 0, 8, 0);
    if (prefix.toString('ascii', 0, 4) !== MSW_MAGIC) {
      throw new FormatError(`${path}: not an MSW1 weight file (bad magic)`);
    }
    const headerLen = prefix.readUInt32LE(4);
    const headerBuf = Buffer.alloc(headerLen);
    readSync(fd, headerBuf, 0, headerLen, 8);
    return JSON.parse(headerBuf.toString('utf-8'));
  } finally {
    closeSync(fd);
  }
}
