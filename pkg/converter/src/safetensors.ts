/**
 * .safetensors checkpoint files: an 8-byte little-endian header length,
 * a JSON table of {dtype, shape, data_offsets} entries, then raw data.
 * Only F32 tensors are handled; that is all a float32 weight file needs.
 */

import { openSync, writeSync, closeSync, readFileSync } from 'node:fs';
import { f32FromBuffer, bufferOf } from './bufutil.js';
import { FormatError } from './errors.js';
import { elementCount, type Tensor } from './ops.js';

interface HeaderEntry {
  dtype: string;
  shape: number[];
  data_offsets: [number, number];
}

export interface SafetensorsEntry {
  shape: number[];
  read: () => Tensor;
}

/**
 * Write tensors in insertion order. `tensors` may be a lazy iterable; each
 * value is pulled once, after the header (which only needs shapes) is out.
 */
export function writeSafetensors(
  path: string,
  shapes: Iterable<[string, number[]]>,
  getTensor: (name: string) => Float32Array,
  metadata?: Record<string, string>,
): void {
  const header: Record<string, HeaderEntry | Record<string, string>> = {};
  if (metadata) header['__metadata__'] = metadata;
  const order: Array<[string, number[]]> = [];
  let offset = 0;
  for (const [name, shape] of shapes) {
    const nbytes = elementCount(shape) * 4;
    header[name] = { dtype: 'F32', shape: [...shape], data_offsets: [offset, offset + nbytes] };
    order.push([name, shape]);
    offset += nbytes;
  }
  const headerBytes = Buffer.from(JSON.stringify(header), 'utf-8');

  const fd = openSync(path, 'w');
  try {
    const prefix = Buffer.alloc(8);
    prefix.writeBigUInt64LE(BigInt(headerBytes.length), 0);
    writeSync(fd, prefix);
    writeSync(fd, headerBytes);
    for (const [name, shape] of order) {
      const values = getTensor(name);
      if (values.length !== elementCount(shape)) {
        throw new FormatError(
          `tensor ${name}: got ${values.length} values, shape [${shape}] needs ${elementCount(shape)}`,
        );
      }
      writeSync(fd, bufferOf(values));
    }
  } finally {
    closeSync(fd);
  }
}

/** Open a .safetensors file, returning lazy per-tensor readers by name. */
export function openSafetensors(path: string): Map<string, SafetensorsEntry> {
  const blob = readFileSync(path);
  if (blob.length < 8) {
    throw new FormatError(`${path}: too short for a safetensors file`);
  }
  const headerLen = Number(blob.readBigUInt64LE(0));
  if (8 + headerLen > blob.length) {
    throw new FormatError(`${path}: header length ${headerLen} exceeds file size`);
  }
  let header: Record<string, HeaderEntry | Record<string, string>>;
  try {
    header = JSON.parse(blob.toString('utf-8', 8, 8 + headerLen));
  } catch (err) {
    throw new FormatError(`${path}: header is not valid JSON (${String(err)})`);
  }
  const dataStart = 8 + headerLen;
  const entries = new Map<string, SafetensorsEntry>();
  for (const [name, value] of Object.entries(header)) {
    if (name === '__metadata__') continue;
    const entry = value as HeaderEntry;
    if (entry.dtype !== 'F32') {
      throw new FormatError(`${path}: tensor ${name} has dtype ${entry.dtype} (need F32)`);
    }
    const [start, end] = entry.data_offsets;
    const count = elementCount(entry.shape);
    if (end - start !== count * 4 || dataStart + end > blob.length) {
      throw new FormatError(`${path}: tensor ${name} has inconsistent data offsets`);
    }
    entries.set(name, {
      shape: entry.shape,
      read: () => ({ shape: [...entry.shape], data: f32FromBuffer(blob, dataStart + start, count) }),
    });
  }
  return entries;
}
