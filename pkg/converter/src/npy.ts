/**
 * Minimal .npy (version 1.0) serializer for little-endian float32 arrays,
 * plus a parser tolerant enough for real checkpoint archives.
 */

import { f32FromBuffer, bufferOf } from './bufutil.js';
import { FormatError } from './errors.js';
import { elementCount, type Tensor } from './ops.js';

const NPY_MAGIC = Buffer.from('\x93NUMPY', 'latin1');

/** Serialize a float32 tensor to .npy bytes (C order, '<f4'). */
export function serializeNpy(t: Tensor): Buffer {
  const shapeRepr =
    t.shape.length === 1 ? `(${t.shape[0]},)` : `(${t.shape.join(', ')})`;
  let headerText = `{'descr': '<f4', 'fortran_order': False, 'shape': ${shapeRepr}, }`;
  // Pad with spaces so that magic+version+length+header is a multiple of 64,
  // ending in a newline, matching the upstream writer.
  const unpadded = NPY_MAGIC.length + 2 + 2 + headerText.length + 1;
  const padding = (64 - (unpadded % 64)) % 64;
  headerText = headerText + ' '.repeat(padding) + '\n';

  const header = Buffer.from(headerText, 'latin1');
  const prefix = Buffer.alloc(NPY_MAGIC.length + 4);
  NPY_MAGIC.copy(prefix, 0);
  prefix.writeUInt8(1, 6); // major version
  prefix.writeUInt8(0, 7); // minor version
  prefix.writeUInt16LE(header.length, 8);
  return Buffer.concat([prefix, header, bufferOf(t.data)]);
}

/** Parse .npy bytes into a float32 tensor. Only '<f4', C order is accepted. */
export function parseNpy(buf: Buffer, context = 'npy'): Tensor {
  if (buf.length < 10 || !buf.subarray(0, 6).equals(NPY_MAGIC)) {
    throw new FormatError(`${context}: bad .npy magic`);
  }
  const major = buf.readUInt8(6);
  let headerLen: number;
  let headerStart: number;
  if (major === 1) {
    headerLen = buf.readUInt16LE(8);
    headerStart = 10;
  } else if (major === 2 || major === 3) {
    headerLen = buf.readUInt32LE(8);
    headerStart = 12;
  } else {
    throw new FormatError(`${context}: unsupported .npy version ${major}`);
  }
  const headerText = buf.toString('latin1', headerStart, headerStart + headerLen);

  const descr = /'descr'\s*:\s*'([^']+)'/.exec(headerText)?.[1];
  if (descr !== '<f4') {
    throw new FormatError(`${context}: unsupported dtype ${descr ?? '?'} (need '<f4')`);
  }
  if (/'fortran_order'\s*:\s*True/.test(headerText)) {
    throw new FormatError(`${context}: fortran-order arrays are not supported`);
  }
  const shapeText = /'shape'\s*:\s*\(([^)]*)\)/.exec(headerText)?.[1];
  if (shapeText === undefined) {
    throw new FormatError(`${context}: .npy header has no shape`);
  }
  const shape = shapeText
    .split(',')
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => Number.parseInt(s, 10));
  const count = elementCount(shape);
  const dataStart = headerStart + headerLen;
  if (dataStart + count * 4 > buf.length) {
    throw new FormatError(`${context}: payload truncated`);
  }
  return { shape, data: f32FromBuffer(buf, dataStart, count) };
}
