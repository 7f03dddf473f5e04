/** Buffer/typed-array helpers shared by the binary format modules. */

import { FormatError } from './errors.js';

const hostIsLittleEndian = new Uint8Array(new Uint32Array([1]).buffer)[0] === 1;

/**
 * Read `count` little-endian float32 values starting at `offset` of `buf`
 * into a fresh Float32Array. Uses a zero-copy view when alignment allows,
 * falling back to a byte copy otherwise.
 */
export function f32FromBuffer(buf: Buffer, offset: number, count: number): Float32Array {
  if (!hostIsLittleEndian) {
    // All on-disk formats here are little endian; big-endian hosts would
    // need byte swapping that nothing in this toolchain exercises.
    throw new FormatError('big-endian hosts are not supported');
  }
  if (offset + count * 4 > buf.length) {
    throw new FormatError(`buffer too short: need ${count * 4} bytes at offset ${offset}`);
  }
  const byteStart = buf.byteOffset + offset;
  if (byteStart % 4 === 0) {
    return new Float32Array(buf.buffer, byteStart, count).slice();
  }
  const copy = new Uint8Array(count * 4);
  copy.set(buf.subarray(offset, offset + count * 4));
  return new Float32Array(copy.buffer, 0, count);
}

/** View a Float32Array's bytes as a Buffer without copying. */
export function bufferOf(values: Float32Array): Buffer {
  if (!hostIsLittleEndian) {
    throw new FormatError('big-endian hosts are not supported');
  }
  return Buffer.from(values.buffer, values.byteOffset, values.byteLength);
}
