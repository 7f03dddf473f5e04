/**
 * .npz checkpoint archives: a zip file whose members are .npy arrays.
 *
 * The writer emits stored (uncompressed) entries, which is what the
 * standard non-compressing archiver produces; the reader additionally
 * understands deflated entries so compressed archives load too.
 */

import { inflateRawSync } from 'node:zlib';
import { openSync, writeSync, closeSync, readFileSync } from 'node:fs';
import { FormatError } from './errors.js';
import { parseNpy, serializeNpy } from './npy.js';
import type { Tensor } from './ops.js';

// --------------------------------------------------------------- crc32

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(buf: Buffer, seed = 0): number {
  let c = ~seed >>> 0;
  for (let i = 0; i < buf.length; i++) {
    c = CRC_TABLE[(c ^ buf[i]!) & 0xff]! ^ (c >>> 8);
  }
  return ~c >>> 0;
}

// ---------------------------------------------------------------- write

const SIG_LOCAL = 0x04034b50;
const SIG_CENTRAL = 0x02014b50;
const SIG_EOCD = 0x06054b50;

interface CentralRecord {
  name: Buffer;
  crc: number;
  size: number;
  offset: number;
}

/**
 * Incremental .npz writer: entries stream straight to disk, so archives
 * larger than memory are fine as long as single tensors fit.
 */
export class NpzWriter {
  private fd: number;
  private offset = 0;
  private central: CentralRecord[] = [];
  private closed = false;

  constructor(path: string) {
    this.fd = openSync(path, 'w');
  }

  /** Add one named float32 array; names keep any '/' separators verbatim. */
  add(name: string, tensor: Tensor): void {
    const entryName = Buffer.from(`${name}.npy`, 'utf-8');
    const payload = serializeNpy(tensor);
    const crc = crc32(payload);

    const local = Buffer.alloc(30);
    local.writeUInt32LE(SIG_LOCAL, 0);
    local.writeUInt16LE(20, 4); // version needed
    local.writeUInt16LE(0, 6); // flags
    local.writeUInt16LE(0, 8); // method: stored
    local.writeUInt16LE(0, 10); // mod time
    local.writeUInt16LE(0x21, 12); // mod date (1980-01-01)
    local.writeUInt32LE(crc, 14);
    local.writeUInt32LE(payload.length, 18);
    local.writeUInt32LE(payload.length, 22);
    local.writeUInt16LE(entryName.length, 26);
    local.writeUInt16LE(0, 28); // extra length

    this.central.push({ name: entryName, crc, size: payload.length, offset: this.offset });
    writeSync(this.fd, local);
    writeSync(this.fd, entryName);
    writeSync(this.fd, payload);
    this.offset += local.length + entryName.length + payload.length;
  }

  close(): void {
    if (this.closed) return;
    this.closed = true;
    const centralStart = this.offset;
    for (const rec of this.central) {
      const hdr = Buffer.alloc(46);
      hdr.writeUInt32LE(SIG_CENTRAL, 0);
      hdr.writeUInt16LE(20, 4); // version made by
      hdr.writeUInt16LE(20, 6); // version needed
      hdr.writeUInt16LE(0, 8); // flags
      hdr.writeUInt16LE(0, 10); // method: stored
      hdr.writeUInt16LE(0, 12); // mod time
      hdr.writeUInt16LE(0x21, 14); // mod date
      hdr.writeUInt32LE(rec.crc, 16);
      hdr.writeUInt32LE(rec.size, 20);
      hdr.writeUInt32LE(rec.size, 24);
      hdr.writeUInt16LE(rec.name.length, 28);
      // extra/comment/disk/attrs stay zero
      hdr.writeUInt32LE(rec.offset, 42);
      writeSync(this.fd, hdr);
      writeSync(this.fd, rec.name);
      this.offset += hdr.length + rec.name.length;
    }
    const eocd = Buffer.alloc(22);
    eocd.writeUInt32LE(SIG_EOCD, 0);
    eocd.writeUInt16LE(this.central.length, 8);
    eocd.writeUInt16LE(this.central.length, 10);
    eocd.writeUInt32LE(this.offset - centralStart, 12);
    eocd.writeUInt32LE(centralStart, 16);
    writeSync(this.fd, eocd);
    closeSync(this.fd);
  }
}

export function writeNpz(path: string, tensors: Iterable<[string, Tensor]>): void {
  const writer = new NpzWriter(path);
  try {
    for (const [name, tensor] of tensors) writer.add(name, tensor);
  } finally {
    writer.close();
  }
}

// ----------------------------------------------------------------- read

export interface NpzEntry {
  shape: number[];
  read: () => Tensor;
}

/**
 * Open an .npz archive and return lazy per-array readers keyed by name
 * (the trailing '.npy' is stripped).
 */
export function openNpz(path: string): Map<string, NpzEntry> {
  const blob = readFileSync(path);
  // Locate the end-of-central-directory record; it sits in the last
  // 65557 bytes (comment can pad it away from the very end).
  let eocd = -1;
  const searchFrom = Math.max(0, blob.length - 65557);
  for (let i = blob.length - 22; i >= searchFrom; i--) {
    if (blob.readUInt32LE(i) === SIG_EOCD) {
      eocd = i;
      break;
    }
  }
  if (eocd < 0) {
    throw new FormatError(`${path}: not a zip archive (no end-of-central-directory)`);
  }
  const count = blob.readUInt16LE(eocd + 10);
  let pos = blob.readUInt32LE(eocd + 16);

  const entries = new Map<string, NpzEntry>();
  for (let i = 0; i < count; i++) {
    if (blob.readUInt32LE(pos) !== SIG_CENTRAL) {
      throw new FormatError(`${path}: corrupt central directory`);
    }
    const method = blob.readUInt16LE(pos + 10);
    const compressedSize = blob.readUInt32LE(pos + 20);
    const nameLen = blob.readUInt16LE(pos + 28);
    const extraLen = blob.readUInt16LE(pos + 30);
    const commentLen = blob.readUInt16LE(pos + 32);
    const localOffset = blob.readUInt32LE(pos + 42);
    const rawName = blob.toString('utf-8', pos + 46, pos + 46 + nameLen);
    pos += 46 + nameLen + extraLen + commentLen;

    if (method !== 0 && method !== 8) {
      throw new FormatError(`${path}: entry ${rawName} uses unsupported compression ${method}`);
    }
    const name = rawName.endsWith('.npy') ? rawName.slice(0, -4) : rawName;
    entries.set(name, {
      // Shape comes lazily from the .npy header on first read.
      get shape() {
        return this.read().shape;
      },
      read: () => {
        // The local header repeats name/extra with its own lengths.
        const localNameLen = blob.readUInt16LE(localOffset + 26);
        const localExtraLen = blob.readUInt16LE(localOffset + 28);
        const dataStart = localOffset + 30 + localNameLen + localExtraLen;
        let payload = blob.subarray(dataStart, dataStart + compressedSize);
        if (method === 8) payload = inflateRawSync(payload);
        return parseNpy(payload, `${path}:${rawName}`);
      },
    });
  }
  return entries;
}
