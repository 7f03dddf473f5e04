/**
 * MSF1 feature files, as produced by the engine's `extract` subcommand:
 *
 *     magic "MSF1" | u32 count | u32 dim |
 *     count records of ( u32 id_length | UTF-8 image id | dim float32 LE )
 */

import { readFileSync } from 'node:fs';
import { f32FromBuffer } from './bufutil.js';
import { FormatError } from './errors.js';

export interface FeatureRecord {
  id: string;
  values: Float32Array;
}

export function readFeatures(path: string): { dim: number; records: FeatureRecord[] } {
  const blob = readFileSync(path);
  if (blob.length < 12 || blob.toString('ascii', 0, 4) !== 'MSF1') {
    throw new FormatError(`${path}: not an MSF1 feature file (bad magic)`);
  }
  const count = blob.readUInt32LE(4);
  const dim = blob.readUInt32LE(8);
  const records: FeatureRecord[] = [];
  let pos = 12;
  for (let i = 0; i < count; i++) {
    if (pos + 4 > blob.length) {
      throw new FormatError(`${path}: truncated record header`);
    }
    const idLen = blob.readUInt32LE(pos);
    pos += 4;
    if (pos + idLen + dim * 4 > blob.length) {
      throw new FormatError(`${path}: truncated record payload`);
    }
    const id = blob.toString('utf-8', pos, pos + idLen);
    pos += idLen;
    records.push({ id, values: f32FromBuffer(blob, pos, dim) });
    pos += dim * 4;
  }
  return { dim, records };
}
