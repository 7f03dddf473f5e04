import { mkdtempSync, rmSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { afterAll, describe, expect, it } from 'vitest';
import { openSafetensors, writeSafetensors } from '../src/safetensors.js';
import { FormatError } from '../src/errors.js';

const dir = mkdtempSync(join(tmpdir(), 'st-test-'));
afterAll(() => rmSync(dir, { recursive: true, force: true }));

/** Hand-assemble a safetensors file from raw parts. */
function handBuild(path: string, header: object, payload: Buffer): void {
  const headerBytes = Buffer.from(JSON.stringify(header), 'utf-8');
  const len = Buffer.alloc(8);
  len.writeBigUInt64LE(BigInt(headerBytes.length));
  writeFileSync(path, Buffer.concat([len, headerBytes, payload]));
}

describe('safetensors files', () => {
  it('round-trips multiple tensors with metadata', () => {
    const path = join(dir, 'roundtrip.safetensors');
    const tensors = [
      { name: 'cls_token', shape: [1, 1, 3], data: Float32Array.from([0.5, -0.5, 1.5]) },
      { name: 'blocks.0.attn.qkv.weight', shape: [6, 2], data: Float32Array.from({ length: 12 }, (_, i) => i * 0.25) },
      { name: 'norm.bias', shape: [2], data: Float32Array.from([7, 8]) },
    ];
    writeSafetensors(
      path,
      tensors.map((t) => [t.name, t.shape] as [string, number[]]),
      (name) => tensors.find((t) => t.name === name)!.data,
      { format: 'pt' },
    );
    const archive = openSafetensors(path);
    expect(archive.size).toBe(3);
    for (const t of tensors) {
      const entry = archive.get(t.name);
      expect(entry, t.name).toBeDefined();
      expect(entry!.shape).toEqual(t.shape);
      expect(Array.from(entry!.read().data)).toEqual(Array.from(t.data));
    }
  });

  it('parses a hand-assembled file (format oracle)', () => {
    const path = join(dir, 'hand.safetensors');
    const a = Float32Array.from([1, 2]);
    const b = Float32Array.from([3, 4, 5, 6]);
    handBuild(
      path,
      {
        __metadata__: { format: 'pt' },
        a: { dtype: 'F32', shape: [2], data_offsets: [0, 8] },
        b: { dtype: 'F32', shape: [2, 2], data_offsets: [8, 24] },
      },
      Buffer.concat([Buffer.from(a.buffer), Buffer.from(b.buffer)]),
    );
    const archive = openSafetensors(path);
    expect(Array.from(archive.get('a')!.read().data)).toEqual([1, 2]);
    expect(archive.get('b')!.shape).toEqual([2, 2]);
    expect(Array.from(archive.get('b')!.read().data)).toEqual([3, 4, 5, 6]);
  });

  it('rejects non-F32 dtypes', () => {
    const path = join(dir, 'f16.safetensors');
    handBuild(
      path,
      { a: { dtype: 'F16', shape: [2], data_offsets: [0, 4] } },
      Buffer.alloc(4),
    );
    expect(() => openSafetensors(path)).toThrow(FormatError);
  });

  it('rejects offsets inconsistent with shape', () => {
    const path = join(dir, 'bad-offsets.safetensors');
    handBuild(
      path,
      { a: { dtype: 'F32', shape: [3], data_offsets: [0, 8] } },
      Buffer.alloc(8),
    );
    expect(() => openSafetensors(path)).toThrow(FormatError);
  });

  it('rejects truncated and non-JSON headers', () => {
    const truncated = join(dir, 'truncated.safetensors');
    writeFileSync(truncated, Buffer.from([1, 2, 3]));
    expect(() => openSafetensors(truncated)).toThrow(FormatError);

    const garbage = join(dir, 'garbage.safetensors');
    const len = Buffer.alloc(8);
    len.writeBigUInt64LE(5n);
    writeFileSync(garbage, Buffer.concat([len, Buffer.from('ha!!!'), Buffer.alloc(4)]));
    expect(() => openSafetensors(garbage)).toThrow(FormatError);
  });
});
