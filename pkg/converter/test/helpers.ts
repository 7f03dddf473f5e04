/**
 * Shared test fixtures: deterministic tensor synthesis, hand-written
 * builders for the two public checkpoint layouts (independent of the
 * converter's own transform verbs, so a bug cannot cancel itself out),
 * PPM sample images, and engine invocation.
 */

import { createHash } from 'node:crypto';
import { spawnSync } from 'node:child_process';
import { readFileSync, writeFileSync } from 'node:fs';
import { schema, type Geometry } from '../src/msw.js';
import type { Tensor } from '../src/ops.js';

export const TOY_GEOMETRY: Geometry = {
  image_side: 64,
  patch_side: 32,
  hidden_dim: 64,
  depth: 2,
  heads: 4,
  mlp_dim: 128,
  positional_mode: 'learned',
  final_layer_norm: true,
};

// ------------------------------------------------------------------ rng

function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Fill with N(mean, std^2) gaussians via the Box-Muller transform. */
function fillGaussian(out: Float32Array, rng: () => number, mean: number, std: number): void {
  for (let i = 0; i < out.length; i += 2) {
    let u = rng();
    if (u <= 1e-12) u = 1e-12;
    const v = rng();
    const r = Math.sqrt(-2 * Math.log(u));
    out[i] = mean + std * r * Math.cos(2 * Math.PI * v);
    if (i + 1 < out.length) out[i + 1] = mean + std * r * Math.sin(2 * Math.PI * v);
  }
}

/**
 * Deterministic per-tensor synthesis: a pure function of (seed, name), so
 * gigabyte bundles never have to sit in memory — any tensor can be
 * regenerated on demand. Layer-norm gains hover near 1, everything else
 * near 0, keeping the encoder forward numerically tame.
 */
export function synthTensor(seed: number, name: string, shape: number[]): Float32Array {
  const count = shape.reduce((a, b) => a * b, 1);
  const out = new Float32Array(count);
  const rng = mulberry32(fnv1a(name) ^ (seed >>> 0));
  const mean = name.endsWith('.gamma') ? 1.0 : 0.0;
  fillGaussian(out, rng, mean, 0.02);
  return out;
}

/** All canonical tensors of a geometry as an eager map (toy sizes only). */
export function canonicalTensors(geometry: Geometry, seed: number): Map<string, Tensor> {
  const out = new Map<string, Tensor>();
  for (const { name, shape } of schema(geometry)) {
    out.set(name, { shape: [...shape], data: synthTensor(seed, name, shape) });
  }
  return out;
}

// ------------------------------------------- upstream layout builders

export interface UpstreamSpec {
  name: string;
  shape: number[];
  /** Materialize the tensor data; called lazily so huge builds can stream. */
  make: () => Float32Array;
}

export interface UpstreamTensor {
  name: string;
  shape: number[];
  data: Float32Array;
}

function materialize(specs: UpstreamSpec[]): UpstreamTensor[] {
  return specs.map((s) => ({ name: s.name, shape: s.shape, data: s.make() }));
}

/**
 * Re-express canonical tensors in the Flax-style layout. Every transform
 * here is a pure relabeling (row-major data identical, shapes richer), by
 * construction of that layout's [in, out] kernel convention.
 */
export function jaxLayoutSpecs(geometry: Geometry, seed: number): UpstreamSpec[] {
  const g = geometry;
  const dh = g.hidden_dim / g.heads;
  const grid = g.image_side / g.patch_side;
  const seq = grid * grid + 1;
  const spec = (name: string, shape: number[], canonical: string, canonicalShape: number[]): UpstreamSpec => ({
    name,
    shape,
    make: () => synthTensor(seed, canonical, canonicalShape),
  });
  const out: UpstreamSpec[] = [];

  out.push(spec('cls', [1, 1, g.hidden_dim], 'cls_token', [g.hidden_dim]));
  out.push(
    spec(
      'embedding/kernel',
      [g.patch_side, g.patch_side, 3, g.hidden_dim],
      'embed.patch.weight',
      [g.patch_side * g.patch_side * 3, g.hidden_dim],
    ),
  );
  out.push(spec('embedding/bias', [g.hidden_dim], 'embed.patch.bias', [g.hidden_dim]));
  out.push(
    spec('Transformer/posembed_input/pos_embedding', [1, seq, g.hidden_dim], 'pos_embed', [seq, g.hidden_dim]),
  );
  for (let layer = 0; layer < g.depth; layer++) {
    const cp = `blocks.${layer}`;
    const up = `Transformer/encoderblock_${layer}`;
    const attn = `${up}/MultiHeadDotProductAttention_1`;
    out.push(spec(`${up}/LayerNorm_0/scale`, [g.hidden_dim], `${cp}.ln1.gamma`, [g.hidden_dim]));
    out.push(spec(`${up}/LayerNorm_0/bias`, [g.hidden_dim], `${cp}.ln1.beta`, [g.hidden_dim]));
    for (const [canon, upstream] of [
      ['q', 'query'],
      ['k', 'key'],
      ['v', 'value'],
    ] as const) {
      out.push(
        spec(
          `${attn}/${upstream}/kernel`,
          [g.hidden_dim, g.heads, dh],
          `${cp}.attn.${canon}.weight`,
          [g.hidden_dim, g.hidden_dim],
        ),
      );
      out.push(spec(`${attn}/${upstream}/bias`, [g.heads, dh], `${cp}.attn.${canon}.bias`, [g.hidden_dim]));
    }
    out.push(
      spec(`${attn}/out/kernel`, [g.heads, dh, g.hidden_dim], `${cp}.attn.out.weight`, [g.hidden_dim, g.hidden_dim]),
    );
    out.push(spec(`${attn}/out/bias`, [g.hidden_dim], `${cp}.attn.out.bias`, [g.hidden_dim]));
    out.push(spec(`${up}/LayerNorm_2/scale`, [g.hidden_dim], `${cp}.ln2.gamma`, [g.hidden_dim]));
    out.push(spec(`${up}/LayerNorm_2/bias`, [g.hidden_dim], `${cp}.ln2.beta`, [g.hidden_dim]));
    out.push(
      spec(`${up}/MlpBlock_3/Dense_0/kernel`, [g.hidden_dim, g.mlp_dim], `${cp}.mlp.fc1.weight`, [
        g.hidden_dim,
        g.mlp_dim,
      ]),
    );
    out.push(spec(`${up}/MlpBlock_3/Dense_0/bias`, [g.mlp_dim], `${cp}.mlp.fc1.bias`, [g.mlp_dim]));
    out.push(
      spec(`${up}/MlpBlock_3/Dense_1/kernel`, [g.mlp_dim, g.hidden_dim], `${cp}.mlp.fc2.weight`, [
        g.mlp_dim,
        g.hidden_dim,
      ]),
    );
    out.push(spec(`${up}/MlpBlock_3/Dense_1/bias`, [g.hidden_dim], `${cp}.mlp.fc2.bias`, [g.hidden_dim]));
  }
  out.push(spec('Transformer/encoder_norm/scale', [g.hidden_dim], 'final_ln.gamma', [g.hidden_dim]));
  out.push(spec('Transformer/encoder_norm/bias', [g.hidden_dim], 'final_ln.beta', [g.hidden_dim]));
  // Classification head: present upstream, not mapped, must be ignored.
  out.push(spec('head/kernel', [g.hidden_dim, 7], '__unused.head', [g.hidden_dim * 7]));
  out.push(spec('head/bias', [7], '__unused.head.bias', [7]));
  return out;
}

export function buildJaxLayout(geometry: Geometry, seed: number): UpstreamTensor[] {
  return materialize(jaxLayoutSpecs(geometry, seed));
}

/**
 * Re-express canonical tensors in the torch-style layout, with explicit
 * index arithmetic (no shared transform code): linear weights become
 * [out, in], the three attention projections fuse row-wise into one
 * [3*hidden, hidden] matrix, and the patch embedding becomes a conv kernel
 * [out, 3, patch, patch].
 */
export function torchLayoutSpecs(geometry: Geometry, seed: number): UpstreamSpec[] {
  const g = geometry;
  const h = g.hidden_dim;
  const p = g.patch_side;
  const grid = g.image_side / p;
  const seq = grid * grid + 1;
  const pull = (name: string, shape: number[]) => synthTensor(seed, name, shape);

  const transposed = (flat: Float32Array, rows: number, cols: number): Float32Array => {
    // input is [rows, cols] row-major; output [cols, rows]
    const out = new Float32Array(flat.length);
    for (let r = 0; r < rows; r++) {
      for (let c = 0; c < cols; c++) {
        out[c * rows + r] = flat[r * cols + c]!;
      }
    }
    return out;
  };

  const out: UpstreamSpec[] = [];
  out.push({ name: 'cls_token', shape: [1, 1, h], make: () => pull('cls_token', [h]) });
  out.push({ name: 'pos_embed', shape: [1, seq, h], make: () => pull('pos_embed', [seq, h]) });

  out.push({
    name: 'patch_embed.proj.weight',
    shape: [h, 3, p, p],
    make: () => {
      // canonical patch weight P[(y*p + x)*3 + c][o]  ->  conv W[o][c][y][x]
      const patch = pull('embed.patch.weight', [p * p * 3, h]);
      const conv = new Float32Array(patch.length);
      for (let o = 0; o < h; o++) {
        for (let c = 0; c < 3; c++) {
          for (let y = 0; y < p; y++) {
            for (let x = 0; x < p; x++) {
              conv[((o * 3 + c) * p + y) * p + x] = patch[((y * p + x) * 3 + c) * h + o]!;
            }
          }
        }
      }
      return conv;
    },
  });
  out.push({ name: 'patch_embed.proj.bias', shape: [h], make: () => pull('embed.patch.bias', [h]) });

  for (let layer = 0; layer < g.depth; layer++) {
    const cp = `blocks.${layer}`;
    out.push({ name: `${cp}.norm1.weight`, shape: [h], make: () => pull(`${cp}.ln1.gamma`, [h]) });
    out.push({ name: `${cp}.norm1.bias`, shape: [h], make: () => pull(`${cp}.ln1.beta`, [h]) });

    out.push({
      name: `${cp}.attn.qkv.weight`,
      shape: [3 * h, h],
      make: () => {
        // canonical q/k/v [h, h] (x @ W)  ->  fused torch rows [3h, h] (W^T stacked)
        const fused = new Float32Array(3 * h * h);
        (['q', 'k', 'v'] as const).forEach((proj, block) => {
          const w = pull(`${cp}.attn.${proj}.weight`, [h, h]);
          for (let r = 0; r < h; r++) {
            for (let c = 0; c < h; c++) {
              fused[(block * h + r) * h + c] = w[c * h + r]!;
            }
          }
        });
        return fused;
      },
    });
    out.push({
      name: `${cp}.attn.qkv.bias`,
      shape: [3 * h],
      make: () => {
        const fusedBias = new Float32Array(3 * h);
        (['q', 'k', 'v'] as const).forEach((proj, block) => {
          fusedBias.set(pull(`${cp}.attn.${proj}.bias`, [h]), block * h);
        });
        return fusedBias;
      },
    });

    out.push({
      name: `${cp}.attn.proj.weight`,
      shape: [h, h],
      make: () => transposed(pull(`${cp}.attn.out.weight`, [h, h]), h, h),
    });
    out.push({ name: `${cp}.attn.proj.bias`, shape: [h], make: () => pull(`${cp}.attn.out.bias`, [h]) });
    out.push({ name: `${cp}.norm2.weight`, shape: [h], make: () => pull(`${cp}.ln2.gamma`, [h]) });
    out.push({ name: `${cp}.norm2.bias`, shape: [h], make: () => pull(`${cp}.ln2.beta`, [h]) });
    out.push({
      name: `${cp}.mlp.fc1.weight`,
      shape: [g.mlp_dim, h],
      make: () => transposed(pull(`${cp}.mlp.fc1.weight`, [h, g.mlp_dim]), h, g.mlp_dim),
    });
    out.push({ name: `${cp}.mlp.fc1.bias`, shape: [g.mlp_dim], make: () => pull(`${cp}.mlp.fc1.bias`, [g.mlp_dim]) });
    out.push({
      name: `${cp}.mlp.fc2.weight`,
      shape: [h, g.mlp_dim],
      make: () => transposed(pull(`${cp}.mlp.fc2.weight`, [g.mlp_dim, h]), g.mlp_dim, h),
    });
    out.push({ name: `${cp}.mlp.fc2.bias`, shape: [h], make: () => pull(`${cp}.mlp.fc2.bias`, [h]) });
  }
  out.push({ name: 'norm.weight', shape: [h], make: () => pull('final_ln.gamma', [h]) });
  out.push({ name: 'norm.bias', shape: [h], make: () => pull('final_ln.beta', [h]) });
  out.push({ name: 'head.weight', shape: [7, h], make: () => pull('__unused.head', [7 * h]) });
  out.push({ name: 'head.bias', shape: [7], make: () => pull('__unused.head.bias', [7]) });
  return out;
}

export function buildTorchLayout(geometry: Geometry, seed: number): UpstreamTensor[] {
  return materialize(torchLayoutSpecs(geometry, seed));
}

// ------------------------------------------------------------- images

/** Write a binary P6 PPM. `pixel` maps (x, y) to [r, g, b] in 0..255. */
export function writePpm(
  path: string,
  side: number,
  pixel: (x: number, y: number) => [number, number, number],
): void {
  const header = Buffer.from(`P6\n${side} ${side}\n255\n`, 'ascii');
  const body = Buffer.alloc(side * side * 3);
  for (let y = 0; y < side; y++) {
    for (let x = 0; x < side; x++) {
      const [r, g, b] = pixel(x, y);
      const at = (y * side + x) * 3;
      body[at] = r;
      body[at + 1] = g;
      body[at + 2] = b;
    }
  }
  writeFileSync(path, Buffer.concat([header, body]));
}

/** Three deterministic sample images: zeros, a gradient, seeded noise. */
export function writeSampleImages(dir: string, side: number): string[] {
  const zero = `${dir}/zero.ppm`;
  writePpm(zero, side, () => [0, 0, 0]);
  const gradient = `${dir}/gradient.ppm`;
  writePpm(gradient, side, (x, y) => [
    Math.floor((255 * x) / Math.max(1, side - 1)),
    Math.floor((255 * y) / Math.max(1, side - 1)),
    128,
  ]);
  const noise = `${dir}/noise.ppm`;
  const rng = mulberry32(0xfeedbeef);
  const noiseBytes: number[][] = [];
  for (let y = 0; y < side; y++) {
    const row: number[] = [];
    for (let x = 0; x < side; x++) row.push(Math.floor(rng() * 256));
    noiseBytes.push(row);
  }
  writePpm(noise, side, (x, y) => {
    const v = noiseBytes[y]![x]!;
    return [v, (v * 7 + 31) % 256, (v * 13 + 101) % 256];
  });
  return [zero, gradient, noise];
}

// ------------------------------------------------------------- engine

export const ENGINE = ['morphscope'];

export function runEngine(args: string[]): { status: number; stdout: string; stderr: string } {
  const run = spawnSync(ENGINE[0]!, args, { encoding: 'utf-8' });
  if (run.error) throw run.error;
  return { status: run.status ?? -1, stdout: run.stdout, stderr: run.stderr };
}

export function runCli(args: string[]): { status: number; stdout: string; stderr: string } {
  const cliPath = new URL('../dist/cli.js', import.meta.url).pathname;
  const run = spawnSync('node', [cliPath, ...args], { encoding: 'utf-8' });
  if (run.error) throw run.error;
  return { status: run.status ?? -1, stdout: run.stdout, stderr: run.stderr };
}

export function sha256(path: string): string {
  return createHash('sha256').update(readFileSync(path)).digest('hex');
}
