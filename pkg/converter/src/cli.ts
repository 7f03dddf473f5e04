#!/usr/bin/env node
/**
 * msw-convert: turn public ViT checkpoint archives into MSW1 weight files
 * and verify numerical parity through the engine CLI.
 *
 * Usage:
 *   msw-convert convert --checkpoint model.npz --map maps/jax-npz.json --out vit.msw
 *   msw-convert verify-parity --weights vit.msw --reference ref.msf \
 *       --image a.ppm --image b.ppm --report parity.json
 *
 * Exit codes: 0 success (and parity PASS), 1 usage error, 2 data/format
 * error, 3 parity FAIL.
 */

import { readFileSync, writeFileSync } from 'node:fs';
import { exitCodeFor, FormatError, UsageError } from './errors.js';
import { convertCheckpoint, openCheckpoint } from './convert.js';
import { DEFAULT_GEOMETRY, validateGeometry, type Geometry } from './msw.js';
import { loadNameMap } from './namemap.js';
import { verifyParity, PARITY_THRESHOLD } from './parity.js';

const HELP = `msw-convert: convert public ViT checkpoints to MSW1 weight files

Subcommands:
  convert        --checkpoint <file.npz|file.safetensors> --map <map.json>
                 --out <file.msw> [--geometry <geometry.json>]
  verify-parity  --weights <file.msw> --reference <ref.msf>
                 --image <img> [--image <img> ...] --report <report.json>
                 [--engine "<command>"] [--extract-arg <arg> ...]
                 [--threshold <float>]

The geometry JSON may override any of: image_side, patch_side, hidden_dim,
depth, heads, mlp_dim, positional_mode, final_layer_norm. The default is the
384-input model with 32-pixel patches, width 1024, 24 blocks, 16 heads.

verify-parity runs the engine's extract subcommand (default engine command:
"morphscope") on the sample images with the given weights and compares each
feature vector against the reference file; PASS means every image stays
within the threshold (default ${PARITY_THRESHOLD}).`;

interface Parsed {
  command: string;
  single: Map<string, string>;
  multi: Map<string, string[]>;
}

const MULTI_FLAGS = new Set(['--image', '--extract-arg']);

function parseArgv(argv: string[]): Parsed {
  const command = argv[0] ?? '';
  const single = new Map<string, string>();
  const multi = new Map<string, string[]>();
  for (let i = 1; i < argv.length; i++) {
    const flag = argv[i]!;
    if (!flag.startsWith('--')) {
      throw new UsageError(`unexpected positional argument ${flag}`);
    }
    if (flag === '--help') {
      single.set(flag, '');
      continue;
    }
    const value = argv[++i];
    if (value === undefined) {
      throw new UsageError(`flag ${flag} needs a value`);
    }
    if (MULTI_FLAGS.has(flag)) {
      const list = multi.get(flag) ?? [];
      list.push(value);
      multi.set(flag, list);
    } else {
      if (single.has(flag)) {
        throw new UsageError(`flag ${flag} given twice`);
      }
      single.set(flag, value);
    }
  }
  return { command, single, multi };
}

function required(parsed: Parsed, flag: string): string {
  const value = parsed.single.get(flag);
  if (value === undefined) {
    throw new UsageError(`${parsed.command}: missing required flag ${flag}`);
  }
  return value;
}

function loadGeometry(path: string | undefined): Geometry {
  if (path === undefined) return { ...DEFAULT_GEOMETRY };
  let overrides: Partial<Geometry>;
  try {
    overrides = JSON.parse(readFileSync(path, 'utf-8'));
  } catch (err) {
    throw new FormatError(`${path}: not valid JSON (${String(err)})`);
  }
  const known = new Set(Object.keys(DEFAULT_GEOMETRY));
  for (const key of Object.keys(overrides)) {
    if (!known.has(key)) {
      throw new FormatError(`${path}: unknown geometry field ${key}`);
    }
  }
  const geometry = { ...DEFAULT_GEOMETRY, ...overrides };
  validateGeometry(geometry);
  return geometry;
}

function cmdConvert(parsed: Parsed): number {
  const checkpointPath = required(parsed, '--checkpoint');
  const mapPath = required(parsed, '--map');
  const outPath = required(parsed, '--out');
  const geometry = loadGeometry(parsed.single.get('--geometry'));

  const map = loadNameMap(mapPath);
  const checkpoint = openCheckpoint(checkpointPath);
  const result = convertCheckpoint(checkpoint, map, geometry, outPath);
  console.log(
    `converted ${result.tensorCount} tensors (${result.parameterCount} parameters) -> ${outPath}`,
  );
  return 0;
}

function cmdVerifyParity(parsed: Parsed): number {
  const weightsPath = required(parsed, '--weights');
  const referencePath = required(parsed, '--reference');
  const reportPath = required(parsed, '--report');
  const imagePaths = parsed.multi.get('--image') ?? [];
  if (imagePaths.length === 0) {
    throw new UsageError('verify-parity: at least one --image is required');
  }
  const engineText = parsed.single.get('--engine') ?? 'morphscope';
  const engine = engineText.split(/\s+/).filter((part) => part.length > 0);
  if (engine.length === 0) {
    throw new UsageError('verify-parity: --engine must not be empty');
  }
  const thresholdText = parsed.single.get('--threshold');
  const threshold = thresholdText === undefined ? undefined : Number.parseFloat(thresholdText);
  if (threshold !== undefined && !(Number.isFinite(threshold) && threshold >= 0)) {
    throw new UsageError(`verify-parity: bad threshold ${thresholdText}`);
  }

  const report = verifyParity({
    weightsPath,
    referencePath,
    imagePaths,
    engine,
    extractArgs: parsed.multi.get('--extract-arg'),
    threshold,
  });
  writeFileSync(reportPath, JSON.stringify(report, null, 2) + '\n');
  console.log(
    `parity ${report.pass ? 'PASS' : 'FAIL'}: max |delta| = ${report.max_abs_delta} ` +
      `over ${report.images.length} image${report.images.length === 1 ? '' : 's'} ` +
      `(threshold ${report.threshold}) -> ${reportPath}`,
  );
  return report.pass ? 0 : 3;
}

export function main(argv: string[]): number {
  let parsed: Parsed;
  try {
    parsed = parseArgv(argv);
    if (parsed.command === '' || parsed.command === '--help' || parsed.single.has('--help')) {
      console.log(HELP);
      return parsed.command === '' && argv.length === 0 ? 1 : 0;
    }
    switch (parsed.command) {
      case 'convert':
        return cmdConvert(parsed);
      case 'verify-parity':
        return cmdVerifyParity(parsed);
      default:
        throw new UsageError(`unknown subcommand ${parsed.command}`);
    }
  } catch (err) {
    if (err instanceof UsageError) {
      console.error(`error: ${err.message}`);
      console.error('run with --help for usage');
      return 1;
    }
    if (err instanceof Error) {
      console.error(`error: ${err.message}`);
      return exitCodeFor(err);
    }
    console.error(`error: ${String(err)}`);
    return 2;
  }
}

process.exit(main(process.argv.slice(2)));
