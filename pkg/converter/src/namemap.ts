/**
 * Name maps: data files describing how one public checkpoint layout maps
 * onto the canonical tensor schema.
 *
 * A map is JSON:
 *
 *     {
 *       "name": "...",
 *       "description": "...",
 *       "rules": [
 *         { "canonical": "blocks.{L}.attn.q.weight",
 *           "source": "blocks.{L}.attn.qkv.weight",
 *           "ops": ["transpose", { "slice_last": [0, "hidden"] }] }
 *       ]
 *     }
 *
 * "{L}" in canonical and source names expands to every layer index. Ops
 * apply in order; dimension operands are integers or named sizes
 * ("hidden", "mlp_dim", "patch_dim", "seq_len", "head_dim", ...) with an
 * optional integer scale, e.g. "hidden*2".
 */

import { readFileSync } from 'node:fs';
import { FormatError, MapError } from './errors.js';
import { dimensions, schema, type Geometry } from './msw.js';
import { permute, reshape, sliceLast, transpose, type Tensor } from './ops.js';

export type RawOp =
  | 'transpose'
  | { permute: number[] }
  | { reshape: Array<number | string> }
  | { slice_last: [number | string, number | string] };

export interface MapRule {
  canonical: string;
  source: string;
  ops?: RawOp[];
}

export interface NameMap {
  name: string;
  description?: string;
  rules: MapRule[];
}

export function loadNameMap(path: string): NameMap {
  let parsed: unknown;
  try {
    parsed = JSON.parse(readFileSync(path, 'utf-8'));
  } catch (err) {
    throw new FormatError(`${path}: not valid JSON (${String(err)})`);
  }
  const map = parsed as NameMap;
  if (typeof map.name !== 'string' || !Array.isArray(map.rules)) {
    throw new FormatError(`${path}: a name map needs a "name" and a "rules" array`);
  }
  for (const rule of map.rules) {
    if (typeof rule.canonical !== 'string' || typeof rule.source !== 'string') {
      throw new FormatError(`${path}: every rule needs "canonical" and "source" strings`);
    }
  }
  return map;
}

/** Resolve a dimension operand ("hidden", "hidden*3", 64) against a geometry. */
export function resolveDim(expr: number | string, dims: Record<string, number>): number {
  if (typeof expr === 'number') {
    if (!Number.isInteger(expr) || expr < 0) {
      throw new FormatError(`dimension ${expr} must be a non-negative integer`);
    }
    return expr;
  }
  const text = expr.trim();
  if (/^\d+$/.test(text)) return Number.parseInt(text, 10);
  const match = /^(\w+)(?:\s*\*\s*(\d+))?$/.exec(text) ?? /^(\d+)\s*\*\s*(\w+)$/.exec(text);
  if (match) {
    const [a, b] = [match[1]!, match[2]];
    const name = /^\d+$/.test(a) ? b! : a;
    const scaleText = /^\d+$/.test(a) ? a : b;
    const base = dims[name];
    if (base === undefined) {
      throw new FormatError(`unknown dimension name ${name!} (have: ${Object.keys(dims).join(', ')})`);
    }
    return base * (scaleText ? Number.parseInt(scaleText, 10) : 1);
  }
  throw new FormatError(`cannot parse dimension expression ${JSON.stringify(expr)}`);
}

/** Apply one rule's op list to a source tensor. */
export function applyOps(t: Tensor, ops: RawOp[] | undefined, dims: Record<string, number>): Tensor {
  let out = t;
  for (const op of ops ?? []) {
    if (op === 'transpose') {
      out = transpose(out);
    } else if ('permute' in op) {
      out = permute(out, op.permute);
    } else if ('reshape' in op) {
      out = reshape(out, op.reshape.map((d) => resolveDim(d, dims)));
    } else if ('slice_last' in op) {
      out = sliceLast(out, resolveDim(op.slice_last[0], dims), resolveDim(op.slice_last[1], dims));
    } else {
      throw new FormatError(`unknown op ${JSON.stringify(op)}`);
    }
  }
  return out;
}

export interface ExpandedRule {
  canonical: string;
  source: string;
  ops?: RawOp[];
}

/**
 * Expand "{L}" templates over the geometry's depth and check that the
 * result covers the canonical schema exactly once per tensor.
 */
export function expandRules(map: NameMap, geometry: Geometry): Map<string, ExpandedRule> {
  const expanded = new Map<string, ExpandedRule>();
  const addRule = (rule: ExpandedRule) => {
    const existing = expanded.get(rule.canonical);
    if (existing) {
      throw new MapError(
        `map ${map.name}: canonical tensor ${rule.canonical} is mapped twice ` +
          `(from ${existing.source} and ${rule.source})`,
      );
    }
    expanded.set(rule.canonical, rule);
  };
  for (const rule of map.rules) {
    if (rule.canonical.includes('{L}') || rule.source.includes('{L}')) {
      for (let layer = 0; layer < geometry.depth; layer++) {
        addRule({
          canonical: rule.canonical.replaceAll('{L}', String(layer)),
          source: rule.source.replaceAll('{L}', String(layer)),
          ops: rule.ops,
        });
      }
    } else {
      addRule({ ...rule });
    }
  }

  const want = schema(geometry);
  const missing = want.filter((e) => !expanded.has(e.name)).map((e) => e.name);
  if (missing.length > 0) {
    throw new MapError(
      `map ${map.name}: no rule for canonical tensor${missing.length > 1 ? 's' : ''} ` +
        missing.join(', '),
    );
  }
  const wantNames = new Set(want.map((e) => e.name));
  const extra = [...expanded.keys()].filter((name) => !wantNames.has(name));
  if (extra.length > 0) {
    throw new MapError(
      `map ${map.name}: rules target unknown canonical tensor${extra.length > 1 ? 's' : ''} ` +
        extra.join(', '),
    );
  }
  return expanded;
}
