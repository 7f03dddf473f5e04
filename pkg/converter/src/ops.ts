/**
 * Dense-tensor transform verbs used by name-map rules.
 *
 * A tensor is a flat little-endian float32 buffer plus a row-major shape.
 * Every verb returns a fresh tensor; inputs are never mutated.
 */

import { ConversionError } from './errors.js';

export interface Tensor {
  shape: number[];
  data: Float32Array;
}

export function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

function checkSize(t: Tensor, where: string): void {
  if (t.data.length !== elementCount(t.shape)) {
    throw new ConversionError(
      `${where}: buffer holds ${t.data.length} values but shape [${t.shape}] needs ${elementCount(t.shape)}`,
    );
  }
}

/** Row-major reinterpretation with a new shape; the data is shared layout-wise but copied. */
export function reshape(t: Tensor, shape: number[]): Tensor {
  checkSize(t, 'reshape');
  if (elementCount(shape) !== t.data.length) {
    throw new ConversionError(
      `reshape: cannot view ${t.data.length} values (shape [${t.shape}]) as [${shape}]`,
    );
  }
  return { shape: [...shape], data: t.data.slice() };
}

/** General axis permutation: output axis i is input axis order[i]. */
export function permute(t: Tensor, order: number[]): Tensor {
  checkSize(t, 'permute');
  const rank = t.shape.length;
  if (order.length !== rank || [...order].sort((a, b) => a - b).some((v, i) => v !== i)) {
    throw new ConversionError(
      `permute: order [${order}] is not a permutation of axes for shape [${t.shape}]`,
    );
  }
  const outShape = order.map((ax) => t.shape[ax]!);
  const inStrides = new Array<number>(rank);
  let acc = 1;
  for (let i = rank - 1; i >= 0; i--) {
    inStrides[i] = acc;
    acc *= t.shape[i]!;
  }
  const outStrides = order.map((ax) => inStrides[ax]!);
  const out = new Float32Array(t.data.length);
  const idx = new Array<number>(rank).fill(0);
  for (let o = 0; o < out.length; o++) {
    let src = 0;
    for (let i = 0; i < rank; i++) src += idx[i]! * outStrides[i]!;
    out[o] = t.data[src]!;
    for (let i = rank - 1; i >= 0; i--) {
      idx[i]!++;
      if (idx[i]! < outShape[i]!) break;
      idx[i] = 0;
    }
  }
  return { shape: outShape, data: out };
}

/** 2-D transpose, a common special case worth the name. */
export function transpose(t: Tensor): Tensor {
  if (t.shape.length !== 2) {
    throw new ConversionError(`transpose: expected a 2-D tensor, got shape [${t.shape}]`);
  }
  return permute(t, [1, 0]);
}

/** Slice [start, end) along the last axis. */
export function sliceLast(t: Tensor, start: number, end: number): Tensor {
  checkSize(t, 'slice');
  const rank = t.shape.length;
  const last = t.shape[rank - 1]!;
  if (!(0 <= start && start < end && end <= last)) {
    throw new ConversionError(
      `slice: range [${start}, ${end}) is invalid for last axis of length ${last}`,
    );
  }
  const width = end - start;
  const rows = t.data.length / last;
  const out = new Float32Array(rows * width);
  for (let r = 0; r < rows; r++) {
    out.set(t.data.subarray(r * last + start, r * last + end), r * width);
  }
  const shape = [...t.shape];
  shape[rank - 1] = width;
  return { shape, data: out };
}

/** Concatenate along the last axis; the exact inverse of adjacent sliceLast calls. */
export function concatLast(parts: Tensor[]): Tensor {
  if (parts.length === 0) throw new ConversionError('concat: no tensors given');
  const first = parts[0]!;
  const rank = first.shape.length;
  const lead = first.shape.slice(0, rank - 1);
  let lastTotal = 0;
  for (const p of parts) {
    checkSize(p, 'concat');
    if (p.shape.length !== rank || p.shape.slice(0, rank - 1).some((d, i) => d !== lead[i])) {
      throw new ConversionError(
        `concat: shape [${p.shape}] does not share leading axes with [${first.shape}]`,
      );
    }
    lastTotal += p.shape[rank - 1]!;
  }
  const rows = elementCount(lead);
  const out = new Float32Array(rows * lastTotal);
  let col = 0;
  for (const p of parts) {
    const width = p.shape[rank - 1]!;
    for (let r = 0; r < rows; r++) {
      out.set(p.data.subarray(r * width, (r + 1) * width), r * lastTotal + col);
    }
    col += width;
  }
  return { shape: [...lead, lastTotal], data: out };
}
