/** Error taxonomy shared by the converter CLI and library. */

/** Bad command line or unusable argument values. Exit code 1. */
export class UsageError extends Error {
  override name = 'UsageError';
}

/** A checkpoint, map, or weight file violates its format. Exit code 2. */
export class FormatError extends Error {
  override name = 'FormatError';
}

/** A name map does not cover the schema, or references missing tensors. Exit code 2. */
export class MapError extends Error {
  override name = 'MapError';
}

/** A mapped tensor cannot be transformed into its canonical shape. Exit code 2. */
export class ConversionError extends Error {
  override name = 'ConversionError';
}

export function exitCodeFor(err: unknown): number {
  if (err instanceof UsageError) return 1;
  if (err instanceof FormatError || err instanceof MapError || err instanceof ConversionError) {
    return 2;
  }
  return 2;
}
