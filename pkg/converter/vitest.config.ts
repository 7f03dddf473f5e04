import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    include: ['test/**/*.test.ts'],
    // The parity integration test drives full-size (305M parameter)
    // checkpoints through the conversion pipeline and the engine CLI.
    testTimeout: 600_000,
    hookTimeout: 600_000,
    // Checkpoint fixtures are gigabytes; one file at a time keeps peak
    // disk and memory bounded.
    fileParallelism: false,
  },
});
