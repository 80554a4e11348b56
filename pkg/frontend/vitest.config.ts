import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    testTimeout: 300_000,
    hookTimeout: 300_000,
    // The e2e test owns a single service process; keep files sequential.
    fileParallelism: false,
  },
});
