import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // the integration suite drives real servo sessions over HTTP
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
