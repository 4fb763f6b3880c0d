import { defineConfig } from "vitest/config";

export default defineConfig({
  server: {
    proxy: {
      // dev mode talks to a locally running `dualarb serve`
      "/api": "http://127.0.0.1:8000",
    },
  },
  build: { outDir: "dist" },
  test: {
    environment: "node",
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
