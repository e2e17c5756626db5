import { defineConfig } from "vitest/config";

// The integration suite scaffolds a case and boots the registration server,
// so the stock 5 s timeouts are far too tight.
export default defineConfig({
  test: {
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
