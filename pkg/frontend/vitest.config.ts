import { defineConfig } from 'vitest/config';

export default defineConfig({
    test: {
        include: ['test/**/*.test.ts'],
        globalSetup: ['test/setup/global.ts'],
        environment: 'node',
        testTimeout: 120_000,
        // the inference service and the tests share one CPU
        fileParallelism: false,
    },
});
