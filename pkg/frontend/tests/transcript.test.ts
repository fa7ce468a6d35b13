// Replays the recorded API transcript against a live service process and
// requires identical responses. This pins the UI's one and only data source
// to the engine's actual behavior.

import { spawn, ChildProcess } from 'node:child_process';
import { fileURLToPath } from 'node:url';
import path from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import transcript from '../fixtures/transcript.json';
import { ApiClient } from '../src/api.js';

const HERE = path.dirname(fileURLToPath(import.meta.url));
const TRACE_DIR = path.join(HERE, '..', 'fixtures', 'trace');
const PORT = 38000 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
const api = new ApiClient(BASE);

async function waitForReady(timeoutMs = 20000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const res = await fetch(`${BASE}/apps`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error('service did not come up');
    await new Promise((r) => setTimeout(r, 150));
  }
}

beforeAll(async () => {
  server = spawn('python3', [
    '-m', 'trod.cli',
    '--data-dir', TRACE_DIR,
    'serve', '--port', String(PORT),
  ], { stdio: ['ignore', 'pipe', 'pipe'] });
  server.stderr?.on('data', (chunk) => {
    process.stderr.write(`[serve] ${chunk}`);
  });
  await waitForReady();
}, 30000);

afterAll(() => {
  server?.kill();
});

describe('recorded transcript', () => {
  for (const entry of transcript as any[]) {
    it(`${entry.name}: ${entry.method} ${entry.path}`, async () => {
      const response = await api.request<unknown>(
        entry.method, entry.path, entry.body);
      expect(response).toEqual(entry.response);
    });
  }
});

describe('acceptance markers in the replayed responses', () => {
  it('trace browser data carries the five demo transactions', () => {
    const inv = (transcript as any[]).find((e) => e.name === 'invocations');
    expect(inv.response.rows).toHaveLength(5);
    const handlers = inv.response.rows.map((r: unknown[]) => r[2]);
    expect(handlers).toEqual(['subscribeUser', 'subscribeUser', 'subscribeUser',
      'subscribeUser', 'fetchSubscribers']);
  });

  it('replay step 2 injects from R2', () => {
    const step = (transcript as any[]).find((e) => e.name === 'replay-step-2');
    const sources = step.response.report.injected.map(
      (w: { sourceReqId: string }) => w.sourceReqId);
    expect(sources).toEqual(['R2']);
  });

  it('retro on the fixed code yields 2 schedules and 1 class', () => {
    const retro = (transcript as any[]).find((e) => e.name === 'retro-v2');
    expect(retro.response.scheduleCount).toBe(2);
    expect(retro.response.classes).toHaveLength(1);
  });
});
