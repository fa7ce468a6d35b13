// Thin typed client over the debugging service. The UI holds no authoritative
// state: everything renders from these responses.

import type {
  AppInfo,
  Page,
  ReplayStart,
  ResultSet,
  RetroReport,
  RetroRequestConfig,
  SessionState,
  StepResponse,
  TraceSummary,
} from './types.js';

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(public baseUrl: string = '') {}

  async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: {} };
    if (body !== undefined) {
      init.headers = { 'content-type': 'application/json' };
      init.body = JSON.stringify(body);
    }
    let res: Response;
    try {
      res = await fetch(this.baseUrl + path, init);
    } catch (e) {
      throw new ApiError(0, `service unreachable: ${(e as Error).message}`);
    }
    const text = await res.text();
    const payload = text ? JSON.parse(text) : null;
    if (!res.ok) {
      const message = payload && payload.error ? payload.error : res.statusText;
      throw new ApiError(res.status, message);
    }
    return payload as T;
  }

  summary(): Promise<TraceSummary> {
    return this.request('GET', '/traces/summary');
  }

  invocations(limit = 500, offset = 0): Promise<Page> {
    return this.request('GET', `/traces/invocations?limit=${limit}&offset=${offset}`);
  }

  events(table: string, limit = 500, offset = 0): Promise<Page> {
    return this.request('GET',
      `/traces/events/${encodeURIComponent(table)}?limit=${limit}&offset=${offset}`);
  }

  query(sql: string): Promise<ResultSet> {
    return this.request('POST', '/query', { sql });
  }

  replayStart(reqId: string, opts?: { mode?: string; fullRestore?: boolean }):
      Promise<ReplayStart> {
    return this.request('POST', '/replay', { reqId, opts: opts ?? {} });
  }

  replayStep(sessionId: string): Promise<StepResponse> {
    return this.request('POST', `/replay/${sessionId}/step`);
  }

  replayState(sessionId: string): Promise<SessionState> {
    return this.request('GET', `/replay/${sessionId}/state`);
  }

  replayInspect(sessionId: string, sql: string): Promise<ResultSet> {
    return this.request('POST', `/replay/${sessionId}/inspect`, { sql });
  }

  retro(config: RetroRequestConfig): Promise<RetroReport> {
    return this.request('POST', '/retro', config);
  }

  apps(): Promise<AppInfo[]> {
    return this.request('GET', '/apps');
  }
}
