// Single-page wiring: tabs, fetch-and-render, event delegation. Every state
// change round-trips through the service; the UI never mutates trace data.

import { ApiClient, ApiError } from './api.js';
import type { Cell, Page, ReplayPlan, TraceSummary } from './types.js';
import {
  filterInvocations,
  renderError,
  renderPlanTimeline,
  renderQueryHistory,
  renderQueryResult,
  renderRetroReport,
  renderSession,
  renderSummary,
  renderTraceBrowser,
} from './views.js';

const params = new URLSearchParams(window.location.search);
const api = new ApiClient(params.get('api') ?? '');

interface UiState {
  summary: TraceSummary | null;
  invocations: Page | null;
  offset: number;
  filters: { reqId: string; handler: string };
  expandedTxn: number | null;
  eventsByTxn: Map<number, { table: string; columns: string[]; rows: Cell[][] }[]>;
  queryHistory: string[];
  sessionId: string | null;
  plan: ReplayPlan | null;
}

const state: UiState = {
  summary: null,
  invocations: null,
  offset: 0,
  filters: { reqId: '', handler: '' },
  expandedTxn: null,
  eventsByTxn: new Map(),
  queryHistory: [],
  sessionId: null,
  plan: null,
};

const $ = (id: string) => document.getElementById(id) as HTMLElement;

function banner(message: string | null) {
  $('banner').innerHTML = message ? renderError(message) : '';
}

async function guarded<T>(work: () => Promise<T>): Promise<T | null> {
  try {
    const result = await work();
    banner(null);
    return result;
  } catch (e) {
    banner(e instanceof ApiError ? `${e.status || 'network'}: ${e.message}`
                                 : String(e));
    return null;
  }
}

// --- trace tab -------------------------------------------------------------

async function loadTrace() {
  await guarded(async () => {
    state.summary = await api.summary();
    state.invocations = await api.invocations(500, state.offset);
    state.eventsByTxn = new Map();
    for (const table of state.summary.eventTables) {
      const page = await api.events(table);
      const txnIdx = page.columns.indexOf('TxnId');
      for (const row of page.rows) {
        const txn = row[txnIdx] as number;
        let groups = state.eventsByTxn.get(txn);
        if (!groups) {
          groups = [];
          state.eventsByTxn.set(txn, groups);
        }
        let group = groups.find((g) => g.table === table);
        if (!group) {
          group = { table, columns: page.columns, rows: [] };
          groups.push(group);
        }
        group.rows.push(row);
      }
    }
    renderTrace();
    populateSelectors();
  });
}

function renderTrace() {
  if (!state.summary || !state.invocations) return;
  $('summary').innerHTML = renderSummary(state.summary);
  $('trace-table').innerHTML = renderTraceBrowser(
    state.invocations, state.filters, state.expandedTxn, state.eventsByTxn);
  for (const el of document.querySelectorAll('#trace-table .inv-row')) {
    el.addEventListener('click', () => {
      const txn = Number((el as HTMLElement).dataset.txn);
      state.expandedTxn = state.expandedTxn === txn ? null : txn;
      renderTrace();
    });
  }
}

function populateSelectors() {
  if (!state.summary) return;
  const options = state.summary.requests
    .map((r) => `<option value="${r.reqId}">${r.reqId} (${r.handler})</option>`)
    .join('');
  ($('replay-req') as HTMLSelectElement).innerHTML = options;
  ($('retro-snapshot') as HTMLSelectElement).innerHTML = options;
  $('retro-requests').innerHTML = state.summary.requests.map((r) =>
    `<label><input type="checkbox" value="${r.reqId}" checked> ${r.reqId}</label>`,
  ).join('');
}

// --- query tab ----------------------------------------------------------------

async function runQuery() {
  const sql = ($('query-input') as HTMLTextAreaElement).value.trim();
  if (!sql) return;
  const result = await guarded(() => api.query(sql));
  if (!result) return;
  if (!state.queryHistory.includes(sql)) {
    state.queryHistory.unshift(sql);
    state.queryHistory = state.queryHistory.slice(0, 20);
  }
  $('query-result').innerHTML = renderQueryResult(result.columns, result.rows);
  $('query-history').innerHTML = renderQueryHistory(state.queryHistory);
  for (const link of document.querySelectorAll('#query-history a')) {
    link.addEventListener('click', (ev) => {
      ev.preventDefault();
      const i = Number((link as HTMLElement).dataset.history);
      ($('query-input') as HTMLTextAreaElement).value = state.queryHistory[i];
    });
  }
}

// --- replay tab ------------------------------------------------------------------

async function refreshSession() {
  if (!state.sessionId || !state.plan) return;
  const snapshot = await guarded(() => api.replayState(state.sessionId!));
  if (snapshot) {
    $('replay-view').innerHTML = renderSession(state.plan, snapshot);
    const stepBtn = $('replay-step') as HTMLButtonElement;
    stepBtn.disabled = snapshot.status !== 'AtBreakpoint';
    ($('replay-run') as HTMLButtonElement).disabled =
      snapshot.status !== 'AtBreakpoint';
  }
}

async function startReplay() {
  const reqId = ($('replay-req') as HTMLSelectElement).value;
  const mode = ($('replay-mode') as HTMLSelectElement).value;
  const fullRestore = ($('replay-full') as HTMLInputElement).checked;
  const started = await guarded(() =>
    api.replayStart(reqId, { mode, fullRestore }));
  if (!started) return;
  state.sessionId = started.sessionId;
  state.plan = started.plan;
  $('replay-view').innerHTML = renderPlanTimeline(started.plan, null);
  await refreshSession();
}

async function stepReplay() {
  if (!state.sessionId) return;
  const stepped = await guarded(() => api.replayStep(state.sessionId!));
  if (stepped) await refreshSession();
}

async function runReplayToEnd() {
  if (!state.sessionId) return;
  for (;;) {
    const snapshot = await api.replayState(state.sessionId).catch(() => null);
    if (!snapshot || snapshot.status !== 'AtBreakpoint') break;
    const ok = await guarded(() => api.replayStep(state.sessionId!));
    if (!ok) break;
  }
  await refreshSession();
}

async function inspectReplay() {
  if (!state.sessionId) return;
  const sql = ($('inspect-input') as HTMLInputElement).value.trim();
  if (!sql) return;
  const result = await guarded(() => api.replayInspect(state.sessionId!, sql));
  if (result) {
    $('inspect-result').innerHTML = renderQueryResult(result.columns, result.rows);
  }
}

// --- retro tab ----------------------------------------------------------------------

async function runRetro() {
  const snapshotBefore = ($('retro-snapshot') as HTMLSelectElement).value;
  const requests = Array.from(
    document.querySelectorAll('#retro-requests input:checked'),
  ).map((el) => (el as HTMLInputElement).value);
  const codeVersion = ($('retro-version') as HTMLInputElement).value.trim();
  const afterText = ($('retro-after') as HTMLInputElement).value.trim();
  const after: Record<string, string[]> = {};
  for (const spec of afterText.split(';')) {
    const [rid, deps] = spec.split('=');
    if (rid && deps) after[rid.trim()] = deps.split(',').map((d) => d.trim());
  }
  const prune = ($('retro-prune') as HTMLInputElement).checked;
  const maxSchedules = Number(($('retro-max') as HTMLInputElement).value) || 1000;
  const report = await guarded(() => api.retro({
    snapshotBefore,
    requests,
    after,
    codeVersion: codeVersion || undefined,
    policy: { prune, maxSchedules },
  }));
  if (report) {
    $('retro-view').innerHTML = renderRetroReport(report);
  }
}

// --- wiring ------------------------------------------------------------------------

function switchTab(name: string) {
  for (const el of document.querySelectorAll('.tab')) {
    el.classList.toggle('active', (el as HTMLElement).dataset.tab === name);
  }
  for (const el of document.querySelectorAll('.panel')) {
    el.classList.toggle('hidden', el.id !== `panel-${name}`);
  }
}

export function boot() {
  for (const el of document.querySelectorAll('.tab')) {
    el.addEventListener('click', () => switchTab((el as HTMLElement).dataset.tab!));
  }
  $('trace-reload').addEventListener('click', () => void loadTrace());
  $('filter-req').addEventListener('input', (ev) => {
    state.filters.reqId = (ev.target as HTMLInputElement).value.trim();
    renderTrace();
  });
  $('filter-handler').addEventListener('input', (ev) => {
    state.filters.handler = (ev.target as HTMLInputElement).value.trim();
    renderTrace();
  });
  $('query-run').addEventListener('click', () => void runQuery());
  $('replay-start').addEventListener('click', () => void startReplay());
  $('replay-step').addEventListener('click', () => void stepReplay());
  $('replay-run').addEventListener('click', () => void runReplayToEnd());
  $('inspect-run').addEventListener('click', () => void inspectReplay());
  $('retro-run').addEventListener('click', () => void runRetro());
  switchTab('trace');
  void loadTrace();
}

if (typeof document !== 'undefined' && document.getElementById('banner')) {
  boot();
}

export { filterInvocations };
