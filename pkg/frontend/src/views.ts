// Pure HTML renderers: payload in, markup out. All interactivity is wired in
// main.ts via data- attributes, so every view is testable as a string.

import type {
  Cell,
  Page,
  ReplayPlan,
  RetroOutcome,
  RetroReport,
  SessionState,
  SlotReport,
  TraceSummary,
} from './types.js';

export function escapeHtml(value: unknown): string {
  return String(value)
    .replaceAll('&', '&amp;')
    .replaceAll('<', '&lt;')
    .replaceAll('>', '&gt;')
    .replaceAll('"', '&quot;');
}

export function renderCell(value: Cell): string {
  if (value === null) return '<span class="null">null</span>';
  if (typeof value === 'boolean') return value ? 'true' : 'false';
  return escapeHtml(value);
}

export function renderTable(columns: string[], rows: Cell[][],
                            rowAttrs?: (row: Cell[], i: number) => string): string {
  const head = columns.map((c) => `<th>${escapeHtml(c)}</th>`).join('');
  const body = rows.map((row, i) => {
    const attrs = rowAttrs ? ' ' + rowAttrs(row, i) : '';
    const cells = row.map((v) => `<td>${renderCell(v)}</td>`).join('');
    return `<tr${attrs}>${cells}</tr>`;
  }).join('');
  return `<table><thead><tr>${head}</tr></thead><tbody>${body}</tbody></table>`;
}

// --- trace browser ---------------------------------------------------------

export interface TraceFilters {
  reqId: string;
  handler: string;
}

export function filterInvocations(page: Page, filters: TraceFilters): Cell[][] {
  const reqIdx = page.columns.indexOf('ReqId');
  const handlerIdx = page.columns.indexOf('HandlerName');
  return page.rows.filter((row) =>
    (!filters.reqId || row[reqIdx] === filters.reqId) &&
    (!filters.handler || row[handlerIdx] === filters.handler));
}

export function renderTraceBrowser(page: Page, filters: TraceFilters,
                                   expandedTxn: number | null,
                                   eventsByTxn: Map<number, { table: string;
                                     columns: string[]; rows: Cell[][] }[]>): string {
  const rows = filterInvocations(page, filters);
  if (rows.length === 0) {
    return '<p class="empty">No transactions match.</p>';
  }
  const head = page.columns.map((c) => `<th>${escapeHtml(c)}</th>`).join('');
  const body = rows.map((row) => {
    const txnId = row[0] as number;
    const cells = row.map((v) => `<td>${renderCell(v)}</td>`).join('');
    let html = `<tr class="inv-row" data-txn="${txnId}">${cells}</tr>`;
    if (expandedTxn === txnId) {
      const groups = eventsByTxn.get(txnId) ?? [];
      const inner = groups.length
        ? groups.map((g) =>
            `<h4>${escapeHtml(g.table)}</h4>` + renderTable(g.columns, g.rows)).join('')
        : '<p class="empty">No data events for this transaction.</p>';
      html += `<tr class="events-row"><td colspan="${row.length}">${inner}</td></tr>`;
    }
    return html;
  }).join('');
  return `<table><thead><tr>${head}</tr></thead><tbody>${body}</tbody></table>` +
    `<p class="page-note">${rows.length} of ${page.total} transaction(s)</p>`;
}

export function renderSummary(summary: TraceSummary): string {
  const reqs = summary.requests.map((r) => {
    const badge = r.status === 'Ok'
      ? '<span class="badge ok">Ok</span>'
      : `<span class="badge error">${escapeHtml(r.message)}</span>`;
    return `<li><code>${escapeHtml(r.reqId)}</code> ${escapeHtml(r.handler)} ${badge}</li>`;
  }).join('');
  return `<p><strong>${escapeHtml(summary.app)}</strong> @ ` +
    `${escapeHtml(summary.codeVersion)} — ${summary.transactions} transaction(s)</p>` +
    `<ul class="requests">${reqs}</ul>`;
}

// --- query console -----------------------------------------------------------

export function renderQueryResult(columns: string[], rows: Cell[][]): string {
  if (rows.length === 0) {
    return '<p class="empty">Empty result.</p>';
  }
  return renderTable(columns, rows) + `<p class="page-note">${rows.length} row(s)</p>`;
}

export function renderQueryHistory(history: string[]): string {
  return history.map((q, i) =>
    `<li><a href="#" data-history="${i}"><code>${escapeHtml(q)}</code></a></li>`).join('');
}

// --- replay panel --------------------------------------------------------------

export function injectedBadge(sourceReqId: string, forced: boolean): string {
  const cls = forced ? 'badge injected forced' : 'badge injected';
  const note = forced ? ' (forced)' : '';
  return `<span class="${cls}">injected from ${escapeHtml(sourceReqId)}${note}</span>`;
}

export function renderSlotReport(report: SlotReport): string {
  const injected = report.injected.map((w) =>
    `<li>${injectedBadge(w.sourceReqId, w.forced)} ` +
    `${escapeHtml(w.write.kind)} on <code>${escapeHtml(w.write.table)}</code> ` +
    `from TXN${w.sourceTxnId}</li>`).join('');
  const checks = report.diverged
    ? `<span class="badge diverged">diverged</span> ${escapeHtml(report.note)}`
    : '<span class="badge ok">digest ✓</span> ' +
      '<span class="badge ok">read set ✓</span> ' +
      '<span class="badge ok">writes ✓</span>';
  return `<div class="slot-report" data-slot="${report.slot}">` +
    `<h4>slot ${report.slot} · TXN${report.txnId}</h4>` +
    (injected ? `<ul class="injected">${injected}</ul>`
              : '<p class="empty">nothing injected</p>') +
    `<p>${checks}</p></div>`;
}

export function renderPlanTimeline(plan: ReplayPlan, state: SessionState | null): string {
  const done = state ? state.cursor : 0;
  const items = plan.slots.map((slot) => {
    const marker = slot.slot <= done ? '●' : slot.slot === done + 1 ? '▶' : '○';
    const deps = slot.dependencies.map((d) =>
      injectedBadge(d.sourceReqId, false)).join(' ');
    return `<li class="slot ${slot.slot <= done ? 'done' : ''}">` +
      `${marker} <strong>slot ${slot.slot}</strong> ` +
      `<code>${escapeHtml(slot.funcName)}</code> (TXN${slot.txnId})` +
      (deps ? `<div class="deps">${deps}</div>` : '') + '</li>';
  }).join('');
  const status = state
    ? `<p>status: <span class="status ${state.status.toLowerCase()}">` +
      `${escapeHtml(state.status)}</span>` +
      (state.finalNote ? ` — ${escapeHtml(state.finalNote)}` : '') + '</p>'
    : '';
  return `<p><code>${escapeHtml(plan.reqId)}</code> ${escapeHtml(plan.handler)} ` +
    `(${escapeHtml(plan.mode)} mode)</p><ol class="timeline">${items}</ol>${status}`;
}

export function renderSession(plan: ReplayPlan, state: SessionState): string {
  const reports = state.reports.map(renderSlotReport).join('');
  return renderPlanTimeline(plan, state) + reports;
}

// --- retro panel ------------------------------------------------------------------

function renderOutcome(outcome: RetroOutcome): string {
  const per = Object.entries(outcome.requests).map(([rid, o]) => {
    const badge = o.status === 'Ok'
      ? `<span class="badge ok">${escapeHtml(o.resultDisplay)}</span>`
      : `<span class="badge error">${escapeHtml(o.message)}</span>`;
    return `<li><code>${escapeHtml(rid)}</code> ${badge}</li>`;
  }).join('');
  return `<ul class="per-request">${per}</ul>` +
    `<p class="digest">state <code>${escapeHtml(outcome.finalStateDigest)}</code></p>`;
}

export function renderRetroReport(report: RetroReport): string {
  const truncated = report.truncated
    ? ' <span class="badge warn">truncated at the schedule limit</span>'
    : '';
  const classes = report.classes.map((cls, i) => {
    const schedules = cls.schedules.map((s) =>
      `<li><code>${s.map(escapeHtml).join(' → ')}</code></li>`).join('');
    return `<div class="outcome-class" data-class="${i}">` +
      `<h4>class ${i + 1} · ${cls.schedules.length} schedule(s)</h4>` +
      renderOutcome(cls.representative) +
      `<details><summary>schedules</summary><ul>${schedules}</ul></details></div>`;
  }).join('');
  return `<p><strong>${report.scheduleCount}</strong> schedules ran ` +
    `(${report.prunedCount} pruned as equivalent)${truncated}</p>` +
    `<p><strong>${report.classes.length}</strong> outcome class(es)</p>` +
    `<div class="classes">${classes}</div>`;
}

// --- shared chrome ------------------------------------------------------------------

export function renderError(message: string): string {
  return `<div class="banner error-banner">${escapeHtml(message)}</div>`;
}
