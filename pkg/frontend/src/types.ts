// Payload shapes of the debugging service's JSON endpoints.

export type Cell = string | number | boolean | null;

export interface Page {
  columns: string[];
  rows: Cell[][];
  total: number;
  offset: number;
}

export interface RequestRecord {
  reqId: string;
  handler: string;
  args: Cell[];
  status: string;
  message: string;
  resultDigest: string;
  resultDisplay: string;
  index: number;
}

export interface TraceSummary {
  app: string;
  codeVersion: string;
  eventTables: string[];
  transactions: number;
  requests: RequestRecord[];
}

export interface ResultSet {
  columns: string[];
  rows: Cell[][];
}

export interface WriteOp {
  table: string;
  kind: string;
  key: unknown;
  before: Cell[] | null;
  after: Cell[] | null;
}

export interface Dependency {
  sourceTxnId: number;
  sourceReqId: string;
  write: WriteOp;
}

export interface SlotPlan {
  slot: number;
  txnId: number;
  funcName: string;
  handlerName: string;
  window: [number, number];
  dependencies: Dependency[];
}

export interface ReplayPlan {
  reqId: string;
  handler: string;
  mode: string;
  firstTxnId: number;
  slots: SlotPlan[];
  restoreSet: [string, unknown][];
}

export interface InjectedWrite extends Dependency {
  forced: boolean;
}

export interface SlotReport {
  slot: number;
  txnId: number;
  injected: InjectedWrite[];
  replayedDigest: string;
  originalDigest: string;
  digestMatch: boolean;
  readSetMatch: boolean;
  writesMatch: boolean;
  diverged: boolean;
  note: string;
}

export interface ReplayStart {
  sessionId: string;
  plan: ReplayPlan;
  status: string;
}

export interface StepResponse {
  report: SlotReport;
  status: string;
}

export interface SessionState {
  reqId: string;
  status: string;
  cursor: number;
  slots: number;
  mode: string;
  finalNote: string;
  reports: SlotReport[];
  injected: (Dependency & { slot: number; forced: boolean })[];
}

export interface RequestOutcome {
  status: string;
  message: string;
  resultDigest: string;
  resultDisplay: string;
}

export interface RetroOutcome {
  schedule: string[];
  requests: Record<string, RequestOutcome>;
  finalStateDigest: string;
  traceRef: string;
}

export interface RetroClass {
  schedules: string[][];
  representative: RetroOutcome;
}

export interface RetroReport {
  outcomes: RetroOutcome[];
  classes: RetroClass[];
  scheduleCount: number;
  prunedCount: number;
  truncated: boolean;
}

export interface RetroRequestConfig {
  snapshotBefore: string;
  requests: string[];
  after?: Record<string, string[]>;
  codeVersion?: string;
  policy?: { prune?: boolean; granularity?: string; maxSchedules?: number };
}

export interface AppInfo {
  name: string;
  tables: string[];
  versions: Record<string, string[]>;
}
