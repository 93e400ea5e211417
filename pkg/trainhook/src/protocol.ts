export const PROTOCOL_VERSION = 1;

export type MarkerType = "hello" | "epoch_start" | "epoch_end" | "stop";

export interface MarkerMessage {
  v: typeof PROTOCOL_VERSION;
  type: MarkerType;
  epoch?: number;
  ts_ms: number;
  run_id: string;
}

export type Ack = { ok: true } | { ok: false; error: string };

export function encodeMarker(msg: MarkerMessage): string {
  return JSON.stringify(msg) + "\n";
}

export function parseAck(line: string): Ack | null {
  let doc: unknown;
  try {
    doc = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null || typeof (doc as { ok?: unknown }).ok !== "boolean") {
    return null;
  }
  const ack = doc as { ok: boolean; error?: unknown };
  if (ack.ok) {
    return { ok: true };
  }
  return { ok: false, error: typeof ack.error === "string" ? ack.error : "unknown" };
}

/** Error acks that mean the training loop used the markers wrong
 * (mirrors the daemon's ledger sequencing errors). */
export const USAGE_ERROR_CODES = new Set([
  "no-open-epoch",
  "epoch-already-open",
  "out-of-order-marker",
]);
