import net from "node:net";

import {
  Ack,
  MarkerMessage,
  MarkerType,
  PROTOCOL_VERSION,
  USAGE_ERROR_CODES,
  encodeMarker,
  parseAck,
} from "./protocol.js";

export { PROTOCOL_VERSION } from "./protocol.js";
export type { Ack, MarkerMessage, MarkerType } from "./protocol.js";

export const ENDPOINT_ENV_VAR = "CARBONLEDGER_MARKERS";

/** The training loop sent markers out of order; the daemon refused them. */
export class MarkerUsageError extends Error {
  constructor(public readonly code: string) {
    super(`marker rejected by tracking daemon: ${code}`);
    this.name = "MarkerUsageError";
  }
}

export interface ConnectOptions {
  /** Per-marker round-trip budget before the session degrades. */
  ackTimeoutMs?: number;
  connectTimeoutMs?: number;
  warn?: (message: string) => void;
}

export interface TrackerSession {
  /** False once degraded to a no-op (daemon down, broken pipe, version skew). */
  readonly active: boolean;
  epochStart(): Promise<void>;
  epochEnd(): Promise<void>;
  stop(): Promise<void>;
  /** Drop the connection without sending stop. */
  close(): void;
}

/**
 * Connect to the tracking daemon and perform the hello handshake.
 *
 * Never throws: if the daemon is unreachable, the ack times out or the
 * protocol version does not match, the returned session is a no-op and a
 * single warning is emitted. Tracking must never crash training.
 */
export function connect(
  endpoint: string | null | undefined,
  runId: string,
  options: ConnectOptions = {},
): Promise<TrackerSession> {
  const resolved = endpoint ?? process.env[ENDPOINT_ENV_VAR];
  const session = new Session(runId, options);
  if (!resolved) {
    session.degrade(`no tracking endpoint (set ${ENDPOINT_ENV_VAR} or pass one); markers disabled`);
    return Promise.resolve(session);
  }
  const colon = resolved.lastIndexOf(":");
  const host = colon > 0 ? resolved.slice(0, colon) : "127.0.0.1";
  const port = Number(colon > 0 ? resolved.slice(colon + 1) : resolved);
  if (!Number.isInteger(port) || port <= 0) {
    session.degrade(`bad tracking endpoint ${resolved}; markers disabled`);
    return Promise.resolve(session);
  }
  return session.open(host, port);
}

interface Waiter {
  resolve: (ack: Ack | null) => void;
  timer: NodeJS.Timeout;
}

class Session implements TrackerSession {
  active = false;

  private socket: net.Socket | null = null;
  private buffer = "";
  private waiters: Waiter[] = [];
  private warned = false;
  private epoch = 0;
  private epochOpen = false;
  private readonly ackTimeoutMs: number;
  private readonly connectTimeoutMs: number;
  private readonly warnFn: (message: string) => void;

  constructor(private readonly runId: string, options: ConnectOptions) {
    this.ackTimeoutMs = options.ackTimeoutMs ?? 100;
    this.connectTimeoutMs = options.connectTimeoutMs ?? 1000;
    this.warnFn = options.warn ?? ((message) => console.warn(`[trainhook] ${message}`));
  }

  open(host: string, port: number): Promise<TrackerSession> {
    return new Promise((resolveOpen) => {
      const socket = net.connect({ host, port });
      this.socket = socket;
      socket.setNoDelay(true);

      const connectTimer = setTimeout(() => {
        this.degrade(`tracking daemon at ${host}:${port} did not answer; markers disabled`);
        resolveOpen(this);
      }, this.connectTimeoutMs);

      socket.on("data", (chunk) => this.onData(chunk));
      socket.on("error", () => {
        clearTimeout(connectTimer);
        this.degrade(`tracking daemon at ${host}:${port} unreachable; markers disabled`);
        resolveOpen(this);
      });
      socket.on("close", () => {
        if (this.active) {
          this.degrade("tracking connection lost mid-run; markers disabled");
        }
      });

      socket.on("connect", async () => {
        clearTimeout(connectTimer);
        this.active = true; // provisionally, for sendMarker
        const ack = await this.sendMarker("hello");
        if (ack === null) {
          this.degrade("tracking daemon did not ack hello; markers disabled");
        } else if (!ack.ok) {
          this.active = false;
          this.degrade(
            ack.error === "unsupported-version"
              ? `tracking daemon speaks a different protocol version (expected ${PROTOCOL_VERSION}); markers disabled`
              : `tracking daemon refused hello (${ack.error}); markers disabled`,
          );
        }
        resolveOpen(this);
      });
    });
  }

  degrade(reason: string): void {
    this.active = false;
    if (!this.warned) {
      this.warned = true;
      this.warnFn(reason);
    }
    for (const waiter of this.waiters.splice(0)) {
      clearTimeout(waiter.timer);
      waiter.resolve(null);
    }
    if (this.socket) {
      this.socket.destroy();
      this.socket = null;
    }
  }

  close(): void {
    this.active = false;
    if (this.socket) {
      this.socket.destroy();
      this.socket = null;
    }
  }

  private onData(chunk: Buffer): void {
    this.buffer += chunk.toString("utf8");
    let newline;
    while ((newline = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, newline);
      this.buffer = this.buffer.slice(newline + 1);
      const waiter = this.waiters.shift();
      if (!waiter) {
        continue; // unsolicited line; daemon bug, ignore
      }
      clearTimeout(waiter.timer);
      waiter.resolve(parseAck(line));
    }
  }

  private sendMarker(type: MarkerType, epoch?: number): Promise<Ack | null> {
    if (!this.active || !this.socket) {
      return Promise.resolve(null);
    }
    const msg: MarkerMessage =
      epoch === undefined
        ? { v: PROTOCOL_VERSION, type, ts_ms: Date.now(), run_id: this.runId }
        : { v: PROTOCOL_VERSION, type, epoch, ts_ms: Date.now(), run_id: this.runId };
    return new Promise((resolve) => {
      const timer = setTimeout(() => {
        const index = this.waiters.findIndex((w) => w.timer === timer);
        if (index >= 0) {
          this.waiters.splice(index, 1);
        }
        this.degrade(`tracking daemon ack took more than ${this.ackTimeoutMs} ms; markers disabled`);
        resolve(null);
      }, this.ackTimeoutMs);
      this.waiters.push({ resolve, timer });
      this.socket!.write(encodeMarker(msg));
    });
  }

  private async marker(type: MarkerType, epoch?: number): Promise<void> {
    if (!this.active) {
      return;
    }
    const ack = await this.sendMarker(type, epoch);
    if (ack === null || ack.ok) {
      return;
    }
    if (USAGE_ERROR_CODES.has(ack.error)) {
      throw new MarkerUsageError(ack.error);
    }
    this.degrade(`tracking daemon rejected ${type} (${ack.error}); markers disabled`);
  }

  async epochStart(): Promise<void> {
    await this.marker("epoch_start", this.epoch);
    this.epochOpen = true;
  }

  async epochEnd(): Promise<void> {
    await this.marker("epoch_end", this.epoch);
    if (this.epochOpen) {
      this.epoch += 1;
      this.epochOpen = false;
    }
  }

  async stop(): Promise<void> {
    await this.marker("stop");
    this.close();
  }
}
