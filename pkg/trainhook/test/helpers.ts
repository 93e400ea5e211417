import { ChildProcess, spawn } from "node:child_process";
import fs from "node:fs";
import net from "node:net";
import os from "node:os";
import path from "node:path";

export interface DaemonHandle {
  endpoint: string;
  proc: ChildProcess;
  outDir: string;
  ledgerPath: string;
  stderr: () => string;
  waitForExit: (timeoutMs?: number) => Promise<number | null>;
  kill: () => void;
}

/** Start the tracking daemon in external (marker-driven) mode. */
export async function startDaemon(runId: string): Promise<DaemonHandle> {
  const outDir = fs.mkdtempSync(path.join(os.tmpdir(), "trainhook-"));
  const proc = spawn(
    "python3",
    [
      "-m", "carbonledger", "track",
      "--external", "--listen",
      "--source", "synthetic:50",
      "--region", "DNK_AVG",
      "--run-id", runId,
      "--out", outDir,
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  let stderrText = "";
  proc.stderr!.on("data", (chunk) => (stderrText += chunk.toString()));
  proc.stdout!.resume();

  const endpointFile = path.join(outDir, `${runId}.endpoint`);
  const deadline = Date.now() + 20_000;
  while (!fs.existsSync(endpointFile)) {
    if (Date.now() > deadline || proc.exitCode !== null) {
      throw new Error(`daemon did not start: ${stderrText}`);
    }
    await sleep(25);
  }
  const endpoint = fs.readFileSync(endpointFile, "utf8").trim();

  return {
    endpoint,
    proc,
    outDir,
    ledgerPath: path.join(outDir, `${runId}.ledger.json`),
    stderr: () => stderrText,
    waitForExit: (timeoutMs = 20_000) =>
      new Promise((resolve) => {
        if (proc.exitCode !== null) return resolve(proc.exitCode);
        const timer = setTimeout(() => resolve(null), timeoutMs);
        proc.on("exit", (code) => {
          clearTimeout(timer);
          resolve(code);
        });
      }),
    kill: () => {
      if (proc.exitCode === null) proc.kill("SIGKILL");
    },
  };
}

export function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/** A loopback port with nothing listening on it. */
export async function deadEndpoint(): Promise<string> {
  return new Promise((resolve) => {
    const server = net.createServer();
    server.listen(0, "127.0.0.1", () => {
      const port = (server.address() as net.AddressInfo).port;
      server.close(() => resolve(`127.0.0.1:${port}`));
    });
  });
}

export interface StubServer {
  endpoint: string;
  close: () => void;
}

/** Minimal scripted daemon: replies to each line with the next canned ack,
 * closes the connection on "close", and stays silent once the script is
 * exhausted. */
export function stubDaemon(script: Array<string | "close">): Promise<StubServer> {
  return new Promise((resolve) => {
    const server = net.createServer((socket) => {
      let index = 0;
      socket.on("data", () => {
        const action = script[index];
        index += 1;
        if (action === undefined) {
          return;
        }
        if (action === "close") {
          socket.destroy();
        } else {
          socket.write(action + "\n");
        }
      });
    });
    server.listen(0, "127.0.0.1", () => {
      const port = (server.address() as net.AddressInfo).port;
      resolve({
        endpoint: `127.0.0.1:${port}`,
        close: () => server.close(),
      });
    });
  });
}
