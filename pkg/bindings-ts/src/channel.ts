/**
 * Subprocess transport: spawns the core package's rpc subcommand and
 * matches line-delimited JSON responses to in-flight requests by id.
 */

import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import { createInterface, type Interface } from "node:readline";

import type { RpcRequest, RpcResponse } from "./protocol.js";

/** Raised when the server answers a request with an error body. */
export class RpcError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "RpcError";
  }
}

const DEFAULT_COMMAND = process.env.DUALMEM_PYTHON ?? "python3";
const DEFAULT_ARGS = ["-m", "dualmem.cli", "rpc"];

interface Pending {
  resolve: (value: unknown) => void;
  reject: (err: Error) => void;
}

export class RpcChannel {
  private child: ChildProcessWithoutNullStreams;
  private lines: Interface;
  private pending = new Map<number, Pending>();
  private nextId = 0;
  private closed = false;
  private stderrTail = "";

  constructor(command: string = DEFAULT_COMMAND,
              args: string[] = DEFAULT_ARGS) {
    this.child = spawn(command, args, { stdio: ["pipe", "pipe", "pipe"] });
    this.lines = createInterface({ input: this.child.stdout });
    this.lines.on("line", (line) => this.onLine(line));
    this.child.stderr.on("data", (chunk: Buffer) => {
      this.stderrTail = (this.stderrTail + chunk.toString()).slice(-2000);
    });
    this.child.on("exit", () => this.failAll("server process exited"));
    this.child.on("error", (err) => this.failAll(err.message));
  }

  private onLine(line: string): void {
    let body: RpcResponse;
    try {
      body = JSON.parse(line) as RpcResponse;
    } catch {
      this.failAll(`unparseable server line: ${line.slice(0, 200)}`);
      return;
    }
    if (body.id === null || body.id === undefined) {
      return;
    }
    const waiter = this.pending.get(body.id);
    if (!waiter) {
      return;
    }
    this.pending.delete(body.id);
    if (body.error) {
      waiter.reject(new RpcError(body.error.message));
    } else {
      waiter.resolve(body.result);
    }
  }

  private failAll(reason: string): void {
    const detail = this.stderrTail ? `${reason}: ${this.stderrTail}` : reason;
    for (const waiter of this.pending.values()) {
      waiter.reject(new RpcError(detail));
    }
    this.pending.clear();
  }

  request(op: string, handle: number | undefined,
          params: Record<string, unknown>): Promise<unknown> {
    if (this.closed) {
      return Promise.reject(new RpcError("channel is closed"));
    }
    const req: RpcRequest = { id: this.nextId++, op, params };
    if (handle !== undefined) {
      req.handle = handle;
    }
    return new Promise((resolve, reject) => {
      this.pending.set(req.id, { resolve, reject });
      this.child.stdin.write(JSON.stringify(req) + "\n", (err) => {
        if (err) {
          this.pending.delete(req.id);
          reject(new RpcError(err.message));
        }
      });
    });
  }

  /** Ends the server's stdin and waits for it to exit. */
  async shutdown(): Promise<void> {
    if (this.closed) {
      return;
    }
    this.closed = true;
    this.child.stdin.end();
    await new Promise<void>((resolve) => {
      if (this.child.exitCode !== null) {
        resolve();
        return;
      }
      this.child.on("exit", () => resolve());
      setTimeout(() => {
        this.child.kill();
        resolve();
      }, 5000).unref();
    });
  }
}
