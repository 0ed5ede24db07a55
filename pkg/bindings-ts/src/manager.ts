/**
 * Typed wrapper over one manager session. Arrays cross the boundary by
 * value (JSON), so no call can mutate caller-owned data, and every
 * result is freshly allocated.
 */

import { RpcChannel, RpcError } from "./channel.js";
import type {
  EndTaskResult,
  ManagerOptions,
  ObserveResult,
  ReplayResult,
} from "./protocol.js";

function checkBatch(features: number[][], labels: number[]): void {
  if (features.length !== labels.length) {
    throw new RpcError(
      `got ${features.length} feature rows but ${labels.length} labels`);
  }
  const width = features[0]?.length ?? 0;
  for (const row of features) {
    if (row.length !== width) {
      throw new RpcError("feature rows must share one width");
    }
  }
}

export class MemoryManager {
  private handleValue: number | null;

  constructor(private channel: RpcChannel, handle: number) {
    this.handleValue = handle;
  }

  private get handle(): number {
    if (this.handleValue === null) {
      throw new RpcError("manager is closed");
    }
    return this.handleValue;
  }

  /** Streams one batch into the short-term buffer. */
  async observeBatch(features: number[][],
                     labels: number[]): Promise<ObserveResult> {
    checkBatch(features, labels);
    const result = await this.channel.request("observe_batch", this.handle, {
      features,
      labels,
    });
    return result as ObserveResult;
  }

  /**
   * Marks the current task finished and reorganizes long-term memory.
   * The task's samples must be resent in the order they were observed.
   */
  async endTask(features: number[][],
                labels: number[]): Promise<EndTaskResult> {
    checkBatch(features, labels);
    const result = await this.channel.request("end_task", this.handle, {
      features,
      labels,
    });
    return result as EndTaskResult;
  }

  /** Draws a replay batch uniformly over both buffers, with replacement. */
  async replay(size: number): Promise<ReplayResult> {
    const result = await this.channel.request("replay", this.handle, {
      size,
    });
    return result as ReplayResult;
  }

  /**
   * Canonical JSON snapshot of the stored ids, labels, and capacities,
   * byte-identical to the core CLI's trace snapshot for the same
   * configuration and stream.
   */
  async snapshot(): Promise<string> {
    const result = await this.channel.request("snapshot", this.handle, {});
    return (result as { snapshot: string }).snapshot;
  }

  /** Releases the server-side session; further calls fail. */
  async close(): Promise<void> {
    await this.channel.request("close", this.handle, {});
    this.handleValue = null;
  }
}

export async function createManager(channel: RpcChannel,
                                    options: ManagerOptions):
    Promise<MemoryManager> {
  const params: Record<string, unknown> = {
    lambda_max: options.lambdaMax,
    rho: options.rho,
    n: options.nTasks,
    metric: options.metric ?? "sinkhorn",
    mode: options.mode ?? "nearest",
    seed: options.seed ?? 0,
    dac: options.merge ?? null,
  };
  const result = await channel.request("create_manager", undefined, params);
  return new MemoryManager(channel, (result as { handle: number }).handle);
}
