/**
 * Wire types for the dualmem stdio control channel.
 *
 * One JSON object per line in each direction. Requests carry a
 * client-chosen numeric id which the server echoes back, an op name,
 * the target session handle (absent only for create_manager), and an
 * op-specific params object. Responses carry either a result or an
 * error with a human-readable message.
 */

export type MetricName = "l1" | "l2" | "mmd_rbf" | "sinkhorn";
export type SelectionMode = "nearest" | "farthest";

export interface MergeConfig {
  /** clusters per merge level */
  k: number;
  /** minimum merged cardinality */
  m: number;
  /** merge recursion depth */
  depth: number;
  /** optional subsample cap for cluster-to-cluster costs */
  cloud_cap?: number | null;
}

export interface ManagerOptions {
  /** total sample budget shared by both buffers */
  lambdaMax: number;
  /** long-term share of the budget, in [0, 1] */
  rho: number;
  /** number of tasks the stream will contain */
  nTasks: number;
  metric?: MetricName;
  mode?: SelectionMode;
  /** root seed for every internal random stream */
  seed?: number;
  merge?: MergeConfig | null;
}

export interface ObserveResult {
  inserted: number;
  seen: number;
}

export interface EndTaskResult {
  task_index: number;
  long_size: number;
  short_capacity: number;
}

export interface ReplayResult {
  features: number[][];
  labels: number[];
}

export interface RpcRequest {
  id: number;
  op: string;
  handle?: number;
  params: Record<string, unknown>;
}

export interface RpcResponse {
  id: number | null;
  result?: unknown;
  error?: { message: string };
}
