export { RpcChannel, RpcError } from "./channel.js";
export { MemoryManager, createManager } from "./manager.js";
export type {
  EndTaskResult,
  ManagerOptions,
  MergeConfig,
  MetricName,
  ObserveResult,
  ReplayResult,
  SelectionMode,
} from "./protocol.js";
