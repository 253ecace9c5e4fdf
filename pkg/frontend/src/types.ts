/** Wire types mirroring the chain service API. */

export type OperationKind =
  | "classification"
  | "factual_query"
  | "generation"
  | "ideation"
  | "information_extraction"
  | "rewriting"
  | "split_points"
  | "compose_points";

export type Cardinality = "single" | "list";

export interface LayerDoc {
  id: string;
  name: string;
  cardinality: Cardinality;
  colorTag: number;
  producer: string | null;
  isRoot: boolean;
}

export interface BranchDoc {
  guardLayer: string;
  equalsLabel: string;
}

export interface StepDoc {
  id: string;
  op: OperationKind;
  inputs: string[];
  output: string;
  taskDescription: string;
  prefixes: Record<string, string>;
  fewShot: Record<string, string>[];
  temperature: number | null;
  branch: BranchDoc | null;
  groupScope: string | null;
}

export interface ChainDoc {
  formatVersion: number;
  id: string;
  name: string;
  layers: LayerDoc[];
  steps: StepDoc[];
  seeds?: Record<string, string[]>;
}

export interface EntryDoc {
  id: string;
  layer: string;
  text: string;
  lineage: string[];
  frozen: boolean;
  stale: boolean;
  origin: "model" | "user" | "seed";
}

export interface SessionSnapshot {
  id: string;
  version: number;
  chain: ChainDoc;
  entries: Record<string, EntryDoc[]>;
  runs: string[];
}

export interface PreviewDoc {
  version: number;
  block: number;
  status: string;
  prompt: string;
  temperature: number;
  maxTokens: number;
  stop: string[];
}

export interface RunBlockDoc {
  index: number;
  status: string;
  error?: string;
}

export interface RunDoc {
  id: string;
  stepId: string;
  status: "running" | "done";
  blocks: RunBlockDoc[];
  records: unknown[];
}

export interface ChainListing {
  id: string;
  name: string;
  builtin: boolean;
}
