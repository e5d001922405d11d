// Payload types mirroring the triage service's JSON API.

export interface RunSummary {
  run_id: string;
  status: string;
  config_digest: string | null;
  run_label: string;
  n_generations: number;
  n_failures: number;
  n_groups: number | null;
  n_findings: number;
}

export interface RleMask {
  width: number;
  height: number;
  class_label: string;
  counts: number[];
}

export interface Finding {
  v: number;
  kind: string;
  subject: string;
  score: number;
  evidence: Record<string, unknown>;
}

export interface Verdict {
  group_id: string;
  decision: "confirmed" | "rejected" | "leakage_confirmed";
  analyst: string;
  note: string;
}

export type GroupStatus = "suspected" | "confirmed" | "rejected";

export interface Group {
  group_id: string;
  collocation: string;
  members: string[];
  min_pairwise: number;
  fingerprint_digest: string;
  status: GroupStatus;
  mask_overlays: Record<string, RleMask>;
  findings: Finding[];
  verdicts: Verdict[];
}

export interface CollocationDict {
  text: string;
  category_tag: string;
  source_site: string;
  segmentation_class: string | null;
}

export interface PromptDict {
  descriptor: string;
  collocation: CollocationDict;
  template: string;
  rendered: string;
}

export interface SweepConfigDict {
  v: number;
  run_label: string;
  provider_id: string;
  steps: number;
  width: number;
  height: number;
  guidance: number;
  seeds: number[];
  prompts: PromptDict[];
}

export interface PromoteResponse {
  config_digest: string;
  config_path: string;
  config: SweepConfigDict;
}

export interface VerdictAck {
  group_id: string;
  status: GroupStatus;
}
