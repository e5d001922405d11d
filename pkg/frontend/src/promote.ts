// Promote-dialog logic: preview the sweep a confirmed selection would
// generate, and submit it to the service (which owns the real config).

import type { TriageApi } from "./api.js";
import type { Group, PromoteResponse } from "./types.js";

// Mirrors the server's default descriptor set for previewing; the server
// builds the authoritative config on submit.
export const DEFAULT_DESCRIPTORS = [
  "Galaxy",
  "Floral",
  "Abstract Art",
  "I Heart ML",
  "blue",
  "red",
];

export interface PromotePreview {
  collocations: string[];
  prompts: string[];
  canPromote: boolean;
  blockedBy: string[];
}

export function promotePreview(selected: Group[]): PromotePreview {
  const blockedBy = selected
    .filter((g) => g.status !== "confirmed")
    .map((g) => g.group_id);
  const seen = new Set<string>();
  const collocations: string[] = [];
  for (const group of selected) {
    const key = group.collocation.toLowerCase();
    if (!seen.has(key)) {
      seen.add(key);
      collocations.push(group.collocation);
    }
  }
  const prompts = DEFAULT_DESCRIPTORS.flatMap((d) =>
    collocations.map((c) => `${d} ${c}`),
  );
  return {
    collocations,
    prompts,
    canPromote: selected.length > 0 && blockedBy.length === 0,
    blockedBy,
  };
}

export async function submitPromotion(
  api: TriageApi,
  runId: string,
  selected: Group[],
  targetProviderId: string,
): Promise<PromoteResponse> {
  const preview = promotePreview(selected);
  if (!preview.canPromote) {
    throw new Error(`cannot promote: unconfirmed groups ${preview.blockedBy.join(", ")}`);
  }
  return api.promote({
    run_id: runId,
    group_ids: selected.map((g) => g.group_id),
    target_provider_id: targetProviderId,
  });
}
