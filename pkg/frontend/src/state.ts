// View-model layer: pure, testable logic between the API and the DOM.
// Mutations never update state locally; they round-trip and refetch
// (correctness over latency — this is an audit tool).

import type { TriageApi } from "./api.js";
import { ApiError } from "./api.js";
import type { Group } from "./types.js";

export interface GroupCard {
  group: Group;
  maskOverlayOn: boolean;
  /** Verdict buttons stay disabled from submit until the API confirms. */
  submitting: boolean;
  error: string | null;
  errorRetryable: boolean;
}

export type FilterTab = "all" | "suspected" | "confirmed" | "rejected";

/** Gallery order: largest cliques first, tightest similarity first. */
export function sortGroups(groups: Group[]): Group[] {
  return [...groups].sort((a, b) => {
    if (b.members.length !== a.members.length) return b.members.length - a.members.length;
    if (b.min_pairwise !== a.min_pairwise) return b.min_pairwise - a.min_pairwise;
    return a.group_id < b.group_id ? -1 : 1;
  });
}

export function buildCards(groups: Group[]): GroupCard[] {
  return sortGroups(groups).map((group) => ({
    group,
    maskOverlayOn: false,
    submitting: false,
    error: null,
    errorRetryable: false,
  }));
}

export function filterCards(cards: GroupCard[], tab: FilterTab): GroupCard[] {
  if (tab === "all") return cards;
  return cards.filter((c) => c.group.status === tab);
}

/** Badge kinds shown on a card, in a fixed display order. */
export function findingBadges(group: Group): string[] {
  const interesting = ["perturbed", "leakage", "interpolation", "source_match"];
  const kinds = new Set(group.findings.map((f) => f.kind));
  return interesting.filter((k) => kinds.has(k));
}

/** The generated-vs-source panel only appears when source matches exist. */
export function hasSourcePanel(group: Group): boolean {
  return group.findings.some((f) => f.kind === "source_match");
}

export function toggleMaskOverlay(card: GroupCard): GroupCard {
  return { ...card, maskOverlayOn: !card.maskOverlayOn };
}

/**
 * Submit a verdict and return the card rebuilt from the API's view of the
 * group. On failure the group state is untouched and the error is surfaced
 * (retryable for 409/5xx).
 */
export async function submitVerdict(
  api: TriageApi,
  card: GroupCard,
  decision: string,
  analyst: string,
  note: string,
): Promise<GroupCard> {
  const pending = { ...card, submitting: true, error: null, errorRetryable: false };
  try {
    await api.submitVerdict({
      group_id: pending.group.group_id,
      decision,
      analyst,
      note,
    });
    const fresh = await api.getGroup(pending.group.group_id);
    return { ...pending, group: fresh, submitting: false };
  } catch (err) {
    const retryable = err instanceof ApiError && err.retryable;
    const message = err instanceof Error ? err.message : String(err);
    return { ...pending, submitting: false, error: message, errorRetryable: retryable };
  }
}

/** Reload everything from the API; the UI holds no authoritative state. */
export async function refreshCards(api: TriageApi, runId: string): Promise<GroupCard[]> {
  return buildCards(await api.getGroups(runId));
}
