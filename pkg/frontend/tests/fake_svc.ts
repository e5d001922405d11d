// In-memory stand-in for the triage service, faithful to its JSON contract:
// verdicts append to a manifest event log, group status derives from the
// latest verdict, and promote crosses confirmed collocations with the
// default descriptor set.

import { DEFAULT_DESCRIPTORS } from "../src/promote";
import type { Group, SweepConfigDict } from "../src/types";

export interface ManifestEvent {
  kind: string;
  [key: string]: unknown;
}

const VALID_DECISIONS = ["confirmed", "rejected", "leakage_confirmed"];

export function makeGroup(partial: Partial<Group> & { group_id: string }): Group {
  return {
    collocation: "Area Rug",
    members: ["digest-a", "digest-b"],
    min_pairwise: 0.99,
    fingerprint_digest: "fp",
    status: "suspected",
    mask_overlays: {},
    findings: [],
    verdicts: [],
    ...partial,
  };
}

export class FakeSvc {
  manifest: ManifestEvent[] = [];
  savedConfigs: SweepConfigDict[] = [];

  constructor(
    public runId: string,
    private groups: Group[],
  ) {}

  private status(groupId: string): Group["status"] {
    let status: Group["status"] = "suspected";
    for (const ev of this.manifest) {
      if (ev.kind === "verdict" && ev.group_id === groupId) {
        status = ev.decision === "rejected" ? "rejected" : "confirmed";
      }
    }
    return status;
  }

  private groupView(group: Group): Group {
    const verdicts = this.manifest
      .filter((ev) => ev.kind === "verdict" && ev.group_id === group.group_id)
      .map((ev) => ({
        group_id: ev.group_id as string,
        decision: ev.decision as Group["verdicts"][number]["decision"],
        analyst: ev.analyst as string,
        note: (ev.note as string) ?? "",
      }));
    return { ...group, status: this.status(group.group_id), verdicts };
  }

  currentGroups(): Group[] {
    return this.groups.map((g) => this.groupView(g));
  }

  fetch = async (input: string, init?: RequestInit): Promise<Response> => {
    const url = new URL(input);
    const path = url.pathname;
    const method = init?.method ?? "GET";

    if (method === "GET" && path === "/api/runs") {
      return json([
        {
          run_id: this.runId,
          status: "complete",
          config_digest: "cfg",
          run_label: "fixture",
          n_generations: 12,
          n_failures: 0,
          n_groups: this.groups.length,
          n_findings: 0,
        },
      ]);
    }
    if (method === "GET" && path === `/api/runs/${this.runId}/groups`) {
      return json(this.currentGroups());
    }
    const groupMatch = path.match(/^\/api\/groups\/(.+)$/);
    if (method === "GET" && groupMatch) {
      const group = this.groups.find((g) => g.group_id === groupMatch[1]);
      if (!group) return json({ detail: "unknown group" }, 404);
      return json(this.groupView(group));
    }
    if (method === "POST" && path === "/api/verdicts") {
      const body = JSON.parse(String(init?.body));
      if (!VALID_DECISIONS.includes(body.decision)) {
        return json({ detail: `invalid decision ${body.decision}` }, 400);
      }
      const group = this.groups.find((g) => g.group_id === body.group_id);
      if (!group) return json({ detail: "unknown group" }, 404);
      this.manifest.push({ kind: "verdict", ...body });
      return json({ group_id: body.group_id, status: this.status(body.group_id) }, 201);
    }
    if (method === "POST" && path === "/api/sweeps/promote") {
      const body = JSON.parse(String(init?.body));
      if (!body.group_ids?.length) return json({ detail: "group_ids must be non-empty" }, 400);
      const seen = new Set<string>();
      const collocations: string[] = [];
      for (const gid of body.group_ids) {
        const group = this.groups.find((g) => g.group_id === gid);
        if (!group) return json({ detail: `unknown group ${gid}` }, 404);
        if (this.status(gid) !== "confirmed") {
          return json({ detail: `group ${gid} is not confirmed` }, 422);
        }
        if (!seen.has(group.collocation.toLowerCase())) {
          seen.add(group.collocation.toLowerCase());
          collocations.push(group.collocation);
        }
      }
      const config: SweepConfigDict = {
        v: 1,
        run_label: `promoted-from-${body.run_id}`,
        provider_id: body.target_provider_id,
        steps: 50,
        width: 512,
        height: 512,
        guidance: 7.5,
        seeds: Array.from({ length: 50 }, (_, i) => i),
        prompts: DEFAULT_DESCRIPTORS.flatMap((d) =>
          collocations.map((c) => ({
            descriptor: d,
            collocation: { text: c, category_tag: "", source_site: "", segmentation_class: null },
            template: "{descriptor} {collocation}",
            rendered: `${d} ${c}`,
          })),
        ),
      };
      this.savedConfigs.push(config);
      this.manifest.push({ kind: "promotion", group_ids: body.group_ids });
      return json({ config_digest: "deadbeef" + this.savedConfigs.length, config_path: "/configs/x.json", config });
    }
    return json({ detail: `unhandled ${method} ${path}` }, 500);
  };
}

function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
