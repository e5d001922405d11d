import { describe, expect, it } from "vitest";

import { TriageApi } from "../src/api";
import { buildCards, submitVerdict } from "../src/state";
import { FakeSvc, makeGroup } from "./fake_svc";

const BASE = "http://svc.test";

function setup() {
  const svc = new FakeSvc("run1", [makeGroup({ group_id: "run1-g000" })]);
  const api = new TriageApi({ baseUrl: BASE }, svc.fetch);
  return { svc, api };
}

describe("verdict submission", () => {
  it("POST body matches the service schema", async () => {
    const { svc, api } = setup();
    const card = buildCards(svc.currentGroups())[0];
    await submitVerdict(api, card, "confirmed", "amit", "matches source");
    expect(svc.manifest).toHaveLength(1);
    expect(svc.manifest[0]).toMatchObject({
      kind: "verdict",
      group_id: "run1-g000",
      decision: "confirmed",
      analyst: "amit",
      note: "matches source",
    });
  });

  it("success round-trips and shows the API's status", async () => {
    const { svc, api } = setup();
    const card = buildCards(svc.currentGroups())[0];
    const updated = await submitVerdict(api, card, "confirmed", "amit", "");
    expect(updated.group.status).toBe("confirmed");
    expect(updated.submitting).toBe(false);
    expect(updated.error).toBeNull();
  });

  it("an invalid decision is a non-retryable error with no state change", async () => {
    const { svc, api } = setup();
    const card = buildCards(svc.currentGroups())[0];
    const updated = await submitVerdict(api, card, "maybe", "amit", "");
    expect(updated.group.status).toBe("suspected");
    expect(updated.error).toContain("invalid decision");
    expect(updated.errorRetryable).toBe(false);
    expect(svc.manifest).toHaveLength(0);
  });

  it("a 409 is surfaced as retryable and leaves the card unchanged", async () => {
    const svc = new FakeSvc("run1", [makeGroup({ group_id: "run1-g000" })]);
    const conflictFetch = async (input: string, init?: RequestInit) => {
      if (init?.method === "POST") {
        return new Response(JSON.stringify({ detail: "run not replayable" }), { status: 409 });
      }
      return svc.fetch(input, init);
    };
    const api = new TriageApi({ baseUrl: BASE }, conflictFetch);
    const card = buildCards(svc.currentGroups())[0];
    const updated = await submitVerdict(api, card, "confirmed", "amit", "");
    expect(updated.errorRetryable).toBe(true);
    expect(updated.group).toEqual(card.group);
    expect(updated.submitting).toBe(false);
  });

  it("rejecting moves the group to the rejected filter", async () => {
    const { svc, api } = setup();
    const card = buildCards(svc.currentGroups())[0];
    const updated = await submitVerdict(api, card, "rejected", "amit", "mockup reuse");
    expect(updated.group.status).toBe("rejected");
  });
});
