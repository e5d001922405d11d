import { describe, expect, it } from "vitest";

import { TriageApi } from "../src/api";
import { promotePreview, submitPromotion } from "../src/promote";
import { FakeSvc, makeGroup } from "./fake_svc";

describe("promote preview", () => {
  it("one confirmed collocation previews six prompts", () => {
    const preview = promotePreview([
      makeGroup({ group_id: "g1", collocation: "Unisex T-Shirt", status: "confirmed" }),
    ]);
    expect(preview.prompts).toHaveLength(6);
    expect(preview.prompts).toContain("blue Unisex T-Shirt");
    expect(preview.canPromote).toBe(true);
  });

  it("mixed selection with an unconfirmed group disables promotion", () => {
    const preview = promotePreview([
      makeGroup({ group_id: "g1", status: "confirmed" }),
      makeGroup({ group_id: "g2", collocation: "Tank Top" }),
    ]);
    expect(preview.canPromote).toBe(false);
    expect(preview.blockedBy).toEqual(["g2"]);
  });

  it("duplicate collocations collapse", () => {
    const preview = promotePreview([
      makeGroup({ group_id: "g1", collocation: "Area Rug", status: "confirmed" }),
      makeGroup({ group_id: "g2", collocation: "area rug", status: "confirmed" }),
    ]);
    expect(preview.collocations).toEqual(["Area Rug"]);
    expect(preview.prompts).toHaveLength(6);
  });

  it("empty selection cannot promote", () => {
    expect(promotePreview([]).canPromote).toBe(false);
  });
});

describe("promote submission", () => {
  it("returns the saved config id for the toast", async () => {
    const svc = new FakeSvc("run1", [
      makeGroup({ group_id: "run1-g000", collocation: "Unisex T-Shirt" }),
    ]);
    const api = new TriageApi({ baseUrl: "http://svc.test" }, svc.fetch);
    await api.submitVerdict({
      group_id: "run1-g000",
      decision: "confirmed",
      analyst: "a",
      note: "",
    });
    const result = await submitPromotion(api, "run1", svc.currentGroups(), "sd35");
    expect(result.config_digest).toBeTruthy();
    expect(result.config.prompts).toHaveLength(6);
    expect(result.config.provider_id).toBe("sd35");
  });

  it("refuses locally when the selection is not all confirmed", async () => {
    const svc = new FakeSvc("run1", [makeGroup({ group_id: "run1-g000" })]);
    const api = new TriageApi({ baseUrl: "http://svc.test" }, svc.fetch);
    await expect(
      submitPromotion(api, "run1", svc.currentGroups(), "sd35"),
    ).rejects.toThrow(/unconfirmed/);
    expect(svc.savedConfigs).toHaveLength(0);
  });
});
