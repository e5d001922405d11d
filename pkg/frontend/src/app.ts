// App bootstrap: settings screen, run picker, gallery with verdicts and the
// promote dialog. Every mutation round-trips before the view updates.

import { TriageApi } from "./api.js";
import { renderGallery } from "./gallery.js";
import { promotePreview, submitPromotion } from "./promote.js";
import type { FilterTab, GroupCard } from "./state.js";
import { buildCards, filterCards, refreshCards, submitVerdict, toggleMaskOverlay } from "./state.js";
import { loadSettings, saveSettings } from "./settings.js";

interface AppState {
  api: TriageApi;
  runId: string | null;
  cards: GroupCard[];
  selected: Set<string>;
  tab: FilterTab;
  analyst: string;
}

function byId(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

async function reload(state: AppState): Promise<void> {
  if (!state.runId) return;
  state.cards = await refreshCards(state.api, state.runId);
  render(state);
}

function render(state: AppState): void {
  const visible = filterCards(state.cards, state.tab);
  renderGallery(state.api, byId("gallery"), visible, {
    onToggleMask(card) {
      state.cards = state.cards.map((c) =>
        c.group.group_id === card.group.group_id ? toggleMaskOverlay(c) : c,
      );
      render(state);
    },
    async onVerdict(card, decision, note) {
      card.submitting = true;
      render(state);
      const updated = await submitVerdict(state.api, card, decision, state.analyst, note);
      state.cards = state.cards.map((c) =>
        c.group.group_id === updated.group.group_id ? updated : c,
      );
      render(state);
    },
    onSelect(card, selected) {
      if (selected) state.selected.add(card.group.group_id);
      else state.selected.delete(card.group.group_id);
      renderPromote(state);
    },
  });
  renderPromote(state);
}

function renderPromote(state: AppState): void {
  const panel = byId("promote-panel");
  const chosen = state.cards
    .filter((c) => state.selected.has(c.group.group_id))
    .map((c) => c.group);
  const preview = promotePreview(chosen);
  const btn = byId("promote-btn") as HTMLButtonElement;
  btn.disabled = !preview.canPromote;
  byId("promote-preview").textContent = preview.canPromote
    ? `${preview.prompts.length} prompts: ${preview.prompts.slice(0, 4).join(" | ")}${preview.prompts.length > 4 ? " | ..." : ""}`
    : preview.blockedBy.length
      ? `blocked by unconfirmed: ${preview.blockedBy.join(", ")}`
      : "select confirmed groups to promote";
  panel.style.display = chosen.length ? "block" : "none";
}

function toast(text: string): void {
  const node = byId("toast");
  node.textContent = text;
  node.classList.add("visible");
  setTimeout(() => node.classList.remove("visible"), 4000);
}

async function main(): Promise<void> {
  const settings = loadSettings();
  (byId("base-url") as HTMLInputElement).value = settings.baseUrl;
  (byId("token") as HTMLInputElement).value = settings.token ?? "";

  const state: AppState = {
    api: new TriageApi(settings),
    runId: null,
    cards: [],
    selected: new Set(),
    tab: "all",
    analyst: "analyst",
  };

  byId("save-settings").onclick = () => {
    const next = {
      baseUrl: (byId("base-url") as HTMLInputElement).value,
      token: (byId("token") as HTMLInputElement).value || undefined,
    };
    saveSettings(next);
    state.api = new TriageApi(next);
    void loadRuns();
  };

  (byId("analyst") as HTMLInputElement).onchange = (ev) => {
    state.analyst = (ev.target as HTMLInputElement).value || "analyst";
  };

  for (const tab of ["all", "suspected", "confirmed", "rejected"] as FilterTab[]) {
    byId(`tab-${tab}`).onclick = () => {
      state.tab = tab;
      render(state);
    };
  }

  byId("refresh").onclick = () => void reload(state);

  byId("promote-btn").onclick = async () => {
    if (!state.runId) return;
    const chosen = state.cards
      .filter((c) => state.selected.has(c.group.group_id))
      .map((c) => c.group);
    const provider = (byId("target-provider") as HTMLInputElement).value || "stub";
    try {
      const result = await submitPromotion(state.api, state.runId, chosen, provider);
      toast(`sweep config ${result.config_digest.slice(0, 12)} saved for review`);
    } catch (err) {
      toast(err instanceof Error ? err.message : String(err));
    }
  };

  async function loadRuns(): Promise<void> {
    const select = byId("run-select") as HTMLSelectElement;
    const runs = await state.api.listRuns();
    select.replaceChildren(
      ...runs.map((r) => {
        const opt = document.createElement("option");
        opt.value = r.run_id;
        opt.textContent = `${r.run_id} (${r.n_groups ?? 0} groups, ${r.status})`;
        return opt;
      }),
    );
    select.onchange = async () => {
      state.runId = select.value;
      state.selected.clear();
      await reload(state);
    };
    if (runs.length) {
      state.runId = runs[0].run_id;
      state.cards = buildCards(await state.api.getGroups(state.runId));
      render(state);
    }
  }

  await loadRuns();
}

main().catch((err) => {
  const node = document.getElementById("gallery");
  if (node) node.textContent = `failed to load: ${err}`;
});
