// DOM rendering for the clique gallery. All state lives in the card models;
// this module only projects them into elements and wires callbacks.

import type { TriageApi } from "./api.js";
import { decodeRle, tintEditableRegion } from "./masks.js";
import type { GroupCard } from "./state.js";
import { findingBadges, hasSourcePanel } from "./state.js";

export interface CardCallbacks {
  onVerdict(card: GroupCard, decision: string, note: string): void;
  onToggleMask(card: GroupCard): void;
  onSelect(card: GroupCard, selected: boolean): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderThumb(api: TriageApi, card: GroupCard, digest: string): HTMLElement {
  const wrap = el("div", "thumb");
  const canvas = el("canvas");
  canvas.width = 96;
  canvas.height = 96;
  wrap.appendChild(canvas);

  const img = new Image();
  img.crossOrigin = "anonymous";
  img.onload = () => {
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    canvas.width = img.naturalWidth;
    canvas.height = img.naturalHeight;
    ctx.drawImage(img, 0, 0);
    const overlay = card.group.mask_overlays[digest];
    if (card.maskOverlayOn && overlay) {
      const pixels = ctx.getImageData(0, 0, canvas.width, canvas.height);
      const tinted = tintEditableRegion(
        pixels.data,
        decodeRle(overlay),
      );
      ctx.putImageData(new ImageData(tinted, canvas.width, canvas.height), 0, 0);
    }
  };
  img.src = api.imageUrl(digest);
  return wrap;
}

export function renderCard(
  api: TriageApi,
  card: GroupCard,
  callbacks: CardCallbacks,
): HTMLElement {
  const root = el("article", `card status-${card.group.status}`);
  const title = el("h3", "card-title", `${card.group.collocation}`);
  root.appendChild(title);
  root.appendChild(
    el(
      "p",
      "card-meta",
      `${card.group.members.length} members, min pairwise ${card.group.min_pairwise.toFixed(4)}`,
    ),
  );

  const badgeRow = el("div", "badges");
  badgeRow.appendChild(el("span", "badge status", card.group.status));
  for (const kind of findingBadges(card.group)) {
    const badge = el("a", `badge kind-${kind}`, kind);
    // badges link to the raw finding JSON for auditability
    const finding = card.group.findings.find((f) => f.kind === kind);
    badge.href =
      "data:application/json," + encodeURIComponent(JSON.stringify(finding, null, 2));
    badge.target = "_blank";
    badgeRow.appendChild(badge);
  }
  root.appendChild(badgeRow);

  const strip = el("div", "member-strip");
  for (const digest of card.group.members) {
    strip.appendChild(renderThumb(api, card, digest));
  }
  root.appendChild(strip);

  if (hasSourcePanel(card.group)) {
    const panel = el("div", "source-panel");
    panel.appendChild(el("h4", undefined, "generated vs source"));
    for (const finding of card.group.findings.filter((f) => f.kind === "source_match")) {
      const row = el("div", "source-row");
      row.appendChild(renderThumb(api, card, finding.subject));
      row.appendChild(el("span", "source-name", String(finding.evidence["source"] ?? "")));
      panel.appendChild(row);
    }
    root.appendChild(panel);
  }

  const controls = el("div", "controls");
  const maskBtn = el("button", "mask-toggle", card.maskOverlayOn ? "hide mask" : "show mask");
  maskBtn.onclick = () => callbacks.onToggleMask(card);
  controls.appendChild(maskBtn);

  const select = el("input") as HTMLInputElement;
  select.type = "checkbox";
  select.title = "select for promotion";
  select.onchange = () => callbacks.onSelect(card, select.checked);
  controls.appendChild(select);

  const note = el("input") as HTMLInputElement;
  note.type = "text";
  note.placeholder = "note";
  controls.appendChild(note);

  for (const decision of ["confirmed", "rejected", "leakage_confirmed"]) {
    const btn = el("button", `verdict ${decision}`, decision.replace("_", " "));
    btn.disabled = card.submitting;
    btn.onclick = () => callbacks.onVerdict(card, decision, note.value);
    controls.appendChild(btn);
  }
  root.appendChild(controls);

  if (card.error) {
    const msg = card.errorRetryable ? `${card.error} (retry)` : card.error;
    root.appendChild(el("p", "error", msg));
  }
  return root;
}

export function renderGallery(
  api: TriageApi,
  container: HTMLElement,
  cards: GroupCard[],
  callbacks: CardCallbacks,
): void {
  container.replaceChildren();
  if (cards.length === 0) {
    container.appendChild(
      el("p", "empty-state", "No suspected template groups in this run."),
    );
    return;
  }
  for (const card of cards) {
    container.appendChild(renderCard(api, card, callbacks));
  }
}
