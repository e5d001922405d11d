// Single settings surface: service base URL + bearer token, persisted in
// localStorage.

import type { ApiSettings } from "./api.js";

const KEY = "templeak-triage-settings";

export function loadSettings(storage: Storage = localStorage): ApiSettings {
  const raw = storage.getItem(KEY);
  if (raw) {
    try {
      const parsed = JSON.parse(raw) as ApiSettings;
      if (parsed.baseUrl) return parsed;
    } catch {
      // fall through to defaults
    }
  }
  return { baseUrl: "http://127.0.0.1:8008" };
}

export function saveSettings(settings: ApiSettings, storage: Storage = localStorage): void {
  storage.setItem(KEY, JSON.stringify(settings));
}
