import type { TrackInfo } from "./types.js";

export type SortKey = "track_id" | "title" | "tempo_bpm";

export interface TableState {
  filter: string;
  sortKey: SortKey;
  ascending: boolean;
}

/**
 * Case-insensitive substring match against id, title and every tag; a
 * filter like "g03" shows exactly the tracks carrying that tag.
 */
export function filterTracks(tracks: TrackInfo[], filter: string): TrackInfo[] {
  const needle = filter.trim().toLowerCase();
  if (!needle) return tracks.slice();
  return tracks.filter((t) => {
    const haystack = [
      t.track_id,
      t.title,
      ...t.genre,
      ...t.mood,
      ...t.instruments,
      t.tempo_bpm === null ? "" : String(t.tempo_bpm),
    ]
      .join(" ")
      .toLowerCase();
    return haystack.includes(needle);
  });
}

export function sortTracks(tracks: TrackInfo[], key: SortKey, ascending: boolean): TrackInfo[] {
  const sorted = tracks.slice().sort((a, b) => {
    const va = key === "tempo_bpm" ? a.tempo_bpm ?? -1 : a[key];
    const vb = key === "tempo_bpm" ? b.tempo_bpm ?? -1 : b[key];
    if (va < vb) return -1;
    if (va > vb) return 1;
    return a.track_id < b.track_id ? -1 : a.track_id > b.track_id ? 1 : 0;
  });
  return ascending ? sorted : sorted.reverse();
}

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function tagChipsHtml(tags: string[], kind: string): string {
  return tags.map((t) => `<span class="chip chip-${kind}">${escapeHtml(t)}</span>`).join("");
}

export function renderTrackRowsHtml(tracks: TrackInfo[], selectedId: string | null): string {
  return tracks
    .map((t) => {
      const selected = t.track_id === selectedId ? " selected" : "";
      const bpm = t.tempo_bpm === null ? "-" : String(t.tempo_bpm);
      return (
        `<tr class="track-row${selected}" data-track="${escapeHtml(t.track_id)}">` +
        `<td class="mono">${escapeHtml(t.track_id)}</td>` +
        `<td>${escapeHtml(t.title)}</td>` +
        `<td>${tagChipsHtml(t.genre, "genre")}${tagChipsHtml(t.mood, "mood")}${tagChipsHtml(t.instruments, "instruments")}</td>` +
        `<td class="mono">${bpm}</td>` +
        `<td><button class="play" data-audio="${escapeHtml(t.track_id)}" title="play">&#9654;</button></td>` +
        `</tr>`
      );
    })
    .join("");
}

export function emptyTableHtml(): string {
  return '<tr><td colspan="5" class="empty-state">no tracks in the index yet</td></tr>';
}
