import { escapeHtml, tagChipsHtml } from "./table.js";
import { DIMENSIONS, type QueryResult, type Weights } from "./types.js";

export function weightsSummary(weights: Weights): string {
  return DIMENSIONS.map((d) => `${d} ${weights[d]}`).join(" / ");
}

export function renderResultRowsHtml(results: QueryResult[]): string {
  if (results.length === 0) {
    return '<li class="empty-state">no results</li>';
  }
  return results
    .map((r, rank) => {
      const bpm = r.bpm === null ? "-" : String(r.bpm);
      return (
        `<li class="result-row" data-track="${escapeHtml(r.track_id)}">` +
        `<span class="rank">${rank + 1}</span>` +
        `<span class="mono result-id">${escapeHtml(r.track_id)}</span>` +
        `<span class="distance mono">${r.distance.toFixed(4)}</span>` +
        `<span class="tags">${tagChipsHtml(r.tags.genre, "genre")}${tagChipsHtml(r.tags.mood, "mood")}${tagChipsHtml(r.tags.instruments, "instruments")}<span class="chip chip-bpm">${bpm} bpm</span></span>` +
        `<button class="play" data-audio="${escapeHtml(r.track_id)}" title="play">&#9654;</button>` +
        `<button class="requery" data-requery="${escapeHtml(r.track_id)}" title="use as query">&#8635;</button>` +
        `</li>`
      );
    })
    .join("");
}
