import { ApiClient } from "./api.js";
import {
  canSubmit,
  decodeStateFromHash,
  encodeStateToHash,
  initialState,
  setWeight,
  submitBlockedReason,
  type QueryState,
} from "./state.js";
import {
  emptyTableHtml,
  filterTracks,
  renderTrackRowsHtml,
  sortTracks,
  type SortKey,
  type TableState,
} from "./table.js";
import { renderResultRowsHtml, weightsSummary } from "./results.js";
import { DIMENSIONS, type TrackInfo } from "./types.js";

const api = new ApiClient();
let state: QueryState = initialState();
let tracks: TrackInfo[] = [];
let table: TableState = { filter: "", sortKey: "track_id", ascending: true };

const $ = <T extends HTMLElement>(selector: string): T => {
  const node = document.querySelector(selector);
  if (!node) throw new Error(`missing element ${selector}`);
  return node as T;
};

const player = new Audio();

function playTrack(trackId: string): void {
  player.src = api.audioUrl(trackId);
  void player.play();
}

function syncHash(): void {
  history.replaceState(null, "", encodeStateToHash(state));
}

function renderSliders(): void {
  for (const dimension of DIMENSIONS) {
    const input = $<HTMLInputElement>(`#weight-${dimension}`);
    const label = $<HTMLElement>(`#weight-${dimension}-value`);
    input.value = String(state.weights[dimension]);
    label.textContent = state.weights[dimension].toFixed(2);
  }
}

function renderSubmit(): void {
  const button = $<HTMLButtonElement>("#submit");
  button.disabled = !canSubmit(state);
  const hint = submitBlockedReason(state);
  $<HTMLElement>("#submit-hint").textContent = state.pending ? "searching..." : hint ?? "";
}

function renderSelection(): void {
  const label = $<HTMLElement>("#query-selection");
  if (state.selection === null) {
    label.textContent = "no query selected";
  } else if (state.selection.kind === "track") {
    label.textContent = `query: ${state.selection.trackId}`;
  } else {
    label.textContent = `query: uploaded clip (${state.selection.label})`;
  }
}

function renderTable(): void {
  const body = $<HTMLElement>("#track-rows");
  const visible = sortTracks(filterTracks(tracks, table.filter), table.sortKey, table.ascending);
  const selectedId = state.selection?.kind === "track" ? state.selection.trackId : null;
  body.innerHTML = tracks.length === 0 ? emptyTableHtml() : renderTrackRowsHtml(visible, selectedId);
  $<HTMLElement>("#track-count").textContent = `${visible.length} / ${tracks.length} tracks`;
}

function renderResults(): void {
  const list = $<HTMLElement>("#result-rows");
  if (state.results === null) {
    list.innerHTML = '<li class="empty-state">run a query to see neighbors</li>';
    $<HTMLElement>("#result-weights").textContent = "";
  } else {
    list.innerHTML = renderResultRowsHtml(state.results);
    const echoed = state.resultWeights ? weightsSummary(state.resultWeights) : "";
    $<HTMLElement>("#result-weights").textContent = echoed ? `weights: ${echoed}` : "";
  }
}

function renderError(): void {
  const banner = $<HTMLElement>("#error-banner");
  banner.textContent = state.error ?? "";
  banner.hidden = state.error === null;
}

function renderAll(): void {
  renderSliders();
  renderSubmit();
  renderSelection();
  renderTable();
  renderResults();
  renderError();
  syncHash();
}

async function submitQuery(): Promise<void> {
  if (!canSubmit(state) || state.selection === null) return;
  const selection = state.selection;
  state = { ...state, pending: true, error: null };
  renderSubmit();
  try {
    const response = await api.query(selection, state.weights, state.k);
    state = {
      ...state,
      pending: false,
      results: response.results,
      resultWeights: response.weights,
      error: null,
    };
  } catch (error) {
    if (error instanceof DOMException && error.name === "AbortError") return;
    state = { ...state, pending: false, error: String((error as Error).message ?? error) };
  }
  renderAll();
}

async function loadTracks(): Promise<void> {
  try {
    tracks = await api.tracks();
    state = { ...state, error: null };
  } catch (error) {
    state = { ...state, error: `cannot reach the service: ${(error as Error).message}. ` };
    $<HTMLElement>("#error-banner").innerHTML = "";
    tracks = [];
  }
  renderAll();
  if (state.error !== null) {
    const banner = $<HTMLElement>("#error-banner");
    const retry = document.createElement("button");
    retry.textContent = "retry";
    retry.addEventListener("click", () => void loadTracks());
    banner.appendChild(retry);
  }
}

function wireEvents(): void {
  for (const dimension of DIMENSIONS) {
    const input = $<HTMLInputElement>(`#weight-${dimension}`);
    input.addEventListener("input", () => {
      state = setWeight(state, dimension, Number(input.value));
      renderSliders();
      renderSubmit();
      syncHash();
    });
  }
  $<HTMLInputElement>("#k-input").addEventListener("change", (event) => {
    const value = Number((event.target as HTMLInputElement).value);
    if (Number.isInteger(value) && value >= 1) {
      state = { ...state, k: value };
      syncHash();
    }
  });
  $<HTMLButtonElement>("#submit").addEventListener("click", () => void submitQuery());
  $<HTMLInputElement>("#track-filter").addEventListener("input", (event) => {
    table = { ...table, filter: (event.target as HTMLInputElement).value };
    renderTable();
  });
  document.querySelectorAll<HTMLElement>("th[data-sort]").forEach((th) => {
    th.addEventListener("click", () => {
      const key = th.dataset.sort as SortKey;
      table =
        table.sortKey === key
          ? { ...table, ascending: !table.ascending }
          : { ...table, sortKey: key, ascending: true };
      renderTable();
    });
  });
  $<HTMLElement>("#track-rows").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const play = target.closest<HTMLElement>("[data-audio]");
    if (play) {
      playTrack(play.dataset.audio as string);
      event.stopPropagation();
      return;
    }
    const row = target.closest<HTMLElement>("[data-track]");
    if (row) {
      state = { ...state, selection: { kind: "track", trackId: row.dataset.track as string } };
      renderAll();
    }
  });
  $<HTMLElement>("#result-rows").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const play = target.closest<HTMLElement>("[data-audio]");
    if (play) {
      playTrack(play.dataset.audio as string);
      return;
    }
    const requery = target.closest<HTMLElement>("[data-requery]");
    if (requery) {
      state = { ...state, selection: { kind: "track", trackId: requery.dataset.requery as string } };
      renderAll();
      void submitQuery();
    }
  });
  $<HTMLInputElement>("#clip-input").addEventListener("change", async (event) => {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    const buffer = await file.arrayBuffer();
    let binary = "";
    const bytes = new Uint8Array(buffer);
    for (let i = 0; i < bytes.length; i += 0x8000) {
      binary += String.fromCharCode(...bytes.subarray(i, i + 0x8000));
    }
    state = {
      ...state,
      selection: { kind: "clip", clipB64: btoa(binary), label: file.name },
    };
    renderAll();
  });
}

async function start(): Promise<void> {
  state = decodeStateFromHash(location.hash, state);
  wireEvents();
  renderAll();
  await loadTracks();
}

void start();
