import { DIMENSIONS, type Dimension, type QueryResult, type QuerySelection, type Weights } from "./types.js";

export const WEIGHT_MIN = 0;
export const WEIGHT_MAX = 2;
export const DEFAULT_K = 10;

export interface QueryState {
  selection: QuerySelection | null;
  weights: Weights;
  k: number;
  results: QueryResult[] | null;
  resultWeights: Weights | null; // weights echoed with the last result list
  error: string | null;
  pending: boolean;
}

export function initialState(): QueryState {
  return {
    selection: null,
    weights: { genre: 1, mood: 1, instruments: 1, tempo: 1 },
    k: DEFAULT_K,
    results: null,
    resultWeights: null,
    error: null,
    pending: false,
  };
}

export function clampWeight(value: number): number {
  if (Number.isNaN(value)) return WEIGHT_MIN;
  return Math.min(WEIGHT_MAX, Math.max(WEIGHT_MIN, value));
}

export function setWeight(state: QueryState, dimension: Dimension, value: number): QueryState {
  return { ...state, weights: { ...state.weights, [dimension]: clampWeight(value) } };
}

export function allWeightsZero(weights: Weights): boolean {
  return DIMENSIONS.every((d) => weights[d] === 0);
}

/** Submission is allowed once a query is selected and any weight is positive. */
export function canSubmit(state: QueryState): boolean {
  return state.selection !== null && !allWeightsZero(state.weights) && !state.pending;
}

export function submitBlockedReason(state: QueryState): string | null {
  if (state.selection === null) return "pick a query track or upload a clip first";
  if (allWeightsZero(state.weights)) return "raise at least one dimension weight above zero";
  return null;
}

/**
 * Shareable-link encoding of the query selection and weights. Only indexed
 * track selections are encodable; uploaded clips stay local.
 */
export function encodeStateToHash(state: QueryState): string {
  const params = new URLSearchParams();
  if (state.selection?.kind === "track") params.set("q", state.selection.trackId);
  for (const d of DIMENSIONS) params.set(d[0] as string, String(state.weights[d]));
  params.set("k", String(state.k));
  return "#" + params.toString();
}

export function decodeStateFromHash(hash: string, base?: QueryState): QueryState {
  const state = base ?? initialState();
  const params = new URLSearchParams(hash.replace(/^#/, ""));
  const weights = { ...state.weights };
  for (const d of DIMENSIONS) {
    const raw = params.get(d[0] as string);
    if (raw !== null && raw !== "" && !Number.isNaN(Number(raw))) {
      weights[d] = clampWeight(Number(raw));
    }
  }
  const trackId = params.get("q");
  const k = Number(params.get("k") ?? state.k);
  return {
    ...state,
    weights,
    k: Number.isInteger(k) && k >= 1 ? k : state.k,
    selection: trackId ? { kind: "track", trackId } : state.selection,
  };
}
