import type { QuerySelection, Weights } from "./types.js";

/**
 * Canonical request body for POST /api/query.
 *
 * Serialization is byte-stable: fixed key order, numbers via JSON.stringify
 * (so 1 stays "1", 0.5 stays "0.5"). Slider values must survive into the
 * payload exactly as set, with no rounding beyond the slider's own step.
 */
export function buildQueryPayload(
  selection: QuerySelection,
  weights: Weights,
  k: number,
): string {
  const query =
    selection.kind === "track"
      ? { track_id: selection.trackId }
      : { clip_b64: selection.clipB64 };
  return JSON.stringify({
    query,
    weights: {
      genre: weights.genre,
      mood: weights.mood,
      instruments: weights.instruments,
      tempo: weights.tempo,
    },
    k,
  });
}
