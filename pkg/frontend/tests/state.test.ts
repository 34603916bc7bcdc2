import { describe, expect, it } from "vitest";

import {
  allWeightsZero,
  canSubmit,
  clampWeight,
  decodeStateFromHash,
  encodeStateToHash,
  initialState,
  setWeight,
  submitBlockedReason,
} from "../src/state.js";

describe("weights", () => {
  it("defaults to 1.0 everywhere (plain full-space similarity)", () => {
    const state = initialState();
    expect(state.weights).toEqual({ genre: 1, mood: 1, instruments: 1, tempo: 1 });
  });

  it("clamps to the declared [0, 2] range and nothing else", () => {
    expect(clampWeight(-0.5)).toBe(0);
    expect(clampWeight(2.4)).toBe(2);
    expect(clampWeight(0.35)).toBe(0.35);
  });

  it("setWeight only touches the named dimension", () => {
    const state = setWeight(initialState(), "tempo", 1.7);
    expect(state.weights.tempo).toBe(1.7);
    expect(state.weights.genre).toBe(1);
  });
});

describe("submission gating", () => {
  it("blocks with all-zero weights and explains why", () => {
    let state = initialState();
    state = { ...state, selection: { kind: "track", trackId: "t1" } };
    for (const d of ["genre", "mood", "instruments", "tempo"] as const) {
      state = setWeight(state, d, 0);
    }
    expect(allWeightsZero(state.weights)).toBe(true);
    expect(canSubmit(state)).toBe(false);
    expect(submitBlockedReason(state)).toMatch(/weight/);
  });

  it("blocks without a selection", () => {
    const state = initialState();
    expect(canSubmit(state)).toBe(false);
    expect(submitBlockedReason(state)).toMatch(/pick|upload/);
  });

  it("allows a selected track with any positive weight", () => {
    let state = initialState();
    state = { ...state, selection: { kind: "track", trackId: "t1" } };
    expect(canSubmit(state)).toBe(true);
    expect(submitBlockedReason(state)).toBeNull();
  });
});

describe("shareable URL state", () => {
  it("round-trips selection, weights and k through the hash", () => {
    let state = initialState();
    state = { ...state, selection: { kind: "track", trackId: "syn0007" }, k: 12 };
    state = setWeight(state, "mood", 0.25);
    state = setWeight(state, "tempo", 2);
    const decoded = decodeStateFromHash(encodeStateToHash(state));
    expect(decoded.selection).toEqual({ kind: "track", trackId: "syn0007" });
    expect(decoded.weights).toEqual(state.weights);
    expect(decoded.k).toBe(12);
  });

  it("ignores garbage in the hash", () => {
    const decoded = decodeStateFromHash("#g=zzz&k=-3&nonsense");
    expect(decoded.weights.genre).toBe(1);
    expect(decoded.k).toBe(initialState().k);
  });
});
