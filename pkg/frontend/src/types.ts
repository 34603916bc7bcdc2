export interface TrackInfo {
  track_id: string;
  title: string;
  genre: string[];
  mood: string[];
  instruments: string[];
  tempo_bpm: number | null;
}

export interface Weights {
  genre: number;
  mood: number;
  instruments: number;
  tempo: number;
}

export const DIMENSIONS = ["genre", "mood", "instruments", "tempo"] as const;
export type Dimension = (typeof DIMENSIONS)[number];

export interface QueryResult {
  track_id: string;
  distance: number;
  tags: { genre: string[]; mood: string[]; instruments: string[] };
  bpm: number | null;
}

export interface QueryResponse {
  results: QueryResult[];
  weights: Weights;
  k: number;
}

export type QuerySelection =
  | { kind: "track"; trackId: string }
  | { kind: "clip"; clipB64: string; label: string };
