export interface Center {
  slice: number;
  row: number;
  col: number;
}

export type AnnotationStatus = "proposed" | "confirmed" | "rejected" | "added";

export interface Annotation {
  id: string;
  center: Center;
  radiusVox: number;
  status: AnnotationStatus;
  confidence?: number | null;
  provenance?: Record<string, unknown>;
}

export type Action =
  | { type: "confirm"; id: string }
  | { type: "reject"; id: string }
  | { type: "add"; center: Center; radiusVox: number }
  | { type: "move"; id: string; center: Center }
  | { type: "delete"; id: string }
  | { type: "markReviewed" };

export interface SeriesMeta {
  rows: number;
  cols: number;
  slices: number;
}

export interface WindowLevel {
  window: number; // full intensity width mapped onto the gray ramp
  level: number; // intensity shown as mid-gray
}

export interface ViewerState {
  seriesUid: string;
  meta: SeriesMeta;
  sliceIndex: number;
  windowLevel: WindowLevel;
  overlaysVisible: boolean;
  annotations: Annotation[];
  version: number;
  reviewed: boolean;
  /** Staged gestures, not yet sent to the server. */
  pending: Action[];
  addMode: boolean;
}
