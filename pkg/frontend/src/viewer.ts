import { AnnotationClient, ArchiveClient, VersionConflict } from "./api.js";
import { canSave, clearPending, initialState } from "./state.js";
import type { SeriesMeta, ViewerState } from "./types.js";

export interface LoadedSeries {
  state: ViewerState;
  slices: Uint16Array[];
  meta: SeriesMeta;
}

/** Fetch pixels and annotations and build the initial viewer state. */
export async function loadSeries(
  archive: ArchiveClient,
  annotations: AnnotationClient,
  seriesUid: string,
): Promise<LoadedSeries> {
  const { slices, meta } = await archive.fetchVolume(seriesUid);
  const set = await annotations.getAnnotations(seriesUid);
  return {
    state: initialState(seriesUid, meta, set.annotations, set.version, set.reviewed),
    slices,
    meta,
  };
}

export type SaveOutcome =
  | { kind: "saved"; state: ViewerState }
  | { kind: "conflict"; state: ViewerState; serverVersion: number }
  | { kind: "nothing-to-save"; state: ViewerState };

/**
 * Push the staged batch. On success the annotation set is reloaded and
 * pending cleared; on a version conflict the staged actions are kept so
 * the user can reload, review, and retry.
 */
export async function save(
  client: AnnotationClient,
  state: ViewerState,
): Promise<SaveOutcome> {
  if (!canSave(state)) return { kind: "nothing-to-save", state };
  try {
    await client.adjudicate(state.seriesUid, state.version, state.pending);
  } catch (err) {
    if (err instanceof VersionConflict) {
      return { kind: "conflict", state, serverVersion: err.currentVersion };
    }
    throw err;
  }
  const set = await client.getAnnotations(state.seriesUid);
  return {
    kind: "saved",
    state: clearPending({
      ...state,
      annotations: set.annotations,
      version: set.version,
      reviewed: set.reviewed,
    }),
  };
}

/** After a conflict: pick up the server's state but keep the staged batch. */
export async function reloadKeepingPending(
  client: AnnotationClient,
  state: ViewerState,
): Promise<ViewerState> {
  const set = await client.getAnnotations(state.seriesUid);
  return {
    ...state,
    annotations: set.annotations,
    version: set.version,
    reviewed: set.reviewed,
  };
}
