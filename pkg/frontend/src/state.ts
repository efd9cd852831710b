import type {
  Action,
  Annotation,
  Center,
  SeriesMeta,
  ViewerState,
  WindowLevel,
} from "./types.js";

export function initialState(
  seriesUid: string,
  meta: SeriesMeta,
  annotations: Annotation[],
  version: number,
  reviewed: boolean,
): ViewerState {
  return {
    seriesUid,
    meta,
    sliceIndex: Math.floor(meta.slices / 2),
    windowLevel: { window: 1200, level: 600 },
    overlaysVisible: true,
    annotations,
    version,
    reviewed,
    pending: [],
    addMode: false,
  };
}

export function setSlice(state: ViewerState, index: number): ViewerState {
  const clamped = Math.min(state.meta.slices - 1, Math.max(0, Math.round(index)));
  return { ...state, sliceIndex: clamped };
}

export function scrollSlices(state: ViewerState, delta: number): ViewerState {
  return setSlice(state, state.sliceIndex + delta);
}

export function setWindowLevel(state: ViewerState, wl: WindowLevel): ViewerState {
  return { ...state, windowLevel: { window: Math.max(1, wl.window), level: wl.level } };
}

export function toggleOverlays(state: ViewerState): ViewerState {
  return { ...state, overlaysVisible: !state.overlaysVisible };
}

export function setAddMode(state: ViewerState, on: boolean): ViewerState {
  return { ...state, addMode: on };
}

function isDecision(a: Action): a is Extract<Action, { type: "confirm" | "reject" | "delete" }> {
  return a.type === "confirm" || a.type === "reject" || a.type === "delete";
}

function knownId(state: ViewerState, id: string): boolean {
  return state.annotations.some((a) => a.id === id);
}

/**
 * Stage (or un-stage) a confirm/reject/delete decision for one annotation.
 * Repeating the same gesture cancels it; a different decision replaces the
 * previous one. Invalid targets are ignored.
 */
export function toggleDecision(
  state: ViewerState,
  id: string,
  decision: "confirm" | "reject" | "delete",
): ViewerState {
  if (!knownId(state, id)) return state;
  const existing = state.pending.find((a) => isDecision(a) && a.id === id);
  const pending = state.pending.filter((a) => !(isDecision(a) && a.id === id));
  if (!(existing && existing.type === decision)) {
    pending.push({ type: decision, id });
  }
  return { ...state, pending };
}

/** Click on an overlay: cycle none -> confirm -> reject -> none. */
export function clickOverlay(state: ViewerState, id: string): ViewerState {
  const existing = state.pending.find((a) => isDecision(a) && a.id === id);
  if (!existing) return toggleDecision(state, id, "confirm");
  if (existing.type === "confirm") return toggleDecision(state, id, "reject");
  return toggleDecision(state, id, existing.type as "reject" | "delete");
}

/** Click on empty tissue while in add mode stages a new lesion. */
export function addAt(state: ViewerState, center: Center, radiusVox = 3.0): ViewerState {
  if (!state.addMode) return state;
  if (
    center.slice < 0 || center.slice > state.meta.slices - 1 ||
    center.row < 0 || center.row > state.meta.rows - 1 ||
    center.col < 0 || center.col > state.meta.cols - 1
  ) {
    return state;
  }
  return { ...state, pending: [...state.pending, { type: "add", center, radiusVox }] };
}

/** Remove the i-th staged add (e.g. click it again before saving). */
export function removeStagedAdd(state: ViewerState, index: number): ViewerState {
  const adds = state.pending.filter((a) => a.type === "add");
  const target = adds[index];
  if (!target) return state;
  return { ...state, pending: state.pending.filter((a) => a !== target) };
}

/** Drag on an overlay: stage a move, replacing any earlier move of the same id. */
export function dragTo(state: ViewerState, id: string, center: Center): ViewerState {
  if (!knownId(state, id)) return state;
  const pending = state.pending.filter((a) => !(a.type === "move" && a.id === id));
  pending.push({ type: "move", id, center });
  return { ...state, pending };
}

export function stageMarkReviewed(state: ViewerState): ViewerState {
  if (state.pending.some((a) => a.type === "markReviewed")) return state;
  return { ...state, pending: [...state.pending, { type: "markReviewed" }] };
}

export function clearPending(state: ViewerState): ViewerState {
  return { ...state, pending: [] };
}

export function canSave(state: ViewerState): boolean {
  return state.pending.length > 0;
}

/**
 * The annotation set as it would look if the staged actions were applied;
 * used for live overlay display before saving.
 */
export function previewAnnotations(state: ViewerState): Annotation[] {
  const byId = new Map(state.annotations.map((a) => [a.id, { ...a }]));
  const added: Annotation[] = [];
  let n = 0;
  for (const action of state.pending) {
    switch (action.type) {
      case "confirm": {
        const a = byId.get(action.id);
        if (a) a.status = "confirmed";
        break;
      }
      case "reject": {
        const a = byId.get(action.id);
        if (a) a.status = "rejected";
        break;
      }
      case "delete":
        byId.delete(action.id);
        break;
      case "move": {
        const a = byId.get(action.id);
        if (a) a.center = action.center;
        break;
      }
      case "add":
        added.push({
          id: `staged-${n++}`,
          center: action.center,
          radiusVox: action.radiusVox,
          status: "added",
        });
        break;
      case "markReviewed":
        break;
    }
  }
  return [...byId.values(), ...added].filter((a) => a.status !== "rejected");
}
