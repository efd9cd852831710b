import { describe, expect, it } from "vitest";
import {
  addAt,
  canSave,
  clickOverlay,
  dragTo,
  initialState,
  previewAnnotations,
  removeStagedAdd,
  scrollSlices,
  setAddMode,
  setSlice,
  stageMarkReviewed,
  toggleDecision,
} from "../src/state.js";
import type { Annotation } from "../src/types.js";

const META = { rows: 24, cols: 24, slices: 16 };

function ann(id: string, slice: number, status: Annotation["status"] = "proposed"): Annotation {
  return { id, center: { slice, row: 10, col: 10 }, radiusVox: 3, status };
}

function fresh(annotations: Annotation[] = [ann("a-1", 4), ann("a-2", 9)]) {
  return initialState("1.2.3", META, annotations, 1, false);
}

describe("slice navigation", () => {
  it("clamps to the series depth", () => {
    let s = fresh();
    s = setSlice(s, 99);
    expect(s.sliceIndex).toBe(15);
    s = scrollSlices(s, -99);
    expect(s.sliceIndex).toBe(0);
    s = scrollSlices(s, 3);
    expect(s.sliceIndex).toBe(3);
  });
});

describe("decision staging", () => {
  it("toggling the same decision twice cancels out", () => {
    let s = fresh();
    s = toggleDecision(s, "a-1", "reject");
    expect(s.pending).toEqual([{ type: "reject", id: "a-1" }]);
    s = toggleDecision(s, "a-1", "reject");
    expect(s.pending).toEqual([]);
  });

  it("a different decision replaces the staged one", () => {
    let s = fresh();
    s = toggleDecision(s, "a-1", "confirm");
    s = toggleDecision(s, "a-1", "reject");
    expect(s.pending).toEqual([{ type: "reject", id: "a-1" }]);
  });

  it("click cycles none -> confirm -> reject -> none", () => {
    let s = fresh();
    s = clickOverlay(s, "a-1");
    expect(s.pending).toEqual([{ type: "confirm", id: "a-1" }]);
    s = clickOverlay(s, "a-1");
    expect(s.pending).toEqual([{ type: "reject", id: "a-1" }]);
    s = clickOverlay(s, "a-1");
    expect(s.pending).toEqual([]);
  });

  it("ignores unknown ids", () => {
    const s = toggleDecision(fresh(), "nope", "confirm");
    expect(s.pending).toEqual([]);
  });
});

describe("adds and moves", () => {
  it("stages adds only in add mode and only inside the volume", () => {
    let s = fresh();
    s = addAt(s, { slice: 12, row: 40, col: 33 });
    expect(s.pending).toEqual([]); // not in add mode
    s = setAddMode(s, true);
    s = addAt(s, { slice: 12, row: 40, col: 33 });
    expect(s.pending).toEqual([]); // row 40 outside 24-row volume
    s = addAt(s, { slice: 12, row: 20, col: 13 });
    expect(s.pending).toEqual([
      { type: "add", center: { slice: 12, row: 20, col: 13 }, radiusVox: 3.0 },
    ]);
    s = removeStagedAdd(s, 0);
    expect(s.pending).toEqual([]);
  });

  it("a second drag of the same annotation replaces the staged move", () => {
    let s = fresh();
    s = dragTo(s, "a-2", { slice: 9, row: 1, col: 1 });
    s = dragTo(s, "a-2", { slice: 9, row: 2, col: 2 });
    expect(s.pending).toEqual([{ type: "move", id: "a-2", center: { slice: 9, row: 2, col: 2 } }]);
  });
});

describe("preview and save gating", () => {
  it("reduces the gesture sequence onto the annotation set", () => {
    let s = fresh();
    s = toggleDecision(s, "a-1", "reject");
    s = toggleDecision(s, "a-2", "confirm");
    s = dragTo(s, "a-2", { slice: 9, row: 3, col: 4 });
    s = setAddMode(s, true);
    s = addAt(s, { slice: 2, row: 5, col: 6 });
    const preview = previewAnnotations(s);
    expect(preview.map((a) => a.status).sort()).toEqual(["added", "confirmed"]);
    const moved = preview.find((a) => a.id === "a-2")!;
    expect(moved.center).toEqual({ slice: 9, row: 3, col: 4 });
  });

  it("save is enabled only with staged actions", () => {
    let s = fresh();
    expect(canSave(s)).toBe(false);
    s = stageMarkReviewed(s);
    expect(canSave(s)).toBe(true);
    expect(stageMarkReviewed(s).pending).toHaveLength(1); // idempotent
  });
});
