import { AnnotationClient, ArchiveClient } from "./api.js";
import { hitTest, overlaysForSlice, renderSlice } from "./render.js";
import {
  addAt,
  clickOverlay,
  dragTo,
  previewAnnotations,
  scrollSlices,
  setAddMode,
  setWindowLevel,
  stageMarkReviewed,
  toggleOverlays,
} from "./state.js";
import type { ViewerState } from "./types.js";
import { loadSeries, reloadKeepingPending, save } from "./viewer.js";

const OVERLAY_COLORS: Record<string, string> = {
  proposed: "#ffd000",
  confirmed: "#30d158",
  added: "#30a0ff",
  staged: "#b070ff",
  rejected: "#888888",
};

function query(name: string, fallback: string): string {
  return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

async function boot(): Promise<void> {
  const archiveBase = query("archive", "http://127.0.0.1:8081");
  const annotationBase = query("annotations", "http://127.0.0.1:8082");
  const seriesUid = query("series", "");
  const archive = new ArchiveClient(archiveBase);
  const annotations = new AnnotationClient(annotationBase);

  const canvas = document.getElementById("view") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  const status = document.getElementById("status")!;
  const addToggle = document.getElementById("add-mode") as HTMLInputElement;
  const overlayToggle = document.getElementById("overlays") as HTMLInputElement;
  const saveButton = document.getElementById("save") as HTMLButtonElement;
  const reviewedButton = document.getElementById("mark-reviewed") as HTMLButtonElement;

  const loaded = await loadSeries(archive, annotations, seriesUid);
  let state: ViewerState = loaded.state;
  let dragTarget: string | null = null;
  const scale = 6;
  canvas.width = loaded.meta.cols * scale;
  canvas.height = loaded.meta.rows * scale;

  function redraw(): void {
    const img = renderSlice(loaded.slices[state.sliceIndex], loaded.meta, state.windowLevel);
    const off = new OffscreenCanvas(img.width, img.height);
    off.getContext("2d")!.putImageData(new ImageData(img.data, img.width, img.height), 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
    if (state.overlaysVisible) {
      for (const o of overlaysForSlice(previewAnnotations(state), state.sliceIndex, loaded.meta.slices)) {
        ctx.strokeStyle = OVERLAY_COLORS[o.status] ?? "#ffffff";
        ctx.lineWidth = 2;
        ctx.beginPath();
        ctx.arc(o.x * scale, o.y * scale, o.radius * scale, 0, 2 * Math.PI);
        ctx.stroke();
      }
    }
    saveButton.disabled = state.pending.length === 0;
    status.textContent =
      `${seriesUid} · slice ${state.sliceIndex + 1}/${loaded.meta.slices}` +
      ` · v${state.version} · ${state.pending.length} staged` +
      (state.reviewed ? " · reviewed" : "");
  }

  function canvasPoint(ev: MouseEvent): { row: number; col: number } {
    const rect = canvas.getBoundingClientRect();
    return {
      col: ((ev.clientX - rect.left) / rect.width) * loaded.meta.cols,
      row: ((ev.clientY - rect.top) / rect.height) * loaded.meta.rows,
    };
  }

  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    state = scrollSlices(state, Math.sign(ev.deltaY));
    redraw();
  });
  window.addEventListener("keydown", (ev) => {
    if (ev.key === "ArrowUp" || ev.key === "ArrowDown") {
      state = scrollSlices(state, ev.key === "ArrowUp" ? -1 : 1);
      redraw();
    }
  });
  canvas.addEventListener("mousedown", (ev) => {
    const p = canvasPoint(ev);
    const hit = hitTest(
      overlaysForSlice(previewAnnotations(state), state.sliceIndex, loaded.meta.slices),
      p.col,
      p.row,
    );
    dragTarget = hit && !hit.id.startsWith("staged-") ? hit.id : null;
  });
  canvas.addEventListener("mouseup", (ev) => {
    const p = canvasPoint(ev);
    const overlays = overlaysForSlice(previewAnnotations(state), state.sliceIndex, loaded.meta.slices);
    const hit = hitTest(overlays, p.col, p.row);
    if (dragTarget && (!hit || hit.id !== dragTarget)) {
      state = dragTo(state, dragTarget, {
        slice: state.sliceIndex,
        row: p.row - 0.5,
        col: p.col - 0.5,
      });
    } else if (hit && !hit.id.startsWith("staged-")) {
      state = clickOverlay(state, hit.id);
    } else if (!hit) {
      state = addAt(state, { slice: state.sliceIndex, row: p.row - 0.5, col: p.col - 0.5 });
    }
    dragTarget = null;
    redraw();
  });
  addToggle.addEventListener("change", () => {
    state = setAddMode(state, addToggle.checked);
  });
  overlayToggle.addEventListener("change", () => {
    state = toggleOverlays(state);
    redraw();
  });
  reviewedButton.addEventListener("click", () => {
    state = stageMarkReviewed(state);
    redraw();
  });
  saveButton.addEventListener("click", async () => {
    const outcome = await save(annotations, state);
    if (outcome.kind === "conflict") {
      status.textContent = `conflict: server moved to v${outcome.serverVersion}; reloading, your ${state.pending.length} staged actions are kept`;
      state = await reloadKeepingPending(annotations, state);
    } else {
      state = outcome.state;
    }
    redraw();
  });

  redraw();
}

boot().catch((err) => {
  document.getElementById("status")!.textContent = `failed to load: ${err}`;
});
