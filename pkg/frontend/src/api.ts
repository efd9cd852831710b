import type { Action, Annotation, SeriesMeta } from "./types.js";

export class ApiUnreachable extends Error {}

export class NotFound extends Error {}

export class VersionConflict extends Error {
  constructor(public currentVersion: number) {
    super(`stale version; server is at ${currentVersion}`);
  }
}

export interface AnnotationSet {
  version: number;
  reviewed: boolean;
  annotations: Annotation[];
}

async function request(url: string, init?: RequestInit): Promise<Response> {
  let rsp: Response;
  try {
    rsp = await fetch(url, init);
  } catch (err) {
    throw new ApiUnreachable(String(err));
  }
  if (rsp.status === 404) throw new NotFound(url);
  return rsp;
}

/** Read client for the archive HTTP API (pixels + series metadata). */
export class ArchiveClient {
  constructor(private base: string) {
    this.base = base.replace(/\/$/, "");
  }

  /** One slice of 16-bit grayscale pixels plus the series geometry. */
  async fetchSlice(
    seriesUid: string,
    index: number,
  ): Promise<{ pixels: Uint16Array; meta: SeriesMeta }> {
    const rsp = await request(`${this.base}/series/${seriesUid}/instances/${index}/pixels`);
    if (!rsp.ok) throw new ApiUnreachable(`pixels: HTTP ${rsp.status}`);
    const meta = JSON.parse(rsp.headers.get("X-Image-Meta") ?? "{}") as SeriesMeta;
    const buf = await rsp.arrayBuffer();
    return { pixels: new Uint16Array(buf), meta };
  }

  async fetchVolume(seriesUid: string): Promise<{ slices: Uint16Array[]; meta: SeriesMeta }> {
    const first = await this.fetchSlice(seriesUid, 0);
    const slices = [first.pixels];
    for (let i = 1; i < first.meta.slices; i++) {
      slices.push((await this.fetchSlice(seriesUid, i)).pixels);
    }
    return { slices, meta: first.meta };
  }
}

/** Client for the annotation HTTP API with optimistic concurrency. */
export class AnnotationClient {
  constructor(private base: string) {
    this.base = base.replace(/\/$/, "");
  }

  async getAnnotations(seriesUid: string): Promise<AnnotationSet> {
    const rsp = await request(`${this.base}/series/${seriesUid}/annotations`);
    if (!rsp.ok) throw new ApiUnreachable(`annotations: HTTP ${rsp.status}`);
    const obj = await rsp.json();
    return {
      version: obj.version,
      reviewed: Boolean(obj.reviewed),
      annotations: obj.annotations as Annotation[],
    };
  }

  /** POST the staged batch; resolves to the new version or throws VersionConflict. */
  async adjudicate(
    seriesUid: string,
    expectedVersion: number,
    actions: Action[],
    actor = "viewer",
  ): Promise<number> {
    const rsp = await request(`${this.base}/series/${seriesUid}/annotations:adjudicate`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ expectedVersion, actions, actor }),
    });
    if (rsp.status === 409) {
      const obj = await rsp.json();
      throw new VersionConflict(obj.currentVersion);
    }
    if (!rsp.ok) throw new ApiUnreachable(`adjudicate: HTTP ${rsp.status}`);
    return (await rsp.json()).version;
  }
}
