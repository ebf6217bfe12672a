/** In-memory implementation of the annotation service HTTP contract.
 *
 * Installed as a fetch stub so DOM tests exercise the real client, views and
 * form logic against faithful endpoint semantics: versioned submissions,
 * per-rater queues, max-merge consensus and the SR adjudication queue.
 */

import type { AnnotationPayload, AnnotationRecord } from "../src/api.js";

interface Stored {
  record: AnnotationRecord;
  version: number;
}

// 1x1 gray PNG, enough for <img> rendering in jsdom
const PNG_BYTES = Uint8Array.from(
  atob(
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAAAAAA6fptVAAAACklEQVR4nGNiAAAABgADNjd8qAAAAABJRU5ErkJggg==",
  ),
  (c) => c.charCodeAt(0),
);

export class FakeServer {
  history = new Map<string, Map<string, Stored[]>>();
  resolutions = new Map<string, boolean>();
  requests: { method: string; url: string }[] = [];

  constructor(
    public imageIds: string[],
    public raters: [string, string],
  ) {
    for (const imageId of imageIds) {
      const perRater = new Map<string, Stored[]>();
      for (const rater of raters) perRater.set(rater, []);
      this.history.set(imageId, perRater);
    }
  }

  install(): void {
    globalThis.fetch = (input: RequestInfo | URL, init?: RequestInit) =>
      Promise.resolve(this.handle(String(input), init));
  }

  private current(imageId: string): Map<string, AnnotationRecord> {
    const out = new Map<string, AnnotationRecord>();
    for (const [rater, versions] of this.history.get(imageId) ?? []) {
      if (versions.length > 0) out.set(rater, versions[versions.length - 1].record);
    }
    return out;
  }

  private consensus(imageId: string): Record<string, unknown> | null {
    const current = this.current(imageId);
    if (current.size < 2) return null;
    const [a, b] = this.raters.map((r) => current.get(r)!);
    if (a.straight_reject !== b.straight_reject) {
      const resolution = this.resolutions.get(imageId);
      if (resolution === undefined) return null;
      if (resolution) {
        return { image_id: imageId, straight_reject: true, sr_adjudicated: true, gadolinium: null, grades: null, tier: null };
      }
      const kept = a.straight_reject ? b : a;
      return this.gradedConsensus(imageId, kept, kept, true);
    }
    if (a.straight_reject) {
      return { image_id: imageId, straight_reject: true, sr_adjudicated: false, gadolinium: null, grades: null, tier: null };
    }
    return this.gradedConsensus(imageId, a, b, false);
  }

  private gradedConsensus(
    imageId: string,
    a: AnnotationRecord,
    b: AnnotationRecord,
    adjudicated: boolean,
  ): Record<string, unknown> {
    const grades = {
      motion: Math.max(a.grades!.motion, b.grades!.motion),
      contrast: Math.max(a.grades!.contrast, b.grades!.contrast),
      noise: Math.max(a.grades!.noise, b.grades!.noise),
    };
    const values = [grades.motion, grades.contrast, grades.noise];
    const tier = values.some((g) => g === 2) ? 3 : values.every((g) => g === 0) ? 1 : 2;
    return {
      image_id: imageId,
      straight_reject: false,
      sr_adjudicated: adjudicated,
      gadolinium: Boolean(a.gadolinium) || Boolean(b.gadolinium),
      grades,
      tier,
    };
  }

  adjudicationQueue(): string[] {
    return this.imageIds.filter((imageId) => {
      const current = this.current(imageId);
      if (current.size < 2 || this.resolutions.has(imageId)) return false;
      const [a, b] = this.raters.map((r) => current.get(r)!);
      return a.straight_reject !== b.straight_reject;
    });
  }

  private json(body: unknown, status = 200): Response {
    return new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });
  }

  handle(url: string, init?: RequestInit): Response {
    const method = init?.method ?? "GET";
    this.requests.push({ method, url });
    const path = url.replace(/^https?:\/\/[^/]+/, "");

    let match = path.match(/^\/api\/raters\/([^/]+)\/next$/);
    if (match) {
      const rater = decodeURIComponent(match[1]);
      if (!this.raters.includes(rater)) return this.json({ detail: "unknown rater" }, 404);
      for (const imageId of this.imageIds) {
        if ((this.history.get(imageId)!.get(rater) ?? []).length === 0) {
          return this.json({
            exhausted: false,
            image_id: imageId,
            slices: Object.fromEntries(
              ["axial", "coronal", "sagittal"].map((p) => [p, `/api/images/${imageId}/slices/${p}.png`]),
            ),
          });
        }
      }
      return this.json({ exhausted: true });
    }

    match = path.match(/^\/api\/images\/([^/]+)\/slices\/(\w+)\.png$/);
    if (match) {
      if (!this.history.has(decodeURIComponent(match[1]))) return this.json({ detail: "unknown image" }, 404);
      return new Response(PNG_BYTES, { status: 200, headers: { "content-type": "image/png" } });
    }

    match = path.match(/^\/api\/images\/([^/]+)\/annotations$/);
    if (match) {
      const imageId = decodeURIComponent(match[1]);
      const perRater = this.history.get(imageId);
      if (!perRater) return this.json({ detail: `unknown image ${imageId}` }, 404);
      if (method === "POST") {
        const payload = JSON.parse(String(init?.body)) as AnnotationPayload;
        if (payload.straight_reject && (payload.grades || payload.gadolinium != null)) {
          return this.json({ detail: "SR annotations carry no grades" }, 422);
        }
        if (!payload.straight_reject && (!payload.grades || payload.gadolinium == null)) {
          return this.json({ detail: "non-SR annotations need grades and gadolinium" }, 422);
        }
        const record: AnnotationRecord = {
          image_id: imageId,
          rater_id: payload.rater_id,
          straight_reject: payload.straight_reject,
          gadolinium: payload.gadolinium ?? null,
          grades: payload.grades ?? null,
          timestamp: payload.timestamp ?? "",
        };
        const versions = perRater.get(payload.rater_id);
        if (!versions) return this.json({ detail: "unknown rater" }, 404);
        versions.push({ record, version: versions.length + 1 });
        this.resolutions.delete(imageId);
        return this.json({ image_id: imageId, version: versions.length });
      }
      return this.json({
        image_id: imageId,
        current: Object.fromEntries(this.current(imageId)),
        history: Object.fromEntries(
          [...perRater.entries()].map(([rater, versions]) => [
            rater,
            versions.map((s) => ({ version: s.version, annotation: s.record })),
          ]),
        ),
        slices: Object.fromEntries(
          ["axial", "coronal", "sagittal"].map((p) => [p, `/api/images/${imageId}/slices/${p}.png`]),
        ),
      });
    }

    match = path.match(/^\/api\/images\/([^/]+)\/consensus-resolution$/);
    if (match && method === "POST") {
      const imageId = decodeURIComponent(match[1]);
      if (!this.history.has(imageId)) return this.json({ detail: "unknown image" }, 404);
      const current = this.current(imageId);
      if (current.size < 2) return this.json({ detail: "not ready" }, 409);
      const [a, b] = this.raters.map((r) => current.get(r)!);
      if (a.straight_reject === b.straight_reject) {
        return this.json({ detail: "no SR disagreement" }, 422);
      }
      const { keep_sr } = JSON.parse(String(init?.body)) as { keep_sr: boolean };
      this.resolutions.set(imageId, keep_sr);
      return this.json({ image_id: imageId, consensus: this.consensus(imageId) });
    }

    if (path === "/api/progress") {
      const perRater: Record<string, { done: number; remaining: number }> = {};
      for (const rater of this.raters) {
        const done = this.imageIds.filter(
          (i) => (this.history.get(i)!.get(rater) ?? []).length > 0,
        ).length;
        perRater[rater] = { done, remaining: this.imageIds.length - done };
      }
      const distribution: Record<string, number> = {};
      for (const imageId of this.imageIds) {
        if (this.current(imageId).size < 2) continue;
        const consensus = this.consensus(imageId);
        const key =
          consensus === null
            ? "pending"
            : consensus.straight_reject
              ? "sr"
              : `tier${consensus.tier}`;
        distribution[key] = (distribution[key] ?? 0) + 1;
      }
      return this.json({
        per_rater: perRater,
        adjudication_queue: this.adjudicationQueue(),
        consensus_distribution: distribution,
      });
    }

    if (path === "/api/export") {
      const lines: string[] = [];
      for (const imageId of this.imageIds) {
        if (this.current(imageId).size < 2) continue;
        const consensus = this.consensus(imageId);
        lines.push(
          JSON.stringify(
            consensus === null
              ? { image_id: imageId, pending_adjudication: true }
              : { ...consensus, pending_adjudication: false },
          ),
        );
      }
      return new Response(lines.join("\n") + (lines.length ? "\n" : ""), {
        status: 200,
        headers: { "content-type": "application/x-ndjson" },
      });
    }

    return this.json({ detail: `unhandled ${method} ${path}` }, 404);
  }
}
