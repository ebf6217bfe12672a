/** Typed client for the annotation service HTTP API. */

export interface GradesPayload {
  motion: number;
  contrast: number;
  noise: number;
}

export interface AnnotationPayload {
  rater_id: string;
  straight_reject: boolean;
  gadolinium?: boolean | null;
  grades?: GradesPayload | null;
  timestamp?: string;
}

export interface AnnotationRecord {
  image_id: string;
  rater_id: string;
  straight_reject: boolean;
  gadolinium: boolean | null;
  grades: GradesPayload | null;
  timestamp: string;
}

export interface NextImageResponse {
  exhausted: boolean;
  image_id?: string;
  slices?: Record<string, string>;
}

export interface ImageAnnotations {
  image_id: string;
  current: Record<string, AnnotationRecord>;
  history: Record<string, { version: number; annotation: AnnotationRecord }[]>;
  slices: Record<string, string>;
}

export interface ProgressSummary {
  per_rater: Record<string, { done: number; remaining: number }>;
  adjudication_queue: string[];
  consensus_distribution: Record<string, number>;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class AnnotationApi {
  constructor(private base: string = "") {}

  nextImage(raterId: string): Promise<NextImageResponse> {
    return request(`${this.base}/api/raters/${encodeURIComponent(raterId)}/next`);
  }

  getAnnotations(imageId: string): Promise<ImageAnnotations> {
    return request(`${this.base}/api/images/${encodeURIComponent(imageId)}/annotations`);
  }

  submitAnnotation(imageId: string, payload: AnnotationPayload): Promise<{ version: number }> {
    return request(`${this.base}/api/images/${encodeURIComponent(imageId)}/annotations`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  resolveSr(imageId: string, keepSr: boolean): Promise<{ consensus: Record<string, unknown> }> {
    return request(`${this.base}/api/images/${encodeURIComponent(imageId)}/consensus-resolution`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ keep_sr: keepSr }),
    });
  }

  progress(): Promise<ProgressSummary> {
    return request(`${this.base}/api/progress`);
  }

  async exportLabels(): Promise<string> {
    const response = await fetch(`${this.base}/api/export`);
    if (!response.ok) throw new ApiError(response.status, response.statusText);
    return response.text();
  }

  sliceUrl(imageId: string, plane: string): string {
    return `${this.base}/api/images/${encodeURIComponent(imageId)}/slices/${plane}.png`;
  }
}
