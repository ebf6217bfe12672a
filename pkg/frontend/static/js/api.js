/** Typed client for the annotation service HTTP API. */
export class ApiError extends Error {
    constructor(status, message) {
        super(message);
        this.status = status;
    }
}
async function request(url, init) {
    const response = await fetch(url, init);
    if (!response.ok) {
        let detail = response.statusText;
        try {
            const body = await response.json();
            if (body && typeof body.detail === "string")
                detail = body.detail;
        }
        catch {
            // non-JSON error body; keep the status text
        }
        throw new ApiError(response.status, detail);
    }
    return (await response.json());
}
export class AnnotationApi {
    constructor(base = "") {
        this.base = base;
    }
    nextImage(raterId) {
        return request(`${this.base}/api/raters/${encodeURIComponent(raterId)}/next`);
    }
    getAnnotations(imageId) {
        return request(`${this.base}/api/images/${encodeURIComponent(imageId)}/annotations`);
    }
    submitAnnotation(imageId, payload) {
        return request(`${this.base}/api/images/${encodeURIComponent(imageId)}/annotations`, {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify(payload),
        });
    }
    resolveSr(imageId, keepSr) {
        return request(`${this.base}/api/images/${encodeURIComponent(imageId)}/consensus-resolution`, {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify({ keep_sr: keepSr }),
        });
    }
    progress() {
        return request(`${this.base}/api/progress`);
    }
    async exportLabels() {
        const response = await fetch(`${this.base}/api/export`);
        if (!response.ok)
            throw new ApiError(response.status, response.statusText);
        return response.text();
    }
    sliceUrl(imageId, plane) {
        return `${this.base}/api/images/${encodeURIComponent(imageId)}/slices/${plane}.png`;
    }
}
