// Typed client for the annotation server's JSON API. All reads are GETs and
// idempotent; the only mutation is the rating POST.
export class ApiError extends Error {
    constructor(status, message) {
        super(`${status}: ${message}`);
        this.status = status;
    }
}
async function readError(resp) {
    try {
        const body = await resp.json();
        return typeof body.error === "string" ? body.error : JSON.stringify(body);
    }
    catch {
        return resp.statusText;
    }
}
export class ApiClient {
    constructor(baseUrl = "") {
        this.baseUrl = baseUrl;
    }
    async getJson(path) {
        const resp = await fetch(this.baseUrl + path);
        if (!resp.ok) {
            throw new ApiError(resp.status, await readError(resp));
        }
        return resp.json();
    }
    async createSession(subjectId) {
        const q = encodeURIComponent(subjectId);
        return (await this.getJson(`/api/session?subject_id=${q}`));
    }
    async getItem(sessionId, index) {
        const path = `/api/session/${sessionId}/item/${index}`;
        return (await this.getJson(path));
    }
    async submitRating(sessionId, index, body) {
        const resp = await fetch(`${this.baseUrl}/api/session/${sessionId}/item/${index}/rating`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(body),
        });
        if (resp.status === 200 || resp.status === 400) {
            return (await resp.json());
        }
        throw new ApiError(resp.status, await readError(resp));
    }
    async exportLines() {
        const resp = await fetch(`${this.baseUrl}/api/export`);
        if (!resp.ok) {
            throw new ApiError(resp.status, await readError(resp));
        }
        const text = await resp.text();
        return text.split("\n").filter((line) => line.length > 0);
    }
}
