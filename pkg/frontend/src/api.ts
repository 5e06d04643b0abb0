// Typed client for the annotation server's JSON API. All reads are GETs and
// idempotent; the only mutation is the rating POST.

export interface SessionInfo {
  session_id: string;
  n_items: number;
  seed: number;
}

export interface Question {
  id: string;
  text: string;
  options: string[];
}

export interface ItemPayload {
  image_id: string;
  image_url: string;
  prompt_text: string;
  perspectives: string[];
  questions: Question[];
  index: number;
  n_items: number;
}

export interface RatingBody {
  scores: Record<string, number>;
  choices: Record<string, string>;
  explanation: string;
}

export type SubmitResult =
  | { accepted: true }
  | { accepted: false; errors: Record<string, string> };

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(`${status}: ${message}`);
  }
}

async function readError(resp: Response): Promise<string> {
  try {
    const body = await resp.json();
    return typeof body.error === "string" ? body.error : JSON.stringify(body);
  } catch {
    return resp.statusText;
  }
}

export class ApiClient {
  constructor(private baseUrl = "") {}

  private async getJson(path: string): Promise<unknown> {
    const resp = await fetch(this.baseUrl + path);
    if (!resp.ok) {
      throw new ApiError(resp.status, await readError(resp));
    }
    return resp.json();
  }

  async createSession(subjectId: string): Promise<SessionInfo> {
    const q = encodeURIComponent(subjectId);
    return (await this.getJson(`/api/session?subject_id=${q}`)) as SessionInfo;
  }

  async getItem(sessionId: string, index: number): Promise<ItemPayload> {
    const path = `/api/session/${sessionId}/item/${index}`;
    return (await this.getJson(path)) as ItemPayload;
  }

  async submitRating(
    sessionId: string,
    index: number,
    body: RatingBody,
  ): Promise<SubmitResult> {
    const resp = await fetch(
      `${this.baseUrl}/api/session/${sessionId}/item/${index}/rating`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      },
    );
    if (resp.status === 200 || resp.status === 400) {
      return (await resp.json()) as SubmitResult;
    }
    throw new ApiError(resp.status, await readError(resp));
  }

  async exportLines(): Promise<string[]> {
    const resp = await fetch(`${this.baseUrl}/api/export`);
    if (!resp.ok) {
      throw new ApiError(resp.status, await readError(resp));
    }
    const text = await resp.text();
    return text.split("\n").filter((line) => line.length > 0);
  }
}
