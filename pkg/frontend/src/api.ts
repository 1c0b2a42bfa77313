import type { ReviewQueueView, RunStatus, Tally, Verdict } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    // keep the status text
  }
  return new ApiError(response.status, detail);
}

/** Thin client over the review endpoints; throws ApiError on non-2xx. */
export class ReviewApi {
  constructor(readonly baseUrl: string) {}

  private async get<T>(path: string): Promise<T> {
    const response = await fetch(this.baseUrl + path);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  fetchRun(runId: string): Promise<RunStatus> {
    return this.get(`/v1/runs/${encodeURIComponent(runId)}`);
  }

  fetchQueue(
    runId: string,
    reviewerId: string,
    cursor?: string,
  ): Promise<ReviewQueueView> {
    const params = new URLSearchParams({ run: runId, reviewer_id: reviewerId });
    if (cursor) params.set("cursor", cursor);
    return this.get(`/v1/review/queue?${params.toString()}`);
  }

  fetchTally(runId: string): Promise<Tally> {
    return this.get(`/v1/review/tally?run=${encodeURIComponent(runId)}`);
  }

  async submitVerdict(
    candidateId: string,
    verdict: Verdict,
    reviewerId: string,
    editedText?: string,
  ): Promise<Tally> {
    const body: Record<string, unknown> = {
      verdict,
      reviewer_id: reviewerId,
    };
    if (editedText !== undefined) body.edited_text = editedText;
    const response = await fetch(
      `${this.baseUrl}/v1/review/${encodeURIComponent(candidateId)}`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      },
    );
    if (!response.ok) throw await parseError(response);
    const payload = await response.json();
    return payload.tally as Tally;
  }
}
