import type { AnswerView, ApiErrorBody, EvidenceView, Preset, UploadResult } from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: ApiErrorBody,
  ) {
    super(body.message || `request failed with status ${status}`);
  }
}

/** Completion failed but retrieval succeeded; contexts are still usable. */
export class CompletionFailed extends ApiError {
  constructor(
    status: number,
    body: ApiErrorBody,
    public partial: AnswerView,
  ) {
    super(status, body);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
    private token: string = "",
  ) {}

  private headers(): Record<string, string> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  private async errorBody(response: Response): Promise<ApiErrorBody> {
    try {
      const body = await response.json();
      if (body && typeof body.message === "string") return body as ApiErrorBody;
      if (body && body.error && typeof body.error.message === "string") {
        return body.error as ApiErrorBody;
      }
    } catch {
      /* non-JSON error body */
    }
    return { code: "http_error", message: `request failed with status ${response.status}` };
  }

  async submitQuery(
    company: string,
    query: string,
    preset: Preset,
  ): Promise<AnswerView> {
    const response = await this.fetchImpl(`${this.baseUrl}/query`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify({ company, query, preset }),
    });
    if (response.status === 502) {
      const payload = await response.json();
      const { error, ...partial } = payload;
      throw new CompletionFailed(502, error ?? { code: "bad_gateway", message: "completion failed" }, partial as AnswerView);
    }
    if (!response.ok) {
      throw new ApiError(response.status, await this.errorBody(response));
    }
    return (await response.json()) as AnswerView;
  }

  async uploadDocument(company: string, interchangeJson: string): Promise<UploadResult> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/companies/${encodeURIComponent(company)}/documents`,
      { method: "POST", headers: this.headers(), body: interchangeJson },
    );
    if (!response.ok) {
      throw new ApiError(response.status, await this.errorBody(response));
    }
    const body = await response.json();
    return { ...body, created: response.status === 201 } as UploadResult;
  }

  async getEvidence(evidenceId: string): Promise<EvidenceView> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/evidence/${encodeURIComponent(evidenceId)}`,
      { method: "GET", headers: this.headers() },
    );
    if (!response.ok) {
      throw new ApiError(response.status, await this.errorBody(response));
    }
    return (await response.json()) as EvidenceView;
  }
}
