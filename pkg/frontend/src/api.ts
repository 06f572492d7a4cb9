// Typed client for the editing service REST API. Every field in these
// interfaces mirrors a server response field one-to-one; nothing is derived
// client-side.

export interface EditResponse {
  image_b64: string;
  mask_b64: string | null;
  tokens: string[];
  attn_where: number[];
  attn_how: number[];
  alpha: number[][];
  step: number;
}

export interface SessionCreated {
  id: string;
  image_b64: string;
}

export interface HistoryStep extends EditResponse {
  instruction: string | null;
}

export interface HistoryResponse {
  id: string;
  steps: HistoryStep[];
}

export interface HealthResponse {
  status: string;
  variant: string;
}

export class ApiError extends Error {
  readonly code: number;

  constructor(code: number, message: string) {
    super(message);
    this.code = code;
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let resp: Response;
  try {
    resp = await fetch(url, init);
  } catch (err) {
    throw new ApiError(0, `network error: ${String(err)}`);
  }
  const body = await resp.json().catch(() => null);
  if (!resp.ok) {
    const message =
      body && typeof body.error === "string" ? body.error : resp.statusText;
    throw new ApiError(resp.status, message);
  }
  return body as T;
}

function postJson<T>(url: string, payload: unknown): Promise<T> {
  return request<T>(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(payload),
  });
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  health(): Promise<HealthResponse> {
    return request<HealthResponse>(`${this.base}/api/health`);
  }

  createSessionFromSeed(seed: number): Promise<SessionCreated> {
    return postJson<SessionCreated>(`${this.base}/api/session`, {
      random_scene: seed,
    });
  }

  createSessionFromPng(png: string): Promise<SessionCreated> {
    return postJson<SessionCreated>(`${this.base}/api/session`, { png });
  }

  edit(sid: string, instruction: string, sample = false): Promise<EditResponse> {
    const query = sample ? "?sample=true" : "";
    return postJson<EditResponse>(
      `${this.base}/api/session/${sid}/edit${query}`,
      { instruction },
    );
  }

  undo(sid: string): Promise<EditResponse> {
    return postJson<EditResponse>(`${this.base}/api/session/${sid}/undo`, {});
  }

  history(sid: string): Promise<HistoryResponse> {
    return request<HistoryResponse>(`${this.base}/api/session/${sid}/history`);
  }
}
