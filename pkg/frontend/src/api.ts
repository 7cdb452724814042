/** Typed client for the session endpoints. */

export interface PromptPayload {
  kind: "box" | "point";
  box: [number, number, number, number] | null;
  point: [number, number] | null;
}

export interface StepPayload {
  step: number;
  sample_id: number;
  prompt: PromptPayload;
  image_b64: string;
  fused_mask_b64: string;
  generalist_mask_b64: string;
  aux_mask_b64: string;
  alpha_used: number;
  dsc_available: boolean;
}

export interface StepRecord {
  step: number;
  sample_id: number;
  prompt_kind: string;
  dsc_generalist: number | null;
  dsc_aux: number | null;
  dsc_fused: number | null;
  hd_fused: number | null;
  alpha_used: number;
  alpha_star: number | null;
  rectified: boolean;
  batch_len: number;
  batch_loss: number | null;
}

export interface RectifyResponse {
  record: StepRecord;
  mask_sha256?: string;
}

export interface SessionState {
  step_count: number;
  batch_len: number;
  alpha_current: number;
  param_checksum: string;
  records_tail: StepRecord[];
}

export type NextResult =
  | { kind: "step"; payload: StepPayload }
  | { kind: "done" }
  | { kind: "pending" };

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function errorMessage(resp: Response): Promise<string> {
  try {
    const body = await resp.json();
    return body.error ?? resp.statusText;
  } catch {
    return resp.statusText;
  }
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  async createSession(body: unknown): Promise<string> {
    const resp = await fetch(`${this.base}/session`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (resp.status !== 201) throw new ApiError(resp.status, await errorMessage(resp));
    return (await resp.json()).session_id as string;
  }

  async next(sessionId: string): Promise<NextResult> {
    const resp = await fetch(`${this.base}/session/${sessionId}/next`);
    if (resp.status === 204) return { kind: "done" };
    if (resp.status === 409) return { kind: "pending" };
    if (resp.status !== 200) throw new ApiError(resp.status, await errorMessage(resp));
    return { kind: "step", payload: (await resp.json()) as StepPayload };
  }

  async rectify(sessionId: string, maskB64: string): Promise<RectifyResponse> {
    const resp = await fetch(`${this.base}/session/${sessionId}/rectify`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ mask_b64: maskB64 }),
    });
    if (resp.status !== 200) throw new ApiError(resp.status, await errorMessage(resp));
    return (await resp.json()) as RectifyResponse;
  }

  async skip(sessionId: string): Promise<StepRecord> {
    const resp = await fetch(`${this.base}/session/${sessionId}/skip`, { method: "POST" });
    if (resp.status !== 200) throw new ApiError(resp.status, await errorMessage(resp));
    return (await resp.json()).record as StepRecord;
  }

  async state(sessionId: string): Promise<SessionState> {
    const resp = await fetch(`${this.base}/session/${sessionId}/state`);
    if (resp.status !== 200) throw new ApiError(resp.status, await errorMessage(resp));
    return (await resp.json()) as SessionState;
  }

  reportUrl(sessionId: string): string {
    return `${this.base}/session/${sessionId}/report`;
  }
}
