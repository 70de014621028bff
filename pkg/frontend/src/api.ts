// Thin typed wrappers over the server's JSON endpoints. Error responses all
// carry {"detail": string}; 429 additionally carries a Retry-After header.

export interface SessionInfo {
  session_id: string;
}

export interface ThreadInfo {
  thread_id: string;
}

export interface Citation {
  doc_id: string;
  source_title: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
    readonly retryAfter?: number,
  ) {
    super(detail);
    this.name = 'ApiError';
  }
}

async function request<T>(path: string, init: RequestInit = {}): Promise<T> {
  const response = await fetch(path, init);
  if (!response.ok) {
    let detail = `HTTP ${response.status}`;
    try {
      const body = (await response.json()) as { detail?: unknown };
      if (typeof body.detail === 'string') detail = body.detail;
    } catch {
      // non-JSON error body; the status line is all we have
    }
    const header = response.headers.get('retry-after');
    const retryAfter = header === null ? undefined : Number(header) || undefined;
    throw new ApiError(response.status, detail, retryAfter);
  }
  return (await response.json()) as T;
}

export function createSession(): Promise<SessionInfo> {
  return request<SessionInfo>('/api/session', { method: 'POST' });
}

export function createThread(sessionId: string): Promise<ThreadInfo> {
  return request<ThreadInfo>(`/api/session/${encodeURIComponent(sessionId)}/thread`, {
    method: 'POST',
  });
}

export function submitFeedback(
  threadId: string,
  starRating: number,
  comment?: string,
): Promise<{ feedback_id: string }> {
  const payload: Record<string, unknown> = { thread_id: threadId, star_rating: starRating };
  if (comment !== undefined && comment !== '') payload.comment = comment;
  return request<{ feedback_id: string }>('/api/feedback', {
    method: 'POST',
    headers: { 'content-type': 'application/json' },
    body: JSON.stringify(payload),
  });
}
