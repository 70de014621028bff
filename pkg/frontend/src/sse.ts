// POST-based SSE client for /api/chat. EventSource cannot send a body, so
// this parses the text/event-stream response of a fetch by hand.
//
// Wire contract: `message` frames carry the full accumulated answer so far
// (render by replacement), one `done` or `error` frame ends the exchange,
// and `: flush` comment lines are anti-buffering padding to ignore.

import { ApiError, Citation } from './api.js';

export interface DonePayload {
  citations: Citation[];
  message_id: string;
  status: string;
}

export interface ErrorPayload {
  message: string;
  message_id: string | null;
  status: string;
}

export interface StreamHandlers {
  onMessage(accumulated: string): void;
  onDone(done: DonePayload): void;
  onError(error: ErrorPayload): void;
}

export interface ChatRequest {
  session_id: string;
  thread_id: string;
  message: string;
}

interface Frame {
  event: string;
  data: string;
}

// Incremental parser, kept separate from the network layer so tests can
// drive it with arbitrary chunk boundaries.
export class SseParser {
  private buffer = '';

  push(chunk: string): Frame[] {
    this.buffer += chunk;
    const frames: Frame[] = [];
    let cut: number;
    while ((cut = this.buffer.indexOf('\n\n')) !== -1) {
      const block = this.buffer.slice(0, cut);
      this.buffer = this.buffer.slice(cut + 2);
      let event = 'message';
      const dataLines: string[] = [];
      for (const line of block.split('\n')) {
        if (line.startsWith(':')) continue; // comment (flush padding)
        if (line.startsWith('event:')) event = line.slice(6).trim();
        else if (line.startsWith('data:')) dataLines.push(line.slice(5).trimStart());
      }
      if (dataLines.length > 0) frames.push({ event, data: dataLines.join('\n') });
    }
    return frames;
  }
}

export async function streamChat(
  body: ChatRequest,
  handlers: StreamHandlers,
  signal?: AbortSignal,
): Promise<void> {
  const response = await fetch('/api/chat', {
    method: 'POST',
    headers: { 'content-type': 'application/json' },
    body: JSON.stringify(body),
    signal,
  });

  if (!response.ok) {
    let detail = `HTTP ${response.status}`;
    try {
      const parsed = (await response.json()) as { detail?: unknown };
      if (typeof parsed.detail === 'string') detail = parsed.detail;
    } catch {
      // keep the status line
    }
    const header = response.headers.get('retry-after');
    throw new ApiError(response.status, detail, header === null ? undefined : Number(header) || undefined);
  }
  if (!response.body) throw new Error('response has no body');

  const reader = response.body.getReader();
  const decoder = new TextDecoder('utf-8');
  const parser = new SseParser();
  let terminated = false;

  const dispatch = (frame: Frame): void => {
    if (terminated) return;
    let payload: unknown;
    try {
      payload = JSON.parse(frame.data);
    } catch {
      return; // malformed frame; the terminal frame will still arrive
    }
    if (frame.event === 'message') {
      const content = (payload as { content?: unknown }).content;
      if (typeof content === 'string') handlers.onMessage(content);
    } else if (frame.event === 'done') {
      terminated = true;
      handlers.onDone(payload as DonePayload);
    } else if (frame.event === 'error') {
      terminated = true;
      handlers.onError(payload as ErrorPayload);
    }
  };

  // Once the stream is open, failures are reported through onError exactly
  // once (the caller already rendered a bubble to fail); only pre-stream
  // failures above throw.
  try {
    for (;;) {
      const { value, done } = await reader.read();
      if (done) break;
      for (const frame of parser.push(decoder.decode(value, { stream: true }))) {
        dispatch(frame);
      }
    }
  } catch {
    if (signal?.aborted) return; // deliberate cancel, not an error
    if (!terminated) {
      terminated = true;
      handlers.onError({ message: 'connection lost', message_id: null, status: 'interrupted' });
    }
    return;
  }

  if (!terminated) {
    // server closed without a terminal frame: same path as a network drop
    handlers.onError({ message: 'connection lost', message_id: null, status: 'interrupted' });
  }
}
