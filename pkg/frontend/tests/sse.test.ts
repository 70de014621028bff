import { afterEach, describe, expect, it, vi } from 'vitest';

import { ApiError } from '../src/api.js';
import { SseParser, streamChat, StreamHandlers } from '../src/sse.js';

const REQUEST = { session_id: 's1', thread_id: 't1', message: 'hi' };

function sseBody(frames: string[]): ReadableStream<Uint8Array> {
  const encoder = new TextEncoder();
  return new ReadableStream<Uint8Array>({
    start(controller) {
      for (const frame of frames) controller.enqueue(encoder.encode(frame));
      controller.close();
    },
  });
}

function stubFetch(response: Response | (() => Response | Promise<Response>)): ReturnType<typeof vi.fn> {
  const impl = typeof response === 'function' ? response : () => response;
  const mock = vi.fn(async () => impl());
  vi.stubGlobal('fetch', mock);
  return mock;
}

function recordingHandlers() {
  const messages: string[] = [];
  const dones: unknown[] = [];
  const errors: unknown[] = [];
  const handlers: StreamHandlers = {
    onMessage: (accumulated) => messages.push(accumulated),
    onDone: (done) => dones.push(done),
    onError: (error) => errors.push(error),
  };
  return { messages, dones, errors, handlers };
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe('SseParser', () => {
  it('parses frames regardless of chunk boundaries', () => {
    const parser = new SseParser();
    const wire = 'event: message\ndata: {"content": "He"}\n\nevent: message\ndata: {"content": "Hello"}\n\n';
    const frames = [];
    // feed one byte at a time: worst-case fragmentation
    for (const ch of wire) frames.push(...parser.push(ch));
    expect(frames).toEqual([
      { event: 'message', data: '{"content": "He"}' },
      { event: 'message', data: '{"content": "Hello"}' },
    ]);
  });

  it('ignores comment lines', () => {
    const parser = new SseParser();
    const frames = parser.push(': flush\n\n: flush\n\nevent: done\ndata: {}\n\n');
    expect(frames).toEqual([{ event: 'done', data: '{}' }]);
  });

  it('holds incomplete frames until terminated', () => {
    const parser = new SseParser();
    expect(parser.push('event: message\ndata: {"content": "x"}')).toEqual([]);
    expect(parser.push('\n\n')).toEqual([{ event: 'message', data: '{"content": "x"}' }]);
  });
});

describe('streamChat', () => {
  it('delivers accumulated message frames then the done payload', async () => {
    const done = { citations: [{ doc_id: 'a.md', source_title: 'A' }], message_id: 'm1', status: 'complete' };
    stubFetch(new Response(
      sseBody([
        'event: message\ndata: {"content": "Hel"}\n\n',
        'event: message\ndata: {"content": "Hello"}\n\n',
        `event: done\ndata: ${JSON.stringify(done)}\n\n`,
        ': flush\n\n: flush\n\n: flush\n\n',
      ]),
      { status: 200, headers: { 'content-type': 'text/event-stream' } },
    ));
    const { messages, dones, errors, handlers } = recordingHandlers();
    await streamChat(REQUEST, handlers);
    expect(messages).toEqual(['Hel', 'Hello']);
    expect(dones).toEqual([done]);
    expect(errors).toEqual([]);
  });

  it('posts the chat payload as JSON', async () => {
    const mock = stubFetch(new Response(sseBody(['event: done\ndata: {"citations": [], "message_id": "m", "status": "complete"}\n\n']), { status: 200 }));
    const { handlers } = recordingHandlers();
    await streamChat(REQUEST, handlers);
    const [url, init] = mock.mock.calls[0] as [string, RequestInit];
    expect(url).toBe('/api/chat');
    expect(init.method).toBe('POST');
    expect(JSON.parse(init.body as string)).toEqual(REQUEST);
  });

  it('routes error frames to onError, not onDone', async () => {
    const failure = { message: 'the answer service failed', message_id: 'm2', status: 'interrupted' };
    stubFetch(new Response(
      sseBody([
        'event: message\ndata: {"content": "partial"}\n\n',
        `event: error\ndata: ${JSON.stringify(failure)}\n\n`,
        ': flush\n\n: flush\n\n: flush\n\n',
      ]),
      { status: 200 },
    ));
    const { messages, dones, errors, handlers } = recordingHandlers();
    await streamChat(REQUEST, handlers);
    expect(messages).toEqual(['partial']);
    expect(dones).toEqual([]);
    expect(errors).toEqual([failure]);
  });

  it('reports a dropped connection exactly once', async () => {
    // deliver one frame, then fail the next read: error() discards queued
    // chunks, so the drop has to come from a later pull
    let pulls = 0;
    stubFetch(new Response(
      new ReadableStream<Uint8Array>({
        pull(controller) {
          pulls += 1;
          if (pulls === 1) controller.enqueue(new TextEncoder().encode('event: message\ndata: {"content": "Hel"}\n\n'));
          else controller.error(new Error('connection reset'));
        },
      }),
      { status: 200 },
    ));
    const { messages, errors, handlers } = recordingHandlers();
    await streamChat(REQUEST, handlers);
    expect(messages).toEqual(['Hel']);
    expect(errors).toEqual([{ message: 'connection lost', message_id: null, status: 'interrupted' }]);
  });

  it('treats a close without a terminal frame as a drop', async () => {
    stubFetch(new Response(sseBody(['event: message\ndata: {"content": "Hel"}\n\n']), { status: 200 }));
    const { errors, handlers } = recordingHandlers();
    await streamChat(REQUEST, handlers);
    expect(errors).toEqual([{ message: 'connection lost', message_id: null, status: 'interrupted' }]);
  });

  it('stays quiet after the terminal frame even if more bytes arrive', async () => {
    stubFetch(new Response(
      sseBody([
        'event: done\ndata: {"citations": [], "message_id": "m", "status": "complete"}\n\n',
        'event: message\ndata: {"content": "late"}\n\n',
      ]),
      { status: 200 },
    ));
    const { messages, dones, errors, handlers } = recordingHandlers();
    await streamChat(REQUEST, handlers);
    expect(messages).toEqual([]);
    expect(dones.length).toBe(1);
    expect(errors).toEqual([]);
  });

  it('skips malformed frames and keeps reading', async () => {
    stubFetch(new Response(
      sseBody([
        'event: message\ndata: {broken json\n\n',
        'event: message\ndata: {"content": "ok"}\n\n',
        'event: done\ndata: {"citations": [], "message_id": "m", "status": "complete"}\n\n',
      ]),
      { status: 200 },
    ));
    const { messages, dones, handlers } = recordingHandlers();
    await streamChat(REQUEST, handlers);
    expect(messages).toEqual(['ok']);
    expect(dones.length).toBe(1);
  });

  it('throws a typed error for non-2xx responses', async () => {
    stubFetch(new Response(JSON.stringify({ detail: 'too many requests' }), {
      status: 429,
      headers: { 'retry-after': '42', 'content-type': 'application/json' },
    }));
    const { messages, errors, handlers } = recordingHandlers();
    const thrown = await streamChat(REQUEST, handlers).catch((err: unknown) => err);
    expect(thrown).toBeInstanceOf(ApiError);
    expect((thrown as ApiError).status).toBe(429);
    expect((thrown as ApiError).retryAfter).toBe(42);
    expect((thrown as ApiError).message).toBe('too many requests');
    expect(messages).toEqual([]);
    expect(errors).toEqual([]);
  });

  it('returns silently when aborted mid-stream', async () => {
    const controller = new AbortController();
    stubFetch(new Response(
      new ReadableStream<Uint8Array>({
        start(streamController) {
          streamController.enqueue(new TextEncoder().encode('event: message\ndata: {"content": "x"}\n\n'));
        },
        pull() {
          controller.abort();
          throw new DOMException('aborted', 'AbortError');
        },
      }),
      { status: 200 },
    ));
    const { errors, handlers } = recordingHandlers();
    await streamChat(REQUEST, handlers, controller.signal);
    expect(errors).toEqual([]);
  });
});
