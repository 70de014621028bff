import { afterEach, describe, expect, it, vi } from 'vitest';

import { ApiError } from '../src/api.js';
import { streamChat } from '../src/sse.js';
import { ChatView, FeedbackWidget } from '../src/view.js';

function makeView(): { view: ChatView; root: HTMLElement } {
  const root = document.createElement('div');
  document.body.appendChild(root);
  return { view: new ChatView(root), root };
}

afterEach(() => {
  document.body.textContent = '';
  vi.unstubAllGlobals();
});

describe('ChatView streaming render', () => {
  it('replaces the bubble content on every frame instead of appending', () => {
    const { view, root } = makeView();
    view.beginAssistant();
    view.updateAssistant('Hel');
    const body = root.querySelector('.msg-body') as HTMLElement;
    expect(body.textContent).toBe('Hel');
    view.updateAssistant('Hello');
    expect(body.textContent).toBe('Hello');
    expect(body.textContent).not.toContain('HelHello');
  });

  it('always shows exactly the latest frame across a long stream', () => {
    const { view, root } = makeView();
    view.beginAssistant();
    const body = root.querySelector('.msg-body') as HTMLElement;
    let text = '';
    for (let i = 0; i < 40; i += 1) {
      text += `word${i} `;
      view.updateAssistant(text);
      expect(body.textContent).toBe(text);
    }
  });

  it('renders the final DOM equal to the last frame of a mocked SSE stream', async () => {
    const frames = ['Upload ', 'Upload the model ', 'Upload the model in mmCIF format.'];
    const encoder = new TextEncoder();
    vi.stubGlobal('fetch', vi.fn(async () => new Response(
      new ReadableStream<Uint8Array>({
        start(controller) {
          for (const content of frames) {
            controller.enqueue(encoder.encode(`event: message\ndata: ${JSON.stringify({ content })}\n\n`));
          }
          controller.enqueue(encoder.encode(
            'event: done\ndata: {"citations": [], "message_id": "m", "status": "complete"}\n\n: flush\n\n: flush\n\n: flush\n\n',
          ));
          controller.close();
        },
      }),
      { status: 200 },
    )));

    const { view, root } = makeView();
    view.beginAssistant();
    const seen: string[] = [];
    const body = root.querySelector('.msg-body') as HTMLElement;
    await streamChat(
      { session_id: 's', thread_id: 't', message: 'q' },
      {
        onMessage: (accumulated) => {
          view.updateAssistant(accumulated);
          seen.push(body.textContent ?? '');
        },
        onDone: (done) => view.finishAssistant(done),
        onError: () => {
          throw new Error('unexpected error frame');
        },
      },
    );
    expect(seen).toEqual(frames);
    expect(body.textContent).toBe(frames[frames.length - 1]);
  });

  it('renders markdown in the streamed answer', () => {
    const { view, root } = makeView();
    view.beginAssistant();
    view.updateAssistant('use **mmCIF** format');
    expect(root.querySelector('.msg-body strong')?.textContent).toBe('mmCIF');
  });

  it('lists one source entry per citation on done', () => {
    const { view, root } = makeView();
    view.beginAssistant();
    view.updateAssistant('answer');
    view.finishAssistant({
      citations: [
        { doc_id: 'formats.md', source_title: 'Accepted File Formats' },
        { doc_id: 'cryoem.md', source_title: 'Cryo-EM Map Deposition' },
      ],
      message_id: 'm1',
      status: 'complete',
    });
    const sources = Array.from(root.querySelectorAll('.source')).map((node) => node.textContent);
    expect(sources).toEqual(['Accepted File Formats', 'Cryo-EM Map Deposition']);
    expect(root.querySelector('.streaming')).toBeNull();
  });

  it('omits the sources box when there are no citations', () => {
    const { view, root } = makeView();
    view.beginAssistant();
    view.updateAssistant('answer');
    view.finishAssistant({ citations: [], message_id: 'm1', status: 'complete' });
    expect(root.querySelector('.sources')).toBeNull();
  });

  it('shows an error notice with a retry affordance', () => {
    const { view, root } = makeView();
    view.beginAssistant();
    view.updateAssistant('partial ');
    const retry = vi.fn();
    view.failAssistant('generation timed out', retry);
    expect(root.querySelector('.msg-error')).not.toBeNull();
    expect(root.querySelector('.error-notice')?.textContent).toContain('generation timed out');
    (root.querySelector('.retry') as HTMLButtonElement).click();
    expect(retry).toHaveBeenCalledTimes(1);
  });

  it('keeps user text as plain text', () => {
    const { view, root } = makeView();
    view.renderUser('<b>not markup</b>');
    expect(root.querySelector('.msg-user b')).toBeNull();
    expect(root.querySelector('.msg-user')?.textContent).toBe('<b>not markup</b>');
  });
});

describe('FeedbackWidget', () => {
  function makeWidget(send: (rating: number, comment?: string) => Promise<unknown>) {
    const widget = new FeedbackWidget(send);
    document.body.appendChild(widget.element);
    return widget;
  }

  function star(widget: FeedbackWidget, value: number): HTMLButtonElement {
    return widget.element.querySelector(`.star[data-value="${value}"]`) as HTMLButtonElement;
  }

  function submit(widget: FeedbackWidget): HTMLButtonElement {
    return widget.element.querySelector('.feedback-submit') as HTMLButtonElement;
  }

  function notice(widget: FeedbackWidget): string {
    return widget.element.querySelector('.feedback-notice')?.textContent ?? '';
  }

  async function flush(): Promise<void> {
    await Promise.resolve();
    await Promise.resolve();
  }

  it('starts disabled until an exchange completes', () => {
    const widget = makeWidget(vi.fn());
    expect(widget.element.dataset.phase).toBe('disabled');
    expect(submit(widget).disabled).toBe(true);
    star(widget, 3).click();
    expect(widget.element.querySelectorAll('.picked').length).toBe(0);
  });

  it('submits the picked rating and optional comment', async () => {
    const send = vi.fn(async () => ({ feedback_id: 'f1' }));
    const widget = makeWidget(send);
    widget.enable();
    star(widget, 4).click();
    expect(widget.element.querySelectorAll('.picked').length).toBe(4);
    (widget.element.querySelector('.feedback-comment') as HTMLTextAreaElement).value = 'solid answer';
    submit(widget).click();
    await flush();
    expect(send).toHaveBeenCalledWith(4, 'solid answer');
    expect(widget.element.dataset.phase).toBe('locked');
    expect(notice(widget)).toContain('Thanks');
    expect(submit(widget).disabled).toBe(true);
  });

  it('omits an empty comment from the submission', async () => {
    const send = vi.fn(async () => ({ feedback_id: 'f1' }));
    const widget = makeWidget(send);
    widget.enable();
    star(widget, 5).click();
    submit(widget).click();
    await flush();
    expect(send).toHaveBeenCalledWith(5, undefined);
  });

  it('requires a star before submitting', async () => {
    const send = vi.fn();
    const widget = makeWidget(send);
    widget.enable();
    submit(widget).click();
    await flush();
    expect(send).not.toHaveBeenCalled();
    expect(widget.element.dataset.phase).toBe('invalid');
    expect(notice(widget)).toContain('Pick 1 to 5 stars');
  });

  it('renders 429 and 422 as distinct user-visible states', async () => {
    const limited = makeWidget(vi.fn(async () => {
      throw new ApiError(429, 'too many requests', 9);
    }));
    limited.enable();
    star(limited, 5).click();
    submit(limited).click();
    await flush();
    expect(limited.element.dataset.phase).toBe('rate-limited');
    expect(notice(limited)).toContain('Try again in 9s');

    const rejected = makeWidget(vi.fn(async () => {
      throw new ApiError(422, 'thread has no completed exchange to rate');
    }));
    rejected.enable();
    star(rejected, 5).click();
    submit(rejected).click();
    await flush();
    expect(rejected.element.dataset.phase).toBe('invalid');
    expect(notice(rejected)).toContain('thread has no completed exchange to rate');

    expect(limited.element.dataset.phase).not.toBe(rejected.element.dataset.phase);
    expect(notice(limited)).not.toBe(notice(rejected));
  });

  it('allows retrying after a rate limit', async () => {
    let calls = 0;
    const widget = makeWidget(vi.fn(async () => {
      calls += 1;
      if (calls === 1) throw new ApiError(429, 'too many requests', 1);
      return { feedback_id: 'f2' };
    }));
    widget.enable();
    star(widget, 2).click();
    submit(widget).click();
    await flush();
    expect(widget.element.dataset.phase).toBe('rate-limited');
    expect(submit(widget).disabled).toBe(false);
    submit(widget).click();
    await flush();
    expect(widget.element.dataset.phase).toBe('locked');
  });

  it('reports transport failures without locking', async () => {
    const widget = makeWidget(vi.fn(async () => {
      throw new TypeError('network down');
    }));
    widget.enable();
    star(widget, 1).click();
    submit(widget).click();
    await flush();
    expect(widget.element.dataset.phase).toBe('failed');
    expect(submit(widget).disabled).toBe(false);
  });

  it('ignores star clicks once locked', async () => {
    const widget = makeWidget(vi.fn(async () => ({ feedback_id: 'f3' })));
    widget.enable();
    star(widget, 5).click();
    submit(widget).click();
    await flush();
    star(widget, 1).click();
    expect(widget.element.querySelectorAll('.picked').length).toBe(5);
  });
});
