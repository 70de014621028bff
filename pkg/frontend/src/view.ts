// DOM rendering. No framework: each widget owns a subtree and exposes the
// few mutations the controller needs.

import { Citation } from './api.js';
import { renderMarkdown } from './markdown.js';
import { DonePayload } from './sse.js';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className !== undefined) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class ChatView {
  private stream: HTMLElement | null = null;

  constructor(readonly root: HTMLElement) {}

  renderUser(text: string): void {
    const bubble = el('div', 'msg msg-user');
    bubble.textContent = text;
    this.root.appendChild(bubble);
    this.scroll();
  }

  beginAssistant(): HTMLElement {
    const bubble = el('div', 'msg msg-assistant streaming');
    bubble.appendChild(el('div', 'msg-body'));
    this.root.appendChild(bubble);
    this.stream = bubble;
    this.scroll();
    return bubble;
  }

  // Frames carry the whole answer so far: replace the body, never append.
  updateAssistant(accumulated: string): void {
    const body = this.stream?.querySelector('.msg-body');
    if (body) body.innerHTML = renderMarkdown(accumulated);
    this.scroll();
  }

  finishAssistant(done: DonePayload): void {
    if (this.stream === null) return;
    this.stream.classList.remove('streaming');
    if (done.citations.length > 0) {
      this.stream.appendChild(renderSources(done.citations));
    }
    this.stream = null;
    this.scroll();
  }

  failAssistant(message: string, onRetry: () => void): void {
    const bubble = this.stream ?? this.beginAssistant();
    bubble.classList.remove('streaming');
    bubble.classList.add('msg-error');
    const notice = el('div', 'error-notice', message);
    const retry = el('button', 'retry', 'Retry');
    retry.type = 'button';
    retry.addEventListener('click', onRetry, { once: true });
    notice.appendChild(retry);
    bubble.appendChild(notice);
    this.stream = null;
    this.scroll();
  }

  clear(): void {
    this.root.textContent = '';
    this.stream = null;
  }

  private scroll(): void {
    this.root.scrollTop = this.root.scrollHeight;
  }
}

function renderSources(citations: Citation[]): HTMLElement {
  const box = el('div', 'sources');
  box.appendChild(el('div', 'sources-label', 'Sources'));
  const list = el('ul');
  for (const citation of citations) {
    const item = el('li', 'source', citation.source_title);
    item.dataset.docId = citation.doc_id;
    list.appendChild(item);
  }
  box.appendChild(list);
  return box;
}

export type FeedbackPhase =
  | 'disabled'   // no completed exchange yet
  | 'ready'
  | 'submitting'
  | 'locked'     // accepted; one rating per exchange
  | 'rate-limited'
  | 'invalid'
  | 'failed';

// states in which the user can still adjust stars and submit again
const INTERACTIVE: readonly FeedbackPhase[] = ['ready', 'invalid', 'rate-limited', 'failed'];

export class FeedbackWidget {
  readonly element: HTMLElement;
  private stars = 0;
  private phase: FeedbackPhase = 'disabled';
  private readonly starButtons: HTMLButtonElement[] = [];
  private readonly comment: HTMLTextAreaElement;
  private readonly submit: HTMLButtonElement;
  private readonly notice: HTMLElement;

  constructor(private readonly send: (rating: number, comment?: string) => Promise<unknown>) {
    this.element = el('div', 'feedback');
    const row = el('div', 'feedback-stars');
    for (let value = 1; value <= 5; value += 1) {
      const star = el('button', 'star', '★');
      star.type = 'button';
      star.dataset.value = String(value);
      star.addEventListener('click', () => this.pick(value));
      this.starButtons.push(star);
      row.appendChild(star);
    }
    this.element.appendChild(row);
    this.comment = el('textarea', 'feedback-comment');
    this.comment.placeholder = 'Optional comment';
    this.element.appendChild(this.comment);
    this.submit = el('button', 'feedback-submit', 'Rate this answer');
    this.submit.type = 'button';
    this.submit.addEventListener('click', () => {
      void this.doSubmit();
    });
    this.element.appendChild(this.submit);
    this.notice = el('div', 'feedback-notice');
    this.element.appendChild(this.notice);
    this.apply('disabled', '');
  }

  get currentPhase(): FeedbackPhase {
    return this.phase;
  }

  enable(): void {
    this.stars = 0;
    this.comment.value = '';
    for (const star of this.starButtons) star.classList.remove('picked');
    this.apply('ready', '');
  }

  reset(): void {
    this.apply('disabled', '');
  }

  private pick(value: number): void {
    if (!INTERACTIVE.includes(this.phase)) return;
    this.stars = value;
    for (const star of this.starButtons) {
      star.classList.toggle('picked', Number(star.dataset.value) <= value);
    }
  }

  private async doSubmit(): Promise<void> {
    if (!INTERACTIVE.includes(this.phase)) return;
    if (this.stars === 0) {
      this.apply('invalid', 'Pick 1 to 5 stars first.');
      return;
    }
    this.apply('submitting', '');
    try {
      await this.send(this.stars, this.comment.value.trim() || undefined);
      this.apply('locked', 'Thanks, your rating was recorded.');
    } catch (err) {
      const status = (err as { status?: number }).status;
      if (status === 429) {
        const after = (err as { retryAfter?: number }).retryAfter;
        const wait = after !== undefined ? ` Try again in ${after}s.` : ' Try again shortly.';
        this.apply('rate-limited', `Too many ratings right now.${wait}`);
      } else if (status === 422) {
        this.apply('invalid', `The server rejected the rating: ${(err as Error).message}`);
      } else {
        this.apply('failed', 'Could not record the rating. Check the connection and retry.');
      }
    }
  }

  private apply(phase: FeedbackPhase, noticeText: string): void {
    this.phase = phase;
    this.element.dataset.phase = phase;
    this.notice.textContent = noticeText;
    const inactive = !INTERACTIVE.includes(phase);
    this.submit.disabled = inactive;
    this.comment.disabled = inactive;
    for (const star of this.starButtons) star.disabled = inactive;
  }
}
