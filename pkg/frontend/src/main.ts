// App wiring: session bootstrap, thread list, composer, stream lifecycle.

import { ApiError, createSession, createThread, submitFeedback } from './api.js';
import { DonePayload, ErrorPayload, streamChat } from './sse.js';
import { ensureSession, forgetSession, ThreadState } from './state.js';
import { ChatView, FeedbackWidget } from './view.js';

// client-side mirror of the server message cap
export const MAX_MESSAGE_CHARS = 10_000;

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

export class App {
  readonly threads: ThreadState[] = [];
  active: ThreadState | null = null;

  private readonly view: ChatView;
  private readonly feedback: FeedbackWidget;
  private readonly threadList: HTMLElement;
  private readonly composer: HTMLTextAreaElement;
  private readonly sendButton: HTMLButtonElement;
  private readonly statusBar: HTMLElement;

  constructor(
    readonly root: HTMLElement,
    private readonly sessionId: string,
  ) {
    root.textContent = '';
    const sidebar = el('aside', 'sidebar');
    const newThread = el('button', 'new-thread', 'New thread');
    newThread.type = 'button';
    newThread.addEventListener('click', () => {
      void this.openThread();
    });
    sidebar.appendChild(newThread);
    this.threadList = el('nav', 'thread-list');
    sidebar.appendChild(this.threadList);
    root.appendChild(sidebar);

    const mainPane = el('main', 'chat-pane');
    this.statusBar = el('div', 'status-bar');
    mainPane.appendChild(this.statusBar);
    const transcript = el('div', 'transcript');
    mainPane.appendChild(transcript);
    this.view = new ChatView(transcript);

    this.feedback = new FeedbackWidget((rating, comment) => {
      if (this.active === null) return Promise.reject(new Error('no thread'));
      return submitFeedback(this.active.threadId, rating, comment);
    });
    mainPane.appendChild(this.feedback.element);

    const composerRow = el('div', 'composer');
    this.composer = el('textarea', 'composer-input');
    this.composer.placeholder = 'Ask the help desk';
    this.composer.maxLength = MAX_MESSAGE_CHARS;
    this.composer.addEventListener('keydown', (event) => {
      if (event.key === 'Enter' && !event.shiftKey) {
        event.preventDefault();
        void this.send();
      }
    });
    composerRow.appendChild(this.composer);
    this.sendButton = el('button', 'send', 'Send');
    this.sendButton.type = 'button';
    this.sendButton.addEventListener('click', () => {
      void this.send();
    });
    composerRow.appendChild(this.sendButton);
    mainPane.appendChild(composerRow);
    root.appendChild(mainPane);
  }

  async openThread(): Promise<ThreadState> {
    const info = await createThread(this.sessionId);
    const thread = new ThreadState(info.thread_id);
    this.threads.push(thread);
    this.activate(thread);
    this.renderThreadList();
    return thread;
  }

  activate(thread: ThreadState): void {
    this.active = thread;
    this.view.clear();
    for (const message of thread.transcript) {
      if (message.role === 'user') {
        this.view.renderUser(message.text);
      } else {
        this.view.beginAssistant();
        this.view.updateAssistant(message.text);
        this.view.finishAssistant({
          citations: message.citations ?? [],
          message_id: '',
          status: message.failed === true ? 'interrupted' : 'complete',
        });
      }
    }
    if (thread.rateableMessageId !== null && !thread.rated) this.feedback.enable();
    else this.feedback.reset();
    this.renderThreadList();
  }

  async send(text?: string): Promise<void> {
    const thread = this.active;
    if (thread === null) return;
    if (thread.streamState === 'streaming') return; // one stream per thread
    const message = (text ?? this.composer.value).trim();
    if (message === '') return;
    if (message.length > MAX_MESSAGE_CHARS) {
      this.notify(`Message is too long (limit ${MAX_MESSAGE_CHARS} characters).`);
      return;
    }

    this.notify('');
    thread.noteFirstMessage(message);
    thread.transcript.push({ role: 'user', text: message });
    thread.streamState = 'streaming';
    this.composer.value = '';
    this.sendButton.disabled = true;
    this.view.renderUser(message);
    this.view.beginAssistant();
    this.feedback.reset();
    this.renderThreadList();

    let latest = '';
    const finish = (): void => {
      this.sendButton.disabled = false;
    };
    try {
      await streamChat(
        { session_id: this.sessionId, thread_id: thread.threadId, message },
        {
          onMessage: (accumulated) => {
            latest = accumulated;
            this.view.updateAssistant(accumulated);
          },
          onDone: (done: DonePayload) => {
            thread.streamState = 'idle';
            thread.transcript.push({ role: 'assistant', text: latest, citations: done.citations });
            thread.rateableMessageId = done.message_id;
            thread.rated = false;
            this.view.finishAssistant(done);
            this.feedback.enable();
            finish();
          },
          onError: (error: ErrorPayload) => {
            thread.streamState = 'error';
            thread.transcript.push({ role: 'assistant', text: latest, failed: true });
            this.view.failAssistant(error.message, () => {
              void this.send(message);
            });
            finish();
          },
        },
      );
    } catch (err) {
      thread.streamState = 'error';
      finish();
      if (err instanceof ApiError) {
        const hint = err.status === 429 && err.retryAfter !== undefined
          ? ` Try again in ${err.retryAfter}s.`
          : '';
        this.view.failAssistant(`${err.message}${hint}`, () => {
          void this.send(message);
        });
      } else {
        this.view.failAssistant('connection lost', () => {
          void this.send(message);
        });
      }
    }
  }

  private notify(text: string): void {
    this.statusBar.textContent = text;
  }

  private renderThreadList(): void {
    this.threadList.textContent = '';
    for (const thread of this.threads) {
      const entry = el('button', 'thread-entry', thread.title);
      entry.type = 'button';
      if (thread === this.active) entry.classList.add('active');
      entry.addEventListener('click', () => this.activate(thread));
      this.threadList.appendChild(entry);
    }
  }
}

export async function init(root: HTMLElement, storage: Storage = localStorage): Promise<App> {
  let sessionId = await ensureSession(storage, createSession);
  const app = new App(root, sessionId);
  try {
    await app.openThread();
  } catch (err) {
    // a stored session can go stale when the server database is reset
    if (err instanceof ApiError && err.status === 404) {
      forgetSession(storage);
      sessionId = await ensureSession(storage, createSession);
      const fresh = new App(root, sessionId);
      await fresh.openThread();
      return fresh;
    }
    throw err;
  }
  return app;
}

const mount = typeof document !== 'undefined' ? document.getElementById('app') : null;
if (mount !== null) {
  void init(mount);
}
