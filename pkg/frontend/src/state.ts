// Client-side conversation state. The session token is an anonymous
// capability persisted in local storage; clearing storage starts over.

import { Citation, SessionInfo } from './api.js';

export const SESSION_KEY = 'ragdesk.session';

export async function ensureSession(
  storage: Storage,
  create: () => Promise<SessionInfo>,
): Promise<string> {
  const stored = storage.getItem(SESSION_KEY);
  if (stored !== null && stored !== '') return stored;
  const fresh = await create();
  storage.setItem(SESSION_KEY, fresh.session_id);
  return fresh.session_id;
}

export function forgetSession(storage: Storage): void {
  storage.removeItem(SESSION_KEY);
}

// Server threads have no titles; derive one from the first user message.
export function deriveTitle(firstMessage: string): string {
  const flat = firstMessage.replace(/\s+/g, ' ').trim();
  if (flat === '') return 'New thread';
  return flat.length <= 60 ? flat : flat.slice(0, 60);
}

export type StreamState = 'idle' | 'streaming' | 'error';

export interface TranscriptMessage {
  role: 'user' | 'assistant';
  text: string;
  citations?: Citation[];
  failed?: boolean;
}

export class ThreadState {
  title = 'New thread';
  streamState: StreamState = 'idle';
  readonly transcript: TranscriptMessage[] = [];
  // message id of the latest completed exchange; null until one exists
  rateableMessageId: string | null = null;
  rated = false;

  constructor(readonly threadId: string) {}

  noteFirstMessage(text: string): void {
    if (this.transcript.length === 0) this.title = deriveTitle(text);
  }
}
