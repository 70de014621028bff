import { beforeEach, describe, expect, it, vi } from 'vitest';

import { SESSION_KEY, ThreadState, deriveTitle, ensureSession, forgetSession } from '../src/state.js';

beforeEach(() => {
  localStorage.clear();
});

describe('ensureSession', () => {
  it('creates and persists a session on first load', async () => {
    const create = vi.fn(async () => ({ session_id: 'fresh-token' }));
    const id = await ensureSession(localStorage, create);
    expect(id).toBe('fresh-token');
    expect(create).toHaveBeenCalledTimes(1);
    expect(localStorage.getItem(SESSION_KEY)).toBe('fresh-token');
  });

  it('reuses the stored session without calling the server', async () => {
    localStorage.setItem(SESSION_KEY, 'existing');
    const create = vi.fn(async () => ({ session_id: 'unwanted' }));
    const id = await ensureSession(localStorage, create);
    expect(id).toBe('existing');
    expect(create).not.toHaveBeenCalled();
  });

  it('bootstraps again after forgetSession', async () => {
    localStorage.setItem(SESSION_KEY, 'stale');
    forgetSession(localStorage);
    const create = vi.fn(async () => ({ session_id: 'replacement' }));
    expect(await ensureSession(localStorage, create)).toBe('replacement');
  });
});

describe('deriveTitle', () => {
  it('passes short messages through', () => {
    expect(deriveTitle('How do I deposit?')).toBe('How do I deposit?');
  });

  it('collapses whitespace and trims', () => {
    expect(deriveTitle('  how\n\ndo I   deposit  ')).toBe('how do I deposit');
  });

  it('cuts at 60 characters', () => {
    const long = 'x'.repeat(80);
    expect(deriveTitle(long)).toBe('x'.repeat(60));
    expect(deriveTitle('y'.repeat(60))).toBe('y'.repeat(60));
  });

  it('falls back for empty input', () => {
    expect(deriveTitle('   ')).toBe('New thread');
  });
});

describe('ThreadState', () => {
  it('titles the thread from the first message only', () => {
    const thread = new ThreadState('t1');
    expect(thread.title).toBe('New thread');
    thread.noteFirstMessage('first question');
    expect(thread.title).toBe('first question');
    thread.transcript.push({ role: 'user', text: 'first question' });
    thread.noteFirstMessage('second question');
    expect(thread.title).toBe('first question');
  });

  it('starts idle with an empty transcript and nothing rateable', () => {
    const thread = new ThreadState('t2');
    expect(thread.streamState).toBe('idle');
    expect(thread.transcript).toEqual([]);
    expect(thread.rateableMessageId).toBeNull();
    expect(thread.rated).toBe(false);
  });
});
