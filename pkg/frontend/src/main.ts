// Wiring: fetch -> render -> keyboard. All state lives in the session
// view-model; the server is refetched after every verdict.

import { ApiError, ReviewApi } from './api.js';
import {
  clearError,
  currentTask,
  initialState,
  queueFinished,
  recordVerdict,
  skipTask,
  withFetchError,
  withServerState,
  withSubmitError,
  type SessionState,
} from './model.js';
import {
  renderCompletion,
  renderError,
  renderLoading,
  renderStats,
  renderTask,
} from './render.js';
import type { VerdictChoice } from './types.js';

const root = document.getElementById('app')!;
const api = new ReviewApi('');

function reviewerId(): string {
  const key = 'longprm-reviewer';
  let id = window.localStorage.getItem(key);
  if (!id) {
    id = window.prompt('Reviewer id?', 'reviewer-1') || 'reviewer-1';
    window.localStorage.setItem(key, id);
  }
  return id;
}

let state: SessionState = initialState(reviewerId());
let busy = false;

async function refresh(): Promise<void> {
  try {
    const [page, progress] = await Promise.all([
      api.fetchTasks(state.reviewer),
      api.fetchProgress(),
    ]);
    state = withServerState(clearError(state), page, progress);
  } catch (err) {
    state = withFetchError(state, describe(err));
  }
  await render();
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return err.message;
  return String(err);
}

async function render(): Promise<void> {
  const parts: string[] = [];
  if (state.error) parts.push(renderError(state.error));
  parts.push(renderStats(state));
  const task = currentTask(state);
  if (task) {
    parts.push(renderTask(task, state));
  } else if (state.progress && queueFinished(state)) {
    try {
      const accuracy = await api.fetchAccuracy();
      parts.push(renderCompletion(state.progress, accuracy));
    } catch (err) {
      parts.push(renderError(describe(err)));
    }
  } else {
    parts.push(renderLoading());
  }
  root.innerHTML = parts.join('\n');
  bind();
}

function bind(): void {
  document.getElementById('accept')?.addEventListener('click', () => submit('accepted'));
  document.getElementById('reject')?.addEventListener('click', () => submit('rejected'));
  document.getElementById('skip')?.addEventListener('click', () => skip());
  document.getElementById('retry')?.addEventListener('click', () => void refresh());
}

async function submit(choice: VerdictChoice): Promise<void> {
  const task = currentTask(state);
  if (!task || busy) return;
  busy = true;
  try {
    await api.submitVerdict(task.id, choice, state.reviewer);
    state = recordVerdict(state, choice);
    await refresh();
  } catch (err) {
    // never auto-retried: the choice stays in the form, the task does not advance
    state = withSubmitError(state, choice, describe(err));
    await render();
  } finally {
    busy = false;
  }
}

function skip(): void {
  state = skipTask(state);
  void render();
}

document.addEventListener('keydown', (event) => {
  if (event.target instanceof HTMLInputElement) return;
  if (event.key === 'a') void submit('accepted');
  else if (event.key === 'r') void submit('rejected');
  else if (event.key === 's') skip();
});

void refresh();
